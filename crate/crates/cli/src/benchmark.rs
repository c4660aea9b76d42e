//! Models × variants benchmark.
//!
//! Every cell tunes on its variant's training rows by cross-validation,
//! refits, scores the validation split once and the test split once. Cells
//! run in parallel; results are gathered in (model, variant) order so the
//! written tables do not depend on scheduling. The best variant per model
//! family is the one with the highest validation MAP, first in variant order
//! on ties; the test split never influences a choice.

use bugloc_core::evalrank::{evaluate, metric_rows};
use bugloc_core::models::ModelKind;
use bugloc_core::{Metrics, Vectors};
use bugloc_core::datasplit::LabelSpace;
use bugloc_core::textprep::ProcessedReport;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::artifacts::{write_bytes, write_json};
use crate::commands::{tune_variant, Ctx};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: ModelKind,
    pub variant: String,
    pub status: CellStatus,
    pub error: Option<String>,
    pub best_params: Option<Map<String, Value>>,
    pub cv_map: Option<f64>,
    pub validation: Option<Metrics>,
    pub test: Option<Metrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}/{}", self.model, self.variant)
    }

    fn failed(model: ModelKind, variant: &str, e: CliError) -> Self {
        Cell {
            model,
            variant: variant.to_owned(),
            status: CellStatus::Failed,
            error: Some(e.to_string()),
            best_params: None,
            cv_map: None,
            validation: None,
            test: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub models: Vec<ModelKind>,
    pub variants: Vec<String>,
    pub ks: Vec<usize>,
    pub cells: Vec<Cell>,
    /// Index into `cells` of each family's best cell, in `models` order.
    pub best: Vec<Option<usize>>,
}

struct Shared<'a> {
    space: LabelSpace,
    val: Vec<ProcessedReport>,
    test: Vec<ProcessedReport>,
    vectors: Option<&'a Vectors>,
}

fn run_cell(ctx: &Ctx, shared: &Shared<'_>, model: ModelKind, variant: &str) -> CliResult<Cell> {
    let rows = ctx.variant(variant)?;
    let tuned = tune_variant(ctx, model, &rows, Some(&shared.val), &shared.space, shared.vectors)?;
    let ks = &ctx.cfg.ks;
    let g = &tuned.grid;
    // validation is scored with the train-only refit, so selection never sees val labels in training
    let validation = evaluate(&g.model, &g.features, &shared.val, shared.vectors, ks)?;
    let test = evaluate(&tuned.model, &tuned.features, &shared.test, shared.vectors, ks)?;
    Ok(Cell {
        model,
        variant: variant.to_owned(),
        status: CellStatus::Ok,
        error: None,
        best_params: Some(g.best().candidate.params.clone()),
        cv_map: Some(g.best().mean_map),
        validation: Some(validation.metrics),
        test: Some(test.metrics),
    })
}

/// Index of the best successful cell for `model`: highest validation MAP,
/// earliest on ties.
pub fn best_cell(cells: &[Cell], model: ModelKind) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in cells.iter().enumerate() {
        if c.model != model {
            continue;
        }
        if let Some(v) = &c.validation {
            if best.is_none_or(|(_, m)| v.map_score > m) {
                best = Some((i, v.map_score));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn metric_value(m: &Metrics, ks: &[usize], row: usize) -> Option<f64> {
    if row < ks.len() {
        m.hit_at.get(&ks[row]).copied()
    } else if row < 2 * ks.len() {
        m.recall_at.get(&ks[row - ks.len()]).copied()
    } else if row == 2 * ks.len() {
        Some(m.map_score)
    } else {
        Some(m.mrr)
    }
}

/// Metric rows × named columns; failed columns read `failed`.
pub fn table_csv(columns: &[(String, Option<&Metrics>)], ks: &[usize]) -> String {
    let mut out = String::from("metric");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, row) in metric_rows(ks).into_iter().enumerate() {
        out.push_str(&row);
        for (_, m) in columns {
            out.push(',');
            match m {
                Some(m) => {
                    if let Some(v) = metric_value(m, ks, i) {
                        out.push_str(&format!("{v:.4}"));
                    }
                }
                None => out.push_str("failed"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn benchmark(ctx: &Ctx) -> CliResult<BenchmarkReport> {
    let cfg = &ctx.cfg;
    if cfg.variants.is_empty() {
        return Err(CliError::config("the variant list is empty; set `variants` to at least one training variant"));
    }
    if cfg.models.is_empty() {
        return Err(CliError::config("the model list is empty"));
    }
    let vectors = ctx.vectors()?;
    let shared = Shared {
        space: ctx.label_space()?,
        val: ctx.partition("val")?,
        test: ctx.partition("test")?,
        vectors: vectors.as_ref(),
    };
    let jobs: Vec<(ModelKind, &str)> = cfg
        .models
        .iter()
        .flat_map(|&m| cfg.variants.iter().map(move |v| (m, v.as_str())))
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(m, v)| run_cell(ctx, &shared, m, v).unwrap_or_else(|e| Cell::failed(m, v, e)))
        .collect();
    let best = cfg.models.iter().map(|&m| best_cell(&cells, m)).collect();
    let report = BenchmarkReport {
        models: cfg.models.clone(),
        variants: cfg.variants.clone(),
        ks: cfg.ks.clone(),
        cells,
        best,
    };
    write_outputs(ctx, &report)?;
    if report.cells.iter().all(|c| c.status == CellStatus::Failed) {
        return Err(CliError::new(
            "benchmark_failed",
            format!("every cell failed; first error: {}", report.cells[0].error.as_deref().unwrap_or("")),
        ));
    }
    Ok(report)
}

fn column<'a>(c: &'a Cell, m: Option<&'a Metrics>) -> (String, Option<&'a Metrics>) {
    (c.name(), if c.status == CellStatus::Ok { m } else { None })
}

fn write_outputs(ctx: &Ctx, report: &BenchmarkReport) -> CliResult<()> {
    let dir = ctx.layout.benchmark_dir();
    let ks = &report.ks;
    let test: Vec<_> = report.cells.iter().map(|c| column(c, c.test.as_ref())).collect();
    let val: Vec<_> = report.cells.iter().map(|c| column(c, c.validation.as_ref())).collect();
    let best: Vec<_> = report
        .best
        .iter()
        .filter_map(|b| b.map(|i| &report.cells[i]))
        .map(|c| column(c, c.test.as_ref()))
        .collect();
    let files = [
        ("metrics.csv", table_csv(&test, ks)),
        ("validation.csv", table_csv(&val, ks)),
        ("best.csv", table_csv(&best, ks)),
    ];
    let mut m = crate::manifest::RunManifest::new("benchmark", &ctx.cfg);
    let l = &ctx.layout;
    for name in ["train", "val", "test"] {
        m.input(&l.partition(name))?;
    }
    for v in &report.variants {
        if l.variant(v).exists() {
            m.input(&l.variant(v))?;
        }
    }
    m.input(&l.preprocess_config())?;
    for &k in &report.models {
        m.input_opt(ctx.cfg.grid_path(k))?;
    }
    if ctx.cfg.features == bugloc_core::features::FeatureKind::Dense {
        m.input_opt(ctx.cfg.vectors.as_deref())?;
    }
    for (name, body) in &files {
        write_bytes(&dir.join(name), body.as_bytes())?;
        m.output(&dir.join(name))?;
    }
    write_json(&dir.join("report.json"), report)?;
    m.output(&dir.join("report.json"))?;
    m.details = json!({
        "best": report.best.iter().zip(&report.models).map(|(b, k)| json!({
            "model": k,
            "cell": b.map(|i| report.cells[i].name()),
        })).collect::<Vec<_>>(),
        "failed": report.cells.iter().filter(|c| c.status == CellStatus::Failed).map(Cell::name).collect::<Vec<_>>(),
    });
    m.write(&l.manifest("benchmark"))
}
