//! Pipeline stages. Each reads its inputs from files, writes its outputs and a
//! manifest, and returns a short JSON summary for stdout.

use std::collections::BTreeMap;

use bugloc_core::augment::{
    augment_training_set, check_variant_label_space, AugmentPlan, Scope, Technique, Thesaurus, TrainingSet,
    ORIGINAL_VARIANT,
};
use bugloc_core::corpus::{build_corpus, corpus_stats, load_reports, CorpusStats, LabeledExample, PathMapping, ReportFormat};
use bugloc_core::datasplit::{fit_label_space, iterative_stratified_split, LabelSpace, SplitManifest, VariantRecord};
use bugloc_core::evalrank::{
    evaluate, fit_pipeline, grid_search, metrics_table_csv, FeatureInput, Grid, GridResult, TuneOptions,
};
use bugloc_core::features::{read_dense_vectors, FeatureKind, FittedFeatures};
use bugloc_core::models::{load_model, save_model, HyperParams, ModelKind, OvrModel};
use bugloc_core::textprep::{preprocess_corpus, CleaningReason, CleaningRecord, PreprocessConfig, ProcessedReport};
use bugloc_core::{Bundle, Vectors};
use serde::Serialize;
use serde_json::{json, Value};

use crate::artifacts::{read_json, read_jsonl, require, write_bytes, write_json, write_jsonl, Layout};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const PARTITIONS: [&str; 3] = ["train", "val", "test"];

/// Shared state for one command invocation.
pub struct Ctx {
    pub cfg: RunConfig,
    pub layout: Layout,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> CliResult<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg.out.clone());
        Ok(Ctx { cfg, layout })
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, &self.cfg)
    }

    fn preprocess_config(&self) -> CliResult<PreprocessConfig> {
        let path = self.layout.preprocess_config();
        require(&path, "preprocess")?;
        read_json(&path)
    }

    /// Dense vectors when the run uses dense features.
    pub fn vectors(&self) -> CliResult<Option<Vectors>> {
        match self.cfg.features {
            FeatureKind::Tfidf => Ok(None),
            FeatureKind::Dense => {
                let path = self.cfg.vectors.as_deref().ok_or_else(|| {
                    CliError::config("dense features need a vector file; set `vectors` or pass --vectors")
                })?;
                Ok(Some(read_dense_vectors(path)?))
            }
        }
    }

    pub fn feature_input<'a>(&self, vectors: Option<&'a Vectors>) -> FeatureInput<'a, f64> {
        match vectors {
            Some(v) => FeatureInput::Dense(v),
            None => FeatureInput::Tfidf(self.cfg.tfidf),
        }
    }

    pub fn partition(&self, name: &str) -> CliResult<Vec<ProcessedReport>> {
        let path = self.layout.partition(name);
        require(&path, "split")?;
        read_jsonl(&path)
    }

    /// Training rows of a variant; `original` is written by `split`.
    pub fn variant(&self, name: &str) -> CliResult<Vec<ProcessedReport>> {
        let path = self.layout.variant(name);
        let producer = if name == ORIGINAL_VARIANT { "split" } else { "augment" };
        require(&path, producer)?;
        read_jsonl(&path)
    }

    /// Label space fitted on the original training partition.
    pub fn label_space(&self) -> CliResult<LabelSpace> {
        Ok(fit_label_space(&self.partition("train")?)?)
    }

    fn record_vectors(&self, m: &mut RunManifest) -> CliResult<()> {
        if self.cfg.features == FeatureKind::Dense {
            m.input_opt(self.cfg.vectors.as_deref())?;
        }
        Ok(())
    }

    /// Variant rows, plus validation rows when refitting on train + val.
    fn fit_rows(&self, variant: &str, m: &mut RunManifest) -> CliResult<Vec<ProcessedReport>> {
        let mut rows = self.variant(variant)?;
        m.input(&self.layout.variant(variant))?;
        if self.cfg.refit_train_val {
            rows.extend(self.partition("val")?);
            m.input(&self.layout.partition("val"))?;
        }
        Ok(rows)
    }
}

fn summary<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("summary serializes")
}

pub fn ingest(ctx: &Ctx, format: Option<ReportFormat>) -> CliResult<Value> {
    let cfg = &ctx.cfg;
    let path = cfg
        .reports
        .as_deref()
        .ok_or_else(|| CliError::config("no report file; pass --reports or set `reports`"))?;
    let format = format
        .or_else(|| ReportFormat::from_path(path))
        .ok_or_else(|| CliError::config(format!("cannot infer the format of {}; pass --format", path.display())))?;
    let reports = load_reports(path, format)?;
    let mapping = match &cfg.mapping {
        Some(p) => PathMapping::load(p)?,
        None => PathMapping::default(),
    };
    let (corpus, report) = build_corpus(&reports, &mapping, cfg.max_labels, cfg.min_label_occurrence);
    let l = &ctx.layout;
    write_jsonl(&l.corpus(), &corpus)?;
    write_json(&l.ingest_report(), &report)?;

    let mut m = ctx.manifest("ingest");
    m.input(path)?;
    m.input_opt(cfg.mapping.as_deref())?;
    m.output(&l.corpus())?;
    m.output(&l.ingest_report())?;
    m.details = summary(&report);
    m.write(&l.manifest("ingest"))?;
    Ok(summary(&report))
}

/// Parses `1:428,2:138,...` into a labels-per-report histogram.
pub fn parse_histogram(text: &str) -> CliResult<BTreeMap<usize, usize>> {
    let mut h = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || CliError::config(format!("histogram entry `{part}` is not `labels:reports`"));
        let (k, v) = part.split_once(':').ok_or_else(bad)?;
        let k: usize = k.trim().parse().map_err(|_| bad())?;
        let v: usize = v.trim().parse().map_err(|_| bad())?;
        if h.insert(k, v).is_some() {
            return Err(CliError::config(format!("histogram repeats {k}")));
        }
    }
    Ok(h)
}

pub fn stats_summary(stats: &CorpusStats) -> Value {
    let mut s = stats.summary_json();
    s["mean_display"] = json!(stats.mean_display());
    s["mean_exact"] = json!(stats.mean_labels_per_report.map(|r| r.to_string()));
    s
}

pub fn stats(ctx: &Ctx, histogram: Option<&str>) -> CliResult<Value> {
    let l = &ctx.layout;
    let mut m = ctx.manifest("stats");
    let stats = match histogram {
        Some(h) => CorpusStats::from_histogram(parse_histogram(h)?),
        None => {
            require(&l.corpus(), "ingest")?;
            m.input(&l.corpus())?;
            corpus_stats(&read_jsonl::<LabeledExample>(&l.corpus())?)
        }
    };
    let dir = l.stats_dir();
    let mut labels = Vec::new();
    stats.write_label_csv(&mut labels)?;
    let mut hist = String::from("labels_per_report,reports\n");
    for (k, v) in &stats.histogram {
        hist.push_str(&format!("{k},{v}\n"));
    }
    let s = stats_summary(&stats);
    write_bytes(&dir.join("label_counts.csv"), &labels)?;
    write_bytes(&dir.join("histogram.csv"), hist.as_bytes())?;
    write_json(&dir.join("summary.json"), &s)?;
    for f in ["label_counts.csv", "histogram.csv", "summary.json"] {
        m.output(&dir.join(f))?;
    }
    m.details = s.clone();
    m.write(&l.manifest("stats"))?;
    Ok(s)
}

pub fn preprocess(ctx: &Ctx) -> CliResult<Value> {
    let (cfg, l) = (&ctx.cfg, &ctx.layout);
    require(&l.corpus(), "ingest")?;
    let corpus: Vec<LabeledExample> = read_jsonl(&l.corpus())?;
    let mut pre = PreprocessConfig::from_files(
        cfg.templates.as_deref(),
        cfg.stopwords.as_deref(),
        cfg.lemma_exceptions.as_deref(),
    )?;
    pre.decamel = cfg.decamel;
    let (kept, removed) = preprocess_corpus(&corpus, &pre);
    write_jsonl(&l.processed(), &kept)?;
    write_jsonl(&l.cleaning(), &removed)?;
    write_json(&l.preprocess_config(), &pre)?;

    let count = |reason| removed.iter().filter(|r: &&CleaningRecord| r.reason == reason).count();
    let s = json!({
        "input_reports": corpus.len(),
        "kept": kept.len(),
        "removed_empty_description": count(CleaningReason::EmptyDescription),
        "removed_empty_tokens": count(CleaningReason::EmptyTokens),
    });
    let mut m = ctx.manifest("preprocess");
    m.input(&l.corpus())?;
    for p in [&cfg.templates, &cfg.stopwords, &cfg.lemma_exceptions] {
        m.input_opt(p.as_deref())?;
    }
    for p in [l.processed(), l.cleaning(), l.preprocess_config()] {
        m.output(&p)?;
    }
    m.details = s.clone();
    m.write(&l.manifest("preprocess"))?;
    Ok(s)
}

pub fn split(ctx: &Ctx) -> CliResult<Value> {
    let (cfg, l) = (&ctx.cfg, &ctx.layout);
    require(&l.processed(), "preprocess")?;
    let corpus: Vec<ProcessedReport> = read_jsonl(&l.processed())?;
    let result = iterative_stratified_split(&corpus, &cfg.split)?;
    let mut sm = result.manifest(&cfg.split);
    sm.variants.push(VariantRecord {
        name: ORIGINAL_VARIANT.into(),
        file: format!("variants/{ORIGINAL_VARIANT}.jsonl"),
        rows: result.train.len(),
    });
    for (name, rows) in PARTITIONS.iter().zip([&result.train, &result.val, &result.test]) {
        write_jsonl(&l.partition(name), rows)?;
    }
    write_jsonl(&l.variant(ORIGINAL_VARIANT), &result.train)?;
    write_json(&l.split_manifest(), &sm)?;

    let s = json!({
        "seed": sm.seed,
        "ratios": sm.ratios_decimal,
        "train": result.train.len(),
        "val": result.val.len(),
        "test": result.test.len(),
        "labels": result.label_space.len(),
        "out_of_space_labels": result.out_of_space_labels,
    });
    let mut m = ctx.manifest("split");
    m.input(&l.processed())?;
    m.output(&l.split_manifest())?;
    for name in PARTITIONS {
        m.output(&l.partition(name))?;
    }
    m.output(&l.variant(ORIGINAL_VARIANT))?;
    m.details = json!({ "summary": s, "split": sm });
    m.write(&l.manifest("split"))?;
    Ok(s)
}

/// Plans for the requested technique/scope; an absent choice means both.
pub fn augment_plans(ctx: &Ctx, technique: Option<Technique>, scope: Option<Scope>) -> Vec<AugmentPlan> {
    let techniques = technique.map_or(vec![Technique::SynonymReplacement, Technique::RandomSwap], |t| vec![t]);
    let scopes = scope.map_or(vec![Scope::Full, Scope::Targeted], |s| vec![s]);
    let mut plans = Vec::new();
    for &s in &scopes {
        for &t in &techniques {
            let mut p = AugmentPlan::new(t, s, ctx.cfg.seed);
            p.target_threshold = ctx.cfg.augment_threshold;
            p.factor = ctx.cfg.augment_factor;
            p.edit_rate = ctx.cfg.augment_edit_rate;
            plans.push(p);
        }
    }
    plans
}

pub fn augment(ctx: &Ctx, plans: &[AugmentPlan]) -> CliResult<Value> {
    let (cfg, l) = (&ctx.cfg, &ctx.layout);
    require(&l.split_manifest(), "split")?;
    let mut sm: SplitManifest = read_json(&l.split_manifest())?;
    let train = TrainingSet::from_train_partition(ctx.partition("train")?);
    let space = fit_label_space(train.reports())?;
    let thesaurus = match &cfg.thesaurus {
        Some(p) => Thesaurus::load(p)?,
        None => Thesaurus::embedded(),
    };
    let counts = train.label_counts();
    let mut m = ctx.manifest("augment");
    m.input(&l.partition("train"))?;
    m.input_opt(cfg.thesaurus.as_deref())?;
    let mut out = Vec::new();
    for plan in plans {
        let (set, report) = augment_training_set(&train, plan, &thesaurus, &counts)?;
        check_variant_label_space(&set, &space)?;
        let name = plan.variant_name();
        let path = l.variant(&name);
        write_jsonl(&path, set.reports())?;
        m.output(&path)?;
        sm.variants.retain(|v| v.name != name);
        sm.variants.push(VariantRecord {
            name: name.clone(),
            file: format!("variants/{name}.jsonl"),
            rows: set.reports().len(),
        });
        out.push(json!({ "variant": name, "plan": plan, "rows": set.reports().len(), "report": report }));
    }
    write_json(&l.split_manifest(), &sm)?;
    m.output(&l.split_manifest())?;
    let s = Value::Array(out);
    m.details = s.clone();
    let names: Vec<String> = plans.iter().map(AugmentPlan::variant_name).collect();
    m.write(&l.manifest(&format!("augment_{}", names.join("+"))))?;
    Ok(s)
}

fn save_bundle(ctx: &Ctx, kind: ModelKind, variant: &str, features: FittedFeatures<f64>, model: OvrModel<f64>) -> CliResult<Bundle> {
    let bundle = Bundle::new(model, features, ctx.preprocess_config()?)?;
    let path = ctx.layout.model(kind, variant);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    save_model(&bundle, &path)?;
    Ok(bundle)
}

fn model_summary(b: &Bundle) -> Value {
    json!({
        "kind": b.model.kind,
        "hyper": b.model.hyper,
        "labels": b.model.n_labels(),
        "dim": b.model.dim,
        "feature_kind": b.model.feature_kind,
        "notes": b.model.notes,
    })
}

pub fn train(ctx: &Ctx, kind: ModelKind, variant: &str) -> CliResult<Value> {
    let l = &ctx.layout;
    let mut m = ctx.manifest("train");
    let rows = ctx.fit_rows(variant, &mut m)?;
    let space = ctx.label_space()?;
    let vectors = ctx.vectors()?;
    let hyper = HyperParams::default_for(kind, ctx.cfg.seed);
    let (features, model) = fit_pipeline(&rows, &space, &ctx.feature_input(vectors.as_ref()), &hyper)?;
    let bundle = save_bundle(ctx, kind, variant, features, model)?;
    m.input(&l.partition("train"))?;
    m.input(&l.preprocess_config())?;
    ctx.record_vectors(&mut m)?;
    m.output(&l.model(kind, variant))?;
    let s = model_summary(&bundle);
    m.details = s.clone();
    m.write(&l.manifest(&format!("train_{kind}_{variant}")))?;
    Ok(s)
}

pub fn load_grid(ctx: &Ctx, kind: ModelKind) -> CliResult<Grid> {
    match ctx.cfg.grid_path(kind) {
        Some(p) => Ok(Grid::load(p)?),
        None => Ok(Grid::default_for(kind)),
    }
}

/// Outcome of a grid search and the model that goes on to the test split.
pub struct Tuned {
    pub grid: GridResult<f64>,
    /// Refit on train + val when configured, otherwise the grid's own refit.
    pub features: FittedFeatures<f64>,
    pub model: OvrModel<f64>,
}

/// Grid search on a variant's training rows, then the optional train + val refit.
pub fn tune_variant(
    ctx: &Ctx,
    kind: ModelKind,
    rows: &[ProcessedReport],
    val: Option<&[ProcessedReport]>,
    space: &LabelSpace,
    vectors: Option<&Vectors>,
) -> CliResult<Tuned> {
    let grid = load_grid(ctx, kind)?;
    let input = ctx.feature_input(vectors);
    let opts = TuneOptions {
        k: ctx.cfg.cv_folds,
        seed: ctx.cfg.seed,
    };
    let result = grid_search(&grid, kind, rows, space, &input, &opts, None)?;
    let (features, model) = match val {
        Some(val) if ctx.cfg.refit_train_val => {
            let best = &result.best().candidate;
            let input = match (&input, best.tfidf) {
                (FeatureInput::Tfidf(_), Some(cfg)) => FeatureInput::Tfidf(cfg),
                (other, _) => other.clone(),
            };
            let all: Vec<ProcessedReport> = rows.iter().chain(val).cloned().collect();
            fit_pipeline(&all, space, &input, &best.hyper)?
        }
        _ => (result.features.clone(), result.model.clone()),
    };
    Ok(Tuned {
        grid: result,
        features,
        model,
    })
}

pub fn tuning_record(kind: ModelKind, variant: &str, g: &GridResult<f64>) -> Value {
    json!({
        "kind": kind,
        "variant": variant,
        "candidates": g.results.len(),
        "best_index": g.best_index,
        "best_params": g.best().candidate.params,
        "best_cv_map": g.best().mean_map,
        "results": g.results.iter().map(|r| json!({
            "params": r.candidate.params,
            "fold_map": r.fold_map,
            "mean_map": r.mean_map,
            "failure": r.failure,
        })).collect::<Vec<_>>(),
        "selection_log": g.selection_log,
    })
}

pub fn tune(ctx: &Ctx, kind: ModelKind, variant: &str) -> CliResult<Value> {
    let l = &ctx.layout;
    let mut m = ctx.manifest("tune");
    let rows = ctx.variant(variant)?;
    m.input(&l.variant(variant))?;
    let space = ctx.label_space()?;
    let val = if ctx.cfg.refit_train_val {
        m.input(&l.partition("val"))?;
        Some(ctx.partition("val")?)
    } else {
        None
    };
    let vectors = ctx.vectors()?;
    let tuned = tune_variant(ctx, kind, &rows, val.as_deref(), &space, vectors.as_ref())?;
    let record = tuning_record(kind, variant, &tuned.grid);
    save_bundle(ctx, kind, variant, tuned.features, tuned.model)?;
    write_json(&l.tuning(kind, variant), &record)?;
    m.input(&l.partition("train"))?;
    m.input(&l.preprocess_config())?;
    ctx.record_vectors(&mut m)?;
    m.input_opt(ctx.cfg.grid_path(kind))?;
    m.output(&l.model(kind, variant))?;
    m.output(&l.tuning(kind, variant))?;
    let s = json!({
        "kind": kind,
        "variant": variant,
        "candidates": tuned.grid.results.len(),
        "best_params": tuned.grid.best().candidate.params,
        "best_cv_map": tuned.grid.best().mean_map,
        "refit_train_val": ctx.cfg.refit_train_val,
    });
    m.details = s.clone();
    m.write(&l.manifest(&format!("tune_{kind}_{variant}")))?;
    Ok(s)
}

pub fn evaluate_cmd(ctx: &Ctx, kind: ModelKind, variant: &str, split: &str) -> CliResult<Value> {
    let l = &ctx.layout;
    if !matches!(split, "val" | "test") {
        return Err(CliError::usage(format!("--split must be val or test, got `{split}`")));
    }
    let bundle_path = l.model(kind, variant);
    if !bundle_path.exists() {
        return Err(CliError::new(
            "missing_artifact",
            format!(
                "missing artifact {}; run `bugloc train` or `bugloc tune` for {kind}/{variant} first",
                bundle_path.display()
            ),
        ));
    }
    let bundle: Bundle = load_model(&bundle_path)?;
    let reports = ctx.partition(split)?;
    let vectors = match bundle.features.kind() {
        FeatureKind::Tfidf => None,
        FeatureKind::Dense => {
            let path = ctx.cfg.vectors.as_deref().ok_or_else(|| {
                CliError::config("this bundle uses dense features; pass --vectors")
            })?;
            Some(read_dense_vectors::<f64>(path)?)
        }
    };
    let eval = evaluate(&bundle.model, &bundle.features, &reports, vectors.as_ref(), &ctx.cfg.ks)?;
    let name = format!("{kind}_{variant}");
    let csv = metrics_table_csv(&[(name, eval.metrics.clone())], &ctx.cfg.ks)?;
    let json_path = l.metrics(kind, variant, split, "json");
    let csv_path = l.metrics(kind, variant, split, "csv");
    let pred_path = l.metrics(kind, variant, &format!("{split}_predictions"), "jsonl");
    let s = json!({
        "kind": kind,
        "variant": variant,
        "split": split,
        "metrics": eval.metrics,
        "out_of_space_labels": eval.out_of_space_labels,
    });
    write_json(&json_path, &s)?;
    write_bytes(&csv_path, csv.as_bytes())?;
    write_jsonl(&pred_path, &eval.predictions)?;

    let mut m = ctx.manifest("evaluate");
    m.input(&bundle_path)?;
    m.input(&l.partition(split))?;
    if bundle.features.kind() == FeatureKind::Dense {
        m.input_opt(ctx.cfg.vectors.as_deref())?;
    }
    for p in [&json_path, &csv_path, &pred_path] {
        m.output(p)?;
    }
    m.details = s.clone();
    m.write(&l.manifest(&format!("evaluate_{kind}_{variant}_{split}")))?;
    Ok(s)
}
