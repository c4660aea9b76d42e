//! Writes a planted-signal corpus as raw input files for demos and tests.

use std::path::Path;

use bugloc_core::corpus::CSV_COLUMNS;
use bugloc_core::datasplit::seeded_rng;
use bugloc_core::synth::{planted_bug_reports, planted_corpus, PlantedCorpus, PlantedSpec};
use rand::Rng;
use serde_json::{json, Value};

use crate::artifacts::write_bytes;
use crate::error::CliResult;

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub reports: usize,
    pub labels: usize,
    pub alpha: f64,
    pub seed: u64,
    /// 0 writes no vector file
    pub vector_dim: usize,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Dense vectors in which each keyword adds its own random direction on top
/// of uniform noise, so dense features carry the same planted signal.
fn planted_vectors(corpus: &PlantedCorpus, dim: usize, seed: u64) -> String {
    let mut rng = seeded_rng(seed ^ 0x5eed_0f_7ec7);
    let dirs: Vec<Vec<f64>> = corpus
        .keywords
        .iter()
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut out = String::from("id");
    for j in 0..dim {
        out.push_str(&format!(",v{j}"));
    }
    out.push('\n');
    for r in &corpus.reports {
        let mut v: Vec<f64> = (0..dim).map(|_| 0.3 * rng.random_range(-1.0..1.0)).collect();
        for (kw, d) in corpus.keywords.iter().zip(&dirs) {
            if r.tokens.contains(kw) {
                v.iter_mut().zip(d).for_each(|(a, b)| *a += b);
            }
        }
        out.push_str(&r.report_id);
        for x in v {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    out
}

pub fn synth(out: &Path, opts: &SynthOptions) -> CliResult<Value> {
    let spec = PlantedSpec::pareto(opts.reports, opts.labels, opts.alpha, opts.seed);
    let corpus = planted_corpus(&spec);
    let reports = planted_bug_reports(&corpus);

    let mut csv = CSV_COLUMNS.join(",");
    csv.push('\n');
    for r in &reports {
        let prio = r.priority.map(|p| p.to_string()).unwrap_or_default();
        let row = [
            r.date.clone(),
            r.id.clone(),
            r.title.clone(),
            prio,
            r.description.clone(),
            r.paths.join(", "),
        ];
        csv.push_str(&row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    // one curated entry per label: its first implementation file
    let mut mapping = String::from("File,Occ.,Label\n");
    for j in 0..spec.n_labels() {
        let label = bugloc_core::synth::label_name(j);
        if let Some(p) = reports.iter().flat_map(|r| &r.paths).find(|p| p.starts_with(&label)) {
            mapping.push_str(&format!("{},1,{label}\n", csv_field(p)));
        }
    }
    write_bytes(&out.join("reports.csv"), csv.as_bytes())?;
    write_bytes(&out.join("mapping.csv"), mapping.as_bytes())?;
    let mut files = vec!["reports.csv", "mapping.csv"];
    if opts.vector_dim > 0 {
        write_bytes(&out.join("vectors.csv"), planted_vectors(&corpus, opts.vector_dim, opts.seed).as_bytes())?;
        files.push("vectors.csv");
    }
    Ok(json!({
        "reports": reports.len(),
        "labels": spec.n_labels(),
        "keywords": corpus.keywords,
        "files": files,
    }))
}
