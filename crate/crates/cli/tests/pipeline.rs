mod common;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use common::{bugloc, fails, ok, p};

const GRIDS: [(&str, &str); 3] = [
    ("lr", r#"{"C": [1, 10], "class_weight": ["balanced"]}"#),
    ("svm", r#"{"C": [1]}"#),
    ("rf", r#"{"n_trees": [10], "min_samples_leaf": [2]}"#),
];

struct Run {
    _dir: tempfile::TempDir,
    raw: PathBuf,
    out: PathBuf,
}

impl Run {
    fn args<'a>(&'a self, cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
        let mut a = vec![cmd, "--out", p(&self.out)];
        a.extend_from_slice(rest);
        a
    }

    fn ok(&self, cmd: &str, rest: &[&str]) -> Value {
        ok(&self.args(cmd, rest))
    }

    fn fails(&self, cmd: &str, rest: &[&str]) -> Value {
        fails(&self.args(cmd, rest))
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.out.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    fn grid_flags(&self) -> Vec<String> {
        GRIDS
            .iter()
            .flat_map(|(k, _)| ["--set".to_owned(), format!("grid.{k}={}", p(&self.raw.join(format!("grid_{k}.json"))))])
            .collect()
    }
}

/// synth → ingest → preprocess → split into a fresh directory.
fn prepared(seed: &str) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let out = dir.path().join("run");
    ok(&["synth", "--out", p(&raw), "--reports", "300", "--labels", "8", "--seed", seed]);
    for (k, g) in GRIDS {
        fs::write(raw.join(format!("grid_{k}.json")), g).unwrap();
    }
    let run = Run { _dir: dir, raw, out };
    let reports = run.raw.join("reports.csv");
    let mapping = run.raw.join("mapping.csv");
    run.ok("ingest", &["--reports", p(&reports), "--mapping", p(&mapping)]);
    run.ok("preprocess", &[]);
    run.ok("split", &["--ratios", "0.7,0.2,0.1", "--seed", "42"]);
    run
}

#[test]
fn stage_by_stage_pipeline() {
    let run = prepared("7");
    let ingest: Value = serde_json::from_str(&run.read("ingest_report.json")).unwrap();
    assert_eq!(ingest["input_reports"], 300);

    let stats = run.ok("stats", &[]);
    assert_eq!(stats["report_count"], ingest["output_reports"]);
    assert!(run.read("stats/label_counts.csv").starts_with("label,count\n"));
    assert!(run.read("stats/histogram.csv").starts_with("labels_per_report,reports\n1,"));

    let split: Value = serde_json::from_str(&run.read("split.json")).unwrap();
    assert_eq!(split["seed"], 42);
    assert_eq!(split["ratios_decimal"], serde_json::json!([0.7, 0.2, 0.1]));
    let n_train = split["train"].as_array().unwrap().len();
    let manifest: Value = serde_json::from_str(&run.read("manifests/split.json")).unwrap();
    let overrides = manifest["config"]["overrides"].as_array().unwrap();
    assert!(overrides.iter().any(|o| o["key"] == "split.ratios" && o["value"] == "0.7,0.2,0.1"));
    assert!(overrides.iter().any(|o| o["key"] == "seed" && o["value"] == "42"));
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let aug = run.ok("augment", &["--technique", "random_swap", "--scope", "full", "--factor", "1"]);
    assert_eq!(aug[0]["variant"], "rs_full");
    assert_eq!(aug[0]["rows"].as_u64().unwrap() as usize, 2 * n_train);
    assert_eq!(run.read("variants/rs_full.jsonl").lines().count(), 2 * n_train);
    let split: Value = serde_json::from_str(&run.read("split.json")).unwrap();
    let names: Vec<&str> = split["variants"].as_array().unwrap().iter().map(|v| v["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["original", "rs_full"]);

    run.ok("train", &["--model", "lr", "--variant", "rs_full"]);
    let eval = run.ok("evaluate", &["--model", "lr", "--variant", "rs_full", "--k", "1,3,5,10"]);
    assert_eq!(eval["split"], "test");
    let csv = run.read("metrics/lr_rs_full_test.csv");
    let rows: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        rows,
        ["metric", "Top-1", "Top-3", "Top-5", "Top-10", "Recall@1", "Recall@3", "Recall@5", "Recall@10", "MAP", "MRR"]
    );
    assert_eq!(csv.lines().next().unwrap(), "metric,lr_rs_full");

    let keyword = serde_json::from_str::<Value>(&run.read("corpus.jsonl").lines().next().unwrap().to_owned()).unwrap();
    let text = keyword["description"].as_str().unwrap();
    let bundle = run.out.join("models/lr_rs_full.json");
    let a = ok(&["predict", "--bundle", p(&bundle), "--title", "x", "--description", text, "--top-k", "5"]);
    let b = ok(&["predict", "--bundle", p(&bundle), "--title", "x", "--description", text, "--top-k", "5"]);
    assert_eq!(a, b);
    let ranking = a["ranking"].as_array().unwrap();
    assert_eq!(ranking.len(), 5);
    assert!(ranking.windows(2).all(|w| w[0]["score"].as_f64() >= w[1]["score"].as_f64()));

    let err = fails(&["predict", "--bundle", p(&bundle), "--title", "the", "--description", "of and"]);
    assert_eq!(err["kind"], "empty_text");
    assert!(err["message"].as_str().unwrap().contains("description"));
}

#[test]
fn tune_writes_bundle_and_selection_record() {
    let run = prepared("8");
    let mut args = vec!["--model", "lr"];
    let grid = run.grid_flags();
    args.extend(grid.iter().map(String::as_str));
    let s = run.ok("tune", &args);
    assert_eq!(s["candidates"], 2);
    let tuning: Value = serde_json::from_str(&run.read("models/lr_original.tuning.json")).unwrap();
    assert_eq!(tuning["results"].as_array().unwrap().len(), 2);
    assert!(tuning["selection_log"].as_array().unwrap().last().unwrap().as_str().unwrap().starts_with("selected"));
    let manifest: Value = serde_json::from_str(&run.read("manifests/tune_lr_original.json")).unwrap();
    let inputs: Vec<&str> = manifest["inputs"].as_array().unwrap().iter().map(|i| i["path"].as_str().unwrap()).collect();
    assert!(inputs.iter().any(|i| i.ends_with("grid_lr.json")), "{inputs:?}");
    assert!(inputs.iter().any(|i| i.ends_with("variants/original.jsonl")));
}

#[test]
fn stages_out_of_order_name_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let o = p(&out);
    let err = fails(&["evaluate", "--out", o, "--model", "svm"]);
    assert_eq!(err["kind"], "missing_artifact");
    assert!(err["message"].as_str().unwrap().contains("svm_original.json"), "{err}");

    let err = fails(&["train", "--out", o]);
    assert!(err["message"].as_str().unwrap().contains("variants/original.jsonl"), "{err}");
    assert!(err["message"].as_str().unwrap().contains("bugloc split"), "{err}");

    let err = fails(&["preprocess", "--out", o]);
    assert!(err["message"].as_str().unwrap().contains("corpus.jsonl"), "{err}");

    let err = fails(&["augment", "--out", o]);
    assert!(err["message"].as_str().unwrap().contains("split.json"), "{err}");

    let err = fails(&["benchmark", "--out", o]);
    assert_eq!(err["kind"], "missing_artifact");
}

#[test]
fn usage_and_config_errors_are_json() {
    let out = bugloc(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");

    let err = fails(&["split", "--ratios", "0.5,0.5,0.5"]);
    assert_eq!(err["kind"], "config");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "seed = 1\nmystery = 2\n").unwrap();
    let err = fails(&["stats", "--config", p(&cfg), "--histogram", "1:2"]);
    assert!(err["message"].as_str().unwrap().contains("line 2"), "{err}");

    assert!(bugloc(&["--help"]).status.success());
}

#[test]
fn stats_from_a_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(&["stats", "--out", p(dir.path()), "--histogram", "1:428,2:138,3:61,4:20,5:13"]);
    assert_eq!(s["report_count"], 660);
    assert_eq!(s["mean_display"], "1.56");
    assert_eq!(s["mean_exact"], "86/55");
}

fn benchmark_run(run: &Run, extra: &[&str]) -> Value {
    let grid = run.grid_flags();
    let mut args: Vec<&str> = grid.iter().map(String::as_str).collect();
    args.extend_from_slice(extra);
    run.ok("benchmark", &args)
}

#[test]
fn benchmark_is_reproducible_and_isolates_failures() {
    let a = prepared("11");
    let b = prepared("11");
    for r in [&a, &b] {
        r.ok("augment", &[]);
    }
    let ra = benchmark_run(&a, &[]);
    benchmark_run(&b, &[]);
    assert_eq!(ra["cells"].as_array().unwrap().len(), 15);
    for f in ["metrics.csv", "validation.csv", "best.csv"] {
        let (x, y) = (a.read(&format!("benchmark/{f}")), b.read(&format!("benchmark/{f}")));
        assert_eq!(x, y, "{f} differs between runs");
    }
    let header = a.read("benchmark/metrics.csv").lines().next().unwrap().to_owned();
    assert!(header.starts_with("metric,lr/original,lr/sr_full,lr/rs_full,lr/sr_targeted,lr/rs_targeted,svm/original"));
    let best = a.read("benchmark/best.csv");
    assert_eq!(best.lines().next().unwrap().split(',').count(), 4);

    let r = benchmark_run(&a, &["--models", "lr", "--variants", "original,missing_variant"]);
    let cells = r["cells"].as_array().unwrap();
    assert_eq!(cells[0]["status"], "ok");
    assert_eq!(cells[1]["status"], "failed");
    assert!(cells[1]["error"].as_str().unwrap().contains("missing_variant"));
    assert!(a.read("benchmark/metrics.csv").lines().nth(1).unwrap().ends_with(",failed"));

    let err = a.fails("benchmark", &["--variants", ""]);
    assert!(err["message"].as_str().unwrap().contains("variant list is empty"));
}

#[test]
fn dense_features_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let out = dir.path().join("run");
    ok(&["synth", "--out", p(&raw), "--reports", "200", "--labels", "6", "--vector-dim", "12"]);
    let vectors = raw.join("vectors.csv");
    let reports = raw.join("reports.csv");
    let base = |cmd: &'static str| vec![cmd, "--out", p(&out)];
    let mut a = base("ingest");
    a.extend(["--reports", p(&reports)]);
    ok(&a);
    ok(&base("preprocess"));
    ok(&base("split"));
    ok(&base("augment"));
    let mut t = base("train");
    t.extend(["--model", "svm", "--variant", "sr_targeted", "--features", "dense", "--vectors", p(&vectors)]);
    let s = ok(&t);
    assert_eq!(s["feature_kind"], "dense");
    assert_eq!(s["dim"], 12);
    let mut e = base("evaluate");
    e.extend(["--model", "svm", "--variant", "sr_targeted", "--vectors", p(&vectors)]);
    let m = ok(&e);
    assert!(m["metrics"]["map"].as_f64().unwrap() > 0.0);
    let bundle = out.join("models/svm_sr_targeted.json");
    let err = fails(&["predict", "--bundle", p(&bundle), "--description", "x"]);
    assert_eq!(err["kind"], "unsupported_bundle");
    assert!(Path::new(&out.join("manifests/evaluate_svm_sr_targeted_test.json")).exists());
}
