//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line straight to
//! stderr (bypassing the harness capture) and then asserts the criterion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use bugloc_core::augment::{augment_training_set, source_id, AugmentPlan, Scope, Technique, Thesaurus, TrainingSet};
use bugloc_core::corpus::{build_corpus, BugReport, CorpusStats, PathMapping};
use bugloc_core::datasplit::{fit_label_space, iterative_stratified_split, seeded_rng, LabelSpace, SplitSpec};
use bugloc_core::evalrank::{
    aggregate, average_precision, evaluate, fit_pipeline, grid_search, hit_at_k, recall_at_k, reciprocal_rank,
    FeatureInput, FoldContext, Grid, TuneOptions,
};
use bugloc_core::features::{DenseVectors, FeatureMatrix, FeatureSource, FittedFeatures, TfidfConfig, TfidfModel};
use bugloc_core::models::linear::{fit_logistic, LogisticObjective};
use bugloc_core::models::{rank_indices, ForestParams, HyperParams, LinearParams, ModelKind};
use bugloc_core::synth::{label_name, planted_corpus, PlantedSpec};
use bugloc_core::textprep::{PreprocessConfig, ProcessedReport};
use bugloc_core::{Bundle, ExactMetrics, Features, Model};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;

use bugloc_cli::predict::Predictor;
use bugloc_cli::serve::{serve, DEFAULT_ADDR};

fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn set(labels: &[&str]) -> BTreeSet<String> {
    labels.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------- metrics

fn brute_hit(ranking: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut hit = 0.0;
    for (pos, l) in ranking.iter().enumerate() {
        for t in truth {
            if pos < k && l == t {
                hit = 1.0;
            }
        }
    }
    hit
}

fn brute_recall(ranking: &[usize], truth: &[usize], k: usize) -> f64 {
    let found = truth.iter().filter(|t| ranking.iter().take(k).any(|l| l == *t)).count();
    found as f64 / truth.len() as f64
}

fn brute_ap(ranking: &[usize], truth: &[usize]) -> f64 {
    let mut sum = 0.0;
    for r in 1..=ranking.len() {
        if truth.contains(&ranking[r - 1]) {
            let rel_in_prefix = ranking[..r].iter().filter(|l| truth.contains(l)).count();
            sum += rel_in_prefix as f64 / r as f64;
        }
    }
    sum / truth.len() as f64
}

fn brute_rr(ranking: &[usize], truth: &[usize]) -> f64 {
    let best = truth.iter().filter_map(|t| ranking.iter().position(|l| l == t)).min();
    best.map_or(0.0, |r| 1.0 / (r + 1) as f64)
}

#[test]
fn metric_oracle_agreement() {
    let start = Instant::now();
    let mut rng = seeded_rng(2024);
    let ks = [1usize, 3, 5, 10];
    let mut worst = 0.0f64;
    let mut cases: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for _ in 0..2000 {
        let n = rng.random_range(1..=12);
        let mut ranking: Vec<usize> = (0..n).collect();
        ranking.shuffle(&mut rng);
        let t = rng.random_range(1..=5);
        // truth may name labels absent from a short ranking
        let mut pool: Vec<usize> = (0..12).collect();
        pool.shuffle(&mut rng);
        let truth: Vec<usize> = pool[..t].to_vec();
        for &k in &ks {
            worst = worst.max((hit_at_k::<usize, f64>(&ranking, &truth, k) - brute_hit(&ranking, &truth, k)).abs());
            let r: f64 = recall_at_k(&ranking, &truth, k).unwrap();
            worst = worst.max((r - brute_recall(&ranking, &truth, k)).abs());
        }
        let ap: f64 = average_precision(&ranking, &truth).unwrap();
        let rr: f64 = reciprocal_rank(&ranking, &truth).unwrap();
        worst = worst.max((ap - brute_ap(&ranking, &truth)).abs());
        worst = worst.max((rr - brute_rr(&ranking, &truth)).abs());
        cases.push((ranking, truth));
    }
    let report = aggregate::<usize, f64, _>(cases.iter().map(|(a, b)| (a.as_slice(), b.as_slice())), &ks).unwrap();
    let n = cases.len() as f64;
    let map: f64 = cases.iter().map(|(a, b)| brute_ap(a, b)).sum::<f64>() / n;
    let mrr: f64 = cases.iter().map(|(a, b)| brute_rr(a, b)).sum::<f64>() / n;
    worst = worst.max((report.map_score - map).abs()).max((report.mrr - mrr).abs());
    for &k in &ks {
        let top: f64 = cases.iter().map(|(a, b)| brute_hit(a, b, k)).sum::<f64>() / n;
        let rec: f64 = cases.iter().map(|(a, b)| brute_recall(a, b, k)).sum::<f64>() / n;
        worst = worst.max((report.hit_at[&k] - top).abs()).max((report.recall_at[&k] - rec).abs());
    }
    let exact: ExactMetrics =
        aggregate(cases.iter().map(|(a, b)| (a.as_slice(), b.as_slice())), &ks).unwrap();
    let exact_map = *exact.map_score.numer() as f64 / *exact.map_score.denom() as f64;
    worst = worst.max((exact_map - map).abs());
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "metric oracle",
        worst <= 1e-12 && secs < 5.0,
        format!("{} cases, max deviation {worst:.2e} (≤ 1e-12), {secs:.2}s (< 5s)", cases.len()),
    );
}

// ---------------------------------------------------------------- corpus

#[test]
fn reference_histogram_statistics() {
    let start = Instant::now();
    let stats = CorpusStats::from_histogram(BTreeMap::from([(1, 428), (2, 138), (3, 61), (4, 20), (5, 13)]));
    let mean = stats.mean_f64().unwrap();
    let exact = stats.mean_labels_per_report.unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = stats.report_count == 660
        && exact == Ratio::new(1032, 660)
        && (mean - 1032.0 / 660.0).abs() <= 1e-9
        && stats.mean_display() == "1.56"
        && secs < 1.0;
    verdict(
        "labels-per-report histogram",
        pass,
        format!(
            "{} reports, mean {exact} = {mean:.12} shown as {}, {secs:.4}s",
            stats.report_count,
            stats.mean_display()
        ),
    );
}

fn raw_report(id: usize, dirs: &[&str]) -> BugReport {
    BugReport {
        id: id.to_string(),
        date: "2023-01-01".into(),
        title: format!("report {id}"),
        description: "crash on start".into(),
        priority: None,
        paths: dirs.iter().map(|d| format!("{d}/file{id}.cpp")).collect(),
    }
}

#[test]
fn corpus_filter_boundaries() {
    let mut reports = Vec::new();
    let mut id = 0;
    let mut push = |reports: &mut Vec<BugReport>, dirs: &[&str]| {
        id += 1;
        reports.push(raw_report(id, dirs));
        id
    };
    // six common directories, ten single-label reports each
    for d in ["a", "b", "c", "d", "e", "f"] {
        for _ in 0..10 {
            push(&mut reports, &[d]);
        }
    }
    let five = push(&mut reports, &["a", "b", "c", "d", "e"]);
    let six = push(&mut reports, &["a", "b", "c", "d", "e", "f"]);
    // `ten` reaches exactly 10 occurrences, `nine` stops at 9
    let mut ten_ids = Vec::new();
    for _ in 0..9 {
        ten_ids.push(push(&mut reports, &["ten"]));
    }
    let mixed = push(&mut reports, &["ten", "nine"]);
    let mut nine_ids = Vec::new();
    for _ in 0..8 {
        nine_ids.push(push(&mut reports, &["nine"]));
    }
    let (examples, ingest) = build_corpus(&reports, &PathMapping::default(), 5, 10);
    let by_id: HashMap<String, BTreeSet<String>> =
        examples.iter().map(|e| (e.report_id.clone(), e.labels.clone())).collect();

    let mut deviations = Vec::new();
    let mut expect = |ok: bool, what: &str| {
        if !ok {
            deviations.push(what.to_owned());
        }
    };
    expect(by_id.get(&five.to_string()).is_some_and(|l| l.len() == 5), "5-label report kept");
    expect(!by_id.contains_key(&six.to_string()), "6-label report removed");
    expect(ten_ids.iter().all(|i| by_id.contains_key(&i.to_string())), "label with 10 occurrences kept");
    expect(by_id.get(&mixed.to_string()) == Some(&set(&["ten/"])), "9-occurrence label stripped from mixed report");
    expect(nine_ids.iter().all(|i| !by_id.contains_key(&i.to_string())), "reports left empty are dropped");
    expect(ingest.diffuse_removed == 1, "one diffuse report");
    expect(ingest.rare.stripped_labels == vec!["nine/".to_owned()], "only `nine` stripped");
    expect(examples.len() == 60 + 1 + 9 + 1, "output size");
    verdict(
        "corpus filter boundaries",
        deviations.is_empty(),
        format!("5 vs 6 labels, 9 vs 10 occurrences; {} deviations {deviations:?}", deviations.len()),
    );
}

// ---------------------------------------------------------------- split

#[test]
fn stratified_split_on_skewed_corpora() {
    let start = Instant::now();
    let mut rng = seeded_rng(99);
    let spec = SplitSpec::default();
    let mut worst: f64 = 0.0;
    let mut missing_from_train = 0;
    let mut unstable = 0;
    for c in 0..50 {
        let n = rng.random_range(200..=1000);
        let labels = rng.random_range(5..=30);
        let alpha = rng.random_range(0.5..2.0);
        let corpus = planted_corpus(&PlantedSpec::pareto(n, labels, alpha, 1000 + c)).reports;
        let split = iterative_stratified_split(&corpus, &spec).unwrap();
        let counts = bugloc_core::corpus::label_counts(corpus.iter().map(|r| &r.labels));
        let train_labels: BTreeSet<&String> = split.train.iter().flat_map(|r| &r.labels).collect();
        missing_from_train += counts.keys().filter(|l| !train_labels.contains(l)).count();
        for part in [&split.train, &split.val, &split.test] {
            let local = bugloc_core::corpus::label_counts(part.iter().map(|r| &r.labels));
            for (label, &total) in counts.iter().filter(|(_, &t)| t >= 10) {
                let overall = total as f64 / n as f64;
                let here = local.get(label).copied().unwrap_or(0) as f64 / part.len() as f64;
                worst = worst.max((here - overall).abs());
            }
        }
        let once = serde_json::to_vec(&split.manifest(&spec)).unwrap();
        let again = serde_json::to_vec(&iterative_stratified_split(&corpus, &spec).unwrap().manifest(&spec)).unwrap();
        if once != again {
            unstable += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "stratified split",
        worst <= 0.1 && missing_from_train == 0 && unstable == 0 && secs < 30.0,
        format!(
            "50 corpora, max frequency deviation {worst:.4} (≤ 0.1), {missing_from_train} labels missing from train, \
             {unstable} non-identical reruns, {secs:.1}s (< 30s)"
        ),
    );
}

// ---------------------------------------------------------------- leakage

#[test]
fn no_information_leaks_from_held_out_data() {
    let corpus = planted_corpus(&PlantedSpec::pareto(300, 10, 1.0, 5)).reports;
    let mut split = iterative_stratified_split(&corpus, &SplitSpec::default()).unwrap();
    let mut failures = Vec::new();

    // sentinel tokens only in validation and test text
    for r in &mut split.val {
        r.tokens.push("qqsentinelval".into());
    }
    for r in &mut split.test {
        r.tokens.push("qqsentineltest".into());
        r.labels.insert("src/only_in_test/".into());
    }
    let space = fit_label_space(&split.train).unwrap();
    let (features, model) = fit_pipeline(
        &split.train,
        &space,
        &FeatureInput::<f64>::Tfidf(TfidfConfig::default()),
        &HyperParams::default_for(ModelKind::Lr, 42),
    )
    .unwrap();
    let tfidf = features.tfidf().unwrap();
    if tfidf.contains("qqsentinelval") || tfidf.contains("qqsentineltest") {
        failures.push("sentinel entered the vocabulary");
    }
    if space.position("src/only_in_test/").is_some() || model.label_space != space {
        failures.push("label space saw held-out labels");
    }
    let eval = evaluate(&model, &features, &split.test, None, &[1, 5]).unwrap();
    if eval.out_of_space_labels != split.test.len() {
        failures.push("held-out-only label was not dropped from the truth sets");
    }

    // standardizer statistics come from training rows alone
    let mut rng = seeded_rng(8);
    let mut rows = Vec::new();
    for r in split.train.iter() {
        rows.push((r.report_id.clone(), (0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()));
    }
    for r in split.val.iter().chain(&split.test) {
        rows.push((r.report_id.clone(), vec![1000.0; 4]));
    }
    let vectors = DenseVectors::new(rows.clone()).unwrap();
    let fitted: Features = FittedFeatures::fit(&split.train, FeatureSource::Dense(&vectors)).unwrap();
    let FittedFeatures::Dense(std) = &fitted else { unreachable!() };
    let n = split.train.len() as f64;
    for j in 0..4 {
        let m = rows[..split.train.len()].iter().map(|(_, v)| v[j]).sum::<f64>() / n;
        if (std.mean[j] - m).abs() > 1e-9 {
            failures.push("standardizer mean differs from the training-only mean");
        }
    }

    // per-fold: every token unique to a held-out report stays out of that fold's vocabulary
    let mut train: Vec<ProcessedReport> = split.train.clone();
    for r in &mut train {
        r.tokens.push(format!("uniq{}", r.report_id));
    }
    let (aug, _) = augment_training_set(
        &TrainingSet::from_train_partition(train.clone()),
        &AugmentPlan::new(Technique::RandomSwap, Scope::Full, 42),
        &Thesaurus::embedded(),
        &BTreeMap::new(),
    )
    .unwrap();
    let aug = aug.into_reports();
    let violations = Mutex::new(0usize);
    let folds_seen = Mutex::new(0usize);
    let observer = |ctx: &FoldContext<'_, f64>| {
        let vocab = ctx.features.tfidf().unwrap();
        let mut bad = ctx.held_ids.iter().filter(|id| vocab.contains(&format!("uniq{}", source_id(id)))).count();
        bad += ctx.fit_ids.iter().filter(|id| !vocab.contains(&format!("uniq{}", source_id(id)))).count();
        *violations.lock().unwrap() += bad;
        *folds_seen.lock().unwrap() += 1;
    };
    let grid = Grid::from_json(r#"{"C": [1]}"#).unwrap();
    grid_search(
        &grid,
        ModelKind::Lr,
        &aug,
        &space,
        &FeatureInput::<f64>::Tfidf(TfidfConfig::default()),
        &TuneOptions { k: 3, seed: 42 },
        Some(&observer),
    )
    .unwrap();
    let violations = violations.into_inner().unwrap();
    if violations > 0 {
        failures.push("a fold vocabulary saw held-out text");
    }
    verdict(
        "leakage guards",
        failures.is_empty(),
        format!(
            "vocabulary, label space, standardizer and {} CV folds checked; {} per-fold violations; {failures:?}",
            folds_seen.into_inner().unwrap(),
            violations
        ),
    );
}

// ---------------------------------------------------------------- planted benchmark

/// Labels whose keyword occurs come first, then the rest; both groups by training prior.
fn keyword_oracle(reports: &[ProcessedReport], keywords: &[String], space: &LabelSpace, prior: &[usize]) -> ExactMetrics {
    let kw_label: HashMap<&str, usize> =
        keywords.iter().enumerate().filter_map(|(j, k)| space.position(&label_name(j)).map(|i| (k.as_str(), i))).collect();
    let mut rankings = Vec::new();
    let mut truths = Vec::new();
    for r in reports {
        let present: BTreeSet<usize> = r.tokens.iter().filter_map(|t| kw_label.get(t.as_str()).copied()).collect();
        let mut order: Vec<usize> = (0..space.len()).collect();
        order.sort_by_key(|&i| (!present.contains(&i), std::cmp::Reverse(prior[i]), i));
        rankings.push(order);
        truths.push(space.indices(r.labels.iter()).0);
    }
    aggregate(rankings.iter().zip(&truths).map(|(a, b)| (a.as_slice(), b.as_slice())), &[1, 5]).unwrap()
}

fn ratio_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[test]
fn planted_signal_is_recovered() {
    let start = Instant::now();
    let planted = planted_corpus(&PlantedSpec::pareto(600, 30, 1.0, 42));
    let split = iterative_stratified_split(&planted.reports, &SplitSpec::default()).unwrap();
    let space = split.label_space.clone();
    let input = FeatureInput::<f64>::Tfidf(TfidfConfig::default());
    let opts = TuneOptions { k: 3, seed: 42 };
    let ks = [1, 5];

    let tuned = |kind| {
        let g = grid_search(&Grid::default_for(kind), kind, &split.train, &space, &input, &opts, None).unwrap();
        evaluate(&g.model, &g.features, &split.test, None, &ks).unwrap().metrics
    };
    let lr = tuned(ModelKind::Lr);
    let svm = tuned(ModelKind::Svm);
    let (rf_features, rf_model) =
        fit_pipeline(&split.train, &space, &input, &HyperParams::default_for(ModelKind::Rf, 42)).unwrap();
    let rf = evaluate(&rf_model, &rf_features, &split.test, None, &ks).unwrap().metrics;

    let prior: Vec<usize> = (0..space.len()).map(|i| split.y_train.column_count(i)).collect();
    let oracle = keyword_oracle(&split.test, &planted.keywords, &space, &prior);
    let secs = start.elapsed().as_secs_f64();

    let pass = lr.hit_at[&1] >= 0.90
        && lr.map_score >= 0.90
        && svm.hit_at[&5] >= 0.95
        && rf.hit_at[&5] >= 0.95
        && secs < 120.0;
    verdict(
        "planted signal",
        pass,
        format!(
            "LR Top-1 {:.3} MAP {:.3} (need ≥ 0.90); SVM Top-5 {:.3}, RF Top-5 {:.3} (need ≥ 0.95); \
             keyword-oracle ceiling Top-1 {:.3} Top-5 {:.3} MAP {:.3}; {secs:.1}s (< 120s)",
            lr.hit_at[&1],
            lr.map_score,
            svm.hit_at[&5],
            rf.hit_at[&5],
            ratio_f64(oracle.hit_at[&1]),
            ratio_f64(oracle.hit_at[&5]),
            ratio_f64(oracle.map_score),
        ),
    );
}

// ---------------------------------------------------------------- augmentation direction

/// Recall@5 over the true labels of `rare`, pooled across reports.
fn rare_recall(model: &Model, features: &Features, reports: &[ProcessedReport], rare: &BTreeSet<String>) -> Option<f64> {
    let eval = evaluate(model, features, reports, None, &[5]).unwrap();
    let (mut found, mut total) = (0, 0);
    for (r, pred) in reports.iter().zip(&eval.predictions) {
        let top: Vec<&str> = pred.labels().into_iter().take(5).collect();
        for l in r.labels.iter().filter(|l| rare.contains(*l)) {
            total += 1;
            found += top.contains(&l.as_str()) as usize;
        }
    }
    (total > 0).then(|| found as f64 / total as f64)
}

#[test]
fn targeted_augmentation_keeps_rare_label_recall() {
    let start = Instant::now();
    // eight head labels hold 95% of the weight, four tail labels 5%
    let mut weights = vec![0.95 / 8.0; 8];
    weights.extend([0.05 / 4.0; 4]);
    let hyper = HyperParams::Rf(ForestParams { n_trees: 100, ..ForestParams::default() });
    let input = FeatureInput::<f64>::Tfidf(TfidfConfig::default());
    let mut held = 0;
    let mut scored = 0;
    let mut log = Vec::new();
    for seed in 0..20u64 {
        let spec = PlantedSpec { label_weights: weights.clone(), ..PlantedSpec::pareto(800, 12, 1.0, 500 + seed) };
        let corpus = planted_corpus(&spec).reports;
        let split = iterative_stratified_split(&corpus, &SplitSpec { seed, ..SplitSpec::default() }).unwrap();
        let train = split.training_set();
        let counts = train.label_counts();
        let plan = AugmentPlan::new(Technique::RandomSwap, Scope::Targeted, seed);
        let rare: BTreeSet<String> =
            counts.iter().filter(|(_, &c)| c < plan.target_threshold).map(|(l, _)| l.clone()).collect();
        let (aug, _) = augment_training_set(&train, &plan, &Thesaurus::embedded(), &counts).unwrap();
        let hyper = match &hyper {
            HyperParams::Rf(p) => HyperParams::Rf(ForestParams { seed, ..p.clone() }),
            h => h.clone(),
        };
        let space = &split.label_space;
        let (f0, m0) = fit_pipeline(&split.train, space, &input, &hyper).unwrap();
        let (f1, m1) = fit_pipeline(aug.reports(), space, &input, &hyper).unwrap();
        let (Some(before), Some(after)) =
            (rare_recall(&m0, &f0, &split.test, &rare), rare_recall(&m1, &f1, &split.test, &rare))
        else {
            continue;
        };
        scored += 1;
        held += (after >= before) as usize;
        log.push(format!("{before:.2}→{after:.2}"));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "targeted augmentation",
        scored == 20 && held >= 15,
        format!("rare-label Recall@5 not reduced in {held}/{scored} seeds (need ≥ 15/20) [{}]; {secs:.1}s", log.join(" ")),
    );
}

// ---------------------------------------------------------------- optimizers

#[test]
fn optimizer_correctness() {
    let corpus = planted_corpus(&PlantedSpec::pareto(300, 10, 1.0, 17)).reports;
    let docs: Vec<&[String]> = corpus.iter().map(|r| r.tokens.as_slice()).collect();
    let tfidf: TfidfModel<f64> = TfidfModel::fit(&docs, &TfidfConfig::default()).unwrap();
    let x = tfidf.transform_all(docs.iter().copied());
    let ones = vec![1.0; x.n_rows()];

    // converged gradient norm on every label
    let mut worst_grad: f64 = 0.0;
    for j in 0..10 {
        let name = label_name(j);
        let y: Vec<f64> = corpus.iter().map(|r| if r.labels.contains(&name) { 1.0 } else { -1.0 }).collect();
        let obj = LogisticObjective { x: &x, y: &y, sample_weight: &ones, c: 1.0 };
        let fit = fit_logistic(&obj, 1e-4, 1000);
        let mut theta = fit.weights.clone();
        theta.push(fit.bias);
        let g = obj.gradient(&theta);
        worst_grad = worst_grad.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }

    // central differences at random points of a small dense problem
    let mut rng = seeded_rng(3);
    let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let dense = FeatureMatrix::dense(rows).unwrap();
    let y: Vec<f64> = (0..40).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
    let w: Vec<f64> = (0..40).map(|_| rng.random_range(0.5..2.0)).collect();
    let obj = LogisticObjective { x: &dense, y: &y, sample_weight: &w, c: 0.7 };
    let mut worst_fd: f64 = 0.0;
    for _ in 0..100 {
        let theta: Vec<f64> = (0..obj.n_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let g = obj.gradient(&theta);
        let h = 1e-5;
        let fd: Vec<f64> = (0..theta.len())
            .map(|k| {
                let (mut a, mut b) = (theta.clone(), theta.clone());
                a[k] += h;
                b[k] -= h;
                (obj.value(&a) - obj.value(&b)) / (2.0 * h)
            })
            .collect();
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        worst_fd = worst_fd.max(diff / norm);
    }

    // SVM rankings are invariant to positive rescaling of the decision values
    let space = fit_label_space(&corpus).unwrap();
    let (features, svm) = fit_pipeline(
        &corpus,
        &space,
        &FeatureInput::<f64>::Tfidf(TfidfConfig::default()),
        &HyperParams::default_for(ModelKind::Svm, 42),
    )
    .unwrap();
    let fx = features.transform(&corpus[..100], None).unwrap();
    let mut changed = 0;
    for lambda in [0.125, 0.5, 2.0, 8.0, 32.0] {
        let scaled = svm.scaled(lambda);
        for i in 0..100 {
            let a = rank_indices(&svm.score_row(fx.row(i)).unwrap());
            let b = rank_indices(&scaled.score_row(fx.row(i)).unwrap());
            changed += (a != b) as usize;
        }
    }
    verdict(
        "optimizer correctness",
        worst_grad <= 1e-4 && worst_fd <= 1e-4 && changed == 0,
        format!(
            "LR gradient norm {worst_grad:.2e} (≤ 1e-4), finite-difference relative error {worst_fd:.2e} over 100 points \
             (≤ 1e-4), {changed} SVM rankings changed under λ-scaling"
        ),
    );
}

// ---------------------------------------------------------------- persistence

#[test]
fn persistence_round_trips() {
    let planted = planted_corpus(&PlantedSpec::pareto(250, 8, 1.0, 21));
    let corpus = &planted.reports;
    let space = fit_label_space(corpus).unwrap();
    let input = FeatureInput::<f64>::Tfidf(TfidfConfig { ngram_range: (1, 2), ..TfidfConfig::default() });
    let mut rng = seeded_rng(4);
    let vocab: Vec<String> = planted.keywords.iter().chain(&planted.noise).cloned().collect();
    let inputs: Vec<ProcessedReport> = (0..100)
        .map(|i| {
            let n = rng.random_range(1..30);
            let tokens = (0..n)
                .map(|_| if rng.random_bool(0.1) { format!("unseen{i}") } else { vocab[rng.random_range(0..vocab.len())].clone() })
                .collect();
            ProcessedReport::new(format!("q{i}"), tokens, BTreeSet::new())
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let mut worst: f64 = 0.0;
    let hypers = [
        HyperParams::default_for(ModelKind::Lr, 42),
        HyperParams::Svm(LinearParams { c: Ratio::new(1, 2), ..LinearParams::default() }),
        HyperParams::Rf(ForestParams { n_trees: 20, ..ForestParams::default() }),
    ];
    for hyper in &hypers {
        let (features, model) = fit_pipeline(corpus, &space, &input, hyper).unwrap();
        let bundle = Bundle::new(model, features, PreprocessConfig::default()).unwrap();
        let path = dir.path().join(format!("{}.json", hyper.kind()));
        bugloc_core::models::save_model(&bundle, &path).unwrap();
        let loaded: Bundle = bugloc_core::models::load_model(&path).unwrap();
        let from_text = Bundle::from_json(&bundle.to_json()).unwrap();
        for other in [&loaded, &from_text] {
            let a = bundle.features.transform(&inputs, None).unwrap();
            let b = other.features.transform(&inputs, None).unwrap();
            for i in 0..inputs.len() {
                let sa = bundle.model.score_row(a.row(i)).unwrap();
                let sb = other.model.score_row(b.row(i)).unwrap();
                for (x, y) in sa.iter().zip(&sb) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    let docs: Vec<&[String]> = corpus.iter().map(|r| r.tokens.as_slice()).collect();
    let tfidf: TfidfModel<f64> = TfidfModel::fit(&docs, &TfidfConfig { min_df: 2, ..TfidfConfig::default() }).unwrap();
    let back: TfidfModel<f64> = TfidfModel::from_json(&tfidf.to_json()).unwrap();
    for r in &inputs {
        let (a, b) = (tfidf.transform(&r.tokens), back.transform(&r.tokens));
        if a.indices != b.indices {
            worst = f64::INFINITY;
        }
        for (x, y) in a.values.iter().zip(&b.values) {
            worst = worst.max((x - y).abs());
        }
    }
    verdict(
        "persistence round trip",
        worst <= 1e-12,
        format!("LR/SVM/RF bundles and TF-IDF on 100 inputs, max score deviation {worst:.2e} (≤ 1e-12)"),
    );
}

// ---------------------------------------------------------------- end to end

const SMALL_GRIDS: [(&str, &str); 3] = [
    ("lr", r#"{"C": [1, 10], "class_weight": ["none", "balanced"]}"#),
    ("svm", r#"{"C": [0.1, 1]}"#),
    ("rf", r#"{"n_trees": [20], "min_samples_leaf": [2]}"#),
];

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn bugloc(args: &[&str]) {
    let mut argv = vec!["bugloc"];
    argv.extend_from_slice(args);
    assert_eq!(bugloc_cli::run(argv), 0, "bugloc {args:?} failed");
}

fn benchmark_tables(root: &Path) -> Vec<String> {
    let raw = root.join("raw");
    let out = root.join("run");
    bugloc(&["synth", "--out", p(&raw), "--reports", "300", "--labels", "10", "--seed", "42"]);
    let mut sets = Vec::new();
    for (k, g) in SMALL_GRIDS {
        let path = raw.join(format!("grid_{k}.json"));
        fs::write(&path, g).unwrap();
        sets.push("--set".to_owned());
        sets.push(format!("grid.{k}={}", p(&path)));
    }
    let (reports, mapping) = (raw.join("reports.csv"), raw.join("mapping.csv"));
    bugloc(&["ingest", "--out", p(&out), "--reports", p(&reports), "--mapping", p(&mapping)]);
    bugloc(&["preprocess", "--out", p(&out)]);
    bugloc(&["split", "--out", p(&out)]);
    bugloc(&["augment", "--out", p(&out)]);
    let mut args = vec!["benchmark", "--out", p(&out)];
    args.extend(sets.iter().map(String::as_str));
    bugloc(&args);
    ["metrics.csv", "validation.csv", "best.csv"]
        .iter()
        .map(|f| fs::read_to_string(out.join("benchmark").join(f)).unwrap())
        .collect()
}

fn http_post(addr: SocketAddr, body: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    write!(
        s,
        "POST /predict HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .ok()?;
    let mut text = String::new();
    s.read_to_string(&mut text).ok()?;
    let (head, body) = text.split_once("\r\n\r\n")?;
    head.starts_with("HTTP/1.1 200").then(|| body.to_owned())
}

/// Loopback or unspecified, in /proc/net's hex encoding.
fn is_local_hex(entry: &str) -> bool {
    let a = entry.split(':').next().unwrap_or("");
    match a.len() {
        8 => a.ends_with("7F") || a == "00000000",
        32 => {
            a == "00000000000000000000000001000000"
                || a == "00000000000000000000000000000000"
                || (a.starts_with("0000000000000000FFFF0000") && a.ends_with("7F"))
        }
        _ => false,
    }
}

/// This process's internet sockets, and those leaving the loopback interface
/// (any UDP socket counts as leaving).
fn own_sockets() -> (usize, Vec<String>) {
    let mut inodes = BTreeSet::new();
    for e in fs::read_dir("/proc/self/fd").unwrap().flatten() {
        if let Ok(t) = fs::read_link(e.path()) {
            if let Some(n) = t.to_string_lossy().strip_prefix("socket:[").and_then(|s| s.strip_suffix(']')) {
                inodes.insert(n.to_owned());
            }
        }
    }
    let mut total = 0;
    let mut outbound = Vec::new();
    for table in ["tcp", "tcp6", "udp", "udp6"] {
        let Ok(text) = fs::read_to_string(format!("/proc/self/net/{table}")) else { continue };
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 10 || !inodes.contains(f[9]) {
                continue;
            }
            total += 1;
            if table.starts_with("udp") || !is_local_hex(f[1]) || !is_local_hex(f[2]) {
                outbound.push(format!("{table} {} -> {}", f[1], f[2]));
            }
        }
    }
    (total, outbound)
}

#[test]
fn end_to_end_determinism_and_local_service() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ta = benchmark_tables(a.path());
    let tb = benchmark_tables(b.path());
    let identical_tables = ta == tb;

    let run = a.path().join("run");
    bugloc(&["tune", "--out", p(&run), "--model", "lr", "--set", &format!("grid.lr={}", p(&a.path().join("raw/grid_lr.json")))]);
    let predictor = Predictor::load(&run.join("models/lr_original.json")).unwrap();
    let default_loopback = DEFAULT_ADDR.parse::<SocketAddr>().unwrap().ip().is_loopback();
    // a free loopback port for the real serve entry point
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    std::thread::spawn(move || serve(predictor, addr));

    let first = fs::read_to_string(run.join("corpus.jsonl")).unwrap();
    let report: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    let req = serde_json::json!({ "title": report["title"], "description": report["description"], "top_k": 5 }).to_string();
    let deadline = Instant::now() + Duration::from_secs(10);
    let first = loop {
        if let Some(body) = http_post(addr, &req) {
            break body;
        }
        assert!(Instant::now() < deadline, "service did not come up on {addr}");
        std::thread::sleep(Duration::from_millis(20));
    };
    let same = (0..3).all(|_| http_post(addr, &req).as_deref() == Some(first.as_str()));
    let (sockets, outbound) = own_sockets();

    verdict(
        "end-to-end determinism",
        identical_tables && same && default_loopback && sockets > 0 && outbound.is_empty(),
        format!(
            "benchmark CSVs identical across runs: {identical_tables}; identical HTTP bodies: {same}; \
             default address {DEFAULT_ADDR} is loopback: {default_loopback}; {sockets} sockets, outbound {outbound:?}"
        ),
    );
}
