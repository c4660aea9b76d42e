use super::*;
use crate::datasplit::{fit_label_space, kfold_stratified};
use crate::models::{LinearParams, Submodel, TrainingNotes};
use crate::synth::{planted_corpus, PlantedSpec};
use std::collections::BTreeSet;

fn report(id: &str, tokens: &[&str], labels: &[&str]) -> ProcessedReport {
    ProcessedReport {
        report_id: id.into(),
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        labels: labels.iter().map(|s| s.to_string()).collect(),
        variant: None,
    }
}

fn keyword_model(reports: &[ProcessedReport], kind: ModelKind) -> (FittedFeatures<f64>, OvrModel<f64>) {
    let features = FittedFeatures::fit(reports, FeatureSource::Tfidf(&TfidfConfig::default())).unwrap();
    let space = fit_label_space(reports).unwrap();
    let tfidf = features.tfidf().unwrap();
    // label j fires on its own name used as a token
    let per_label = space
        .labels()
        .iter()
        .map(|l| {
            let mut w = vec![0.0; tfidf.dim()];
            if let Some(p) = tfidf.vocabulary().iter().position(|t| t == l) {
                w[p] = 1.0;
            }
            Submodel::Linear { weights: w, bias: 0.0 }
        })
        .collect();
    let model = OvrModel {
        kind,
        label_space: space,
        per_label,
        feature_kind: FeatureKind::Tfidf,
        dim: tfidf.dim(),
        hyper: HyperParams::default_for(kind, 0),
        notes: TrainingNotes::default(),
    };
    (features, model)
}

#[test]
fn perfect_model_scores_one() {
    let reports = vec![
        report("1", &["alpha", "noise"], &["alpha"]),
        report("2", &["beta", "noise"], &["beta"]),
        report("3", &["gamma", "alpha"], &["gamma", "alpha"]),
    ];
    let (f, m) = keyword_model(&reports, ModelKind::Svm);
    let e = evaluate(&m, &f, &reports, None, &DEFAULT_KS).unwrap();
    for v in e.metrics.hit_at.values() {
        assert_eq!(*v, 1.0);
    }
    // the two-label report can only recall half its labels at k = 1
    assert!((e.metrics.recall_at[&1] - 2.5 / 3.0).abs() < 1e-12);
    assert_eq!(e.metrics.recall_at[&3], 1.0);
    assert_eq!(e.metrics.map_score, 1.0);
    assert_eq!(e.metrics.mrr, 1.0);
    assert_eq!(e.metrics.truncated_ks, vec![5, 10]);
}

#[test]
fn uniform_scores_follow_tie_order() {
    // all-zero weights: every label ties, ranking is label-space order
    let names = ["a", "b", "c", "d", "e", "f", "g"];
    let reports: Vec<ProcessedReport> =
        (0..21).map(|i| report(&i.to_string(), &["x"], &[names[i % 7]])).collect();
    let (f, mut m) = keyword_model(&reports, ModelKind::Lr);
    for s in &mut m.per_label {
        *s = Submodel::Linear { weights: vec![0.0; m.dim], bias: 0.0 };
    }
    let e = evaluate(&m, &f, &reports, None, &[1, 3, 5]).unwrap();
    // label at index i is hit at k iff i < k; each label covers 1/7 of reports
    for k in [1, 3, 5] {
        assert!((e.metrics.hit_at[&k] - k as f64 / 7.0).abs() < 1e-12);
    }
    let mrr: f64 = (1..=7).map(|r| 1.0 / r as f64).sum::<f64>() / 7.0;
    assert!((e.metrics.mrr - mrr).abs() < 1e-12);
    assert_eq!(e.metrics.map_score, e.metrics.mrr);
}

#[test]
fn evaluate_rejects_mismatched_transformer() {
    let reports = vec![report("1", &["alpha"], &["alpha"]), report("2", &["beta"], &["beta"])];
    let (_, m) = keyword_model(&reports, ModelKind::Lr);
    let other = FittedFeatures::fit(
        &[report("9", &["p", "q", "r"], &["x"])],
        FeatureSource::Tfidf(&TfidfConfig::default()),
    )
    .unwrap();
    assert!(evaluate(&m, &other, &reports, None, &[1]).is_err());
}

#[test]
fn grid_enumeration_order() {
    let g = Grid::from_json(r#"{"C": [0.1, 1], "class_weight": ["none", "balanced"]}"#).unwrap();
    let labels: Vec<String> = g
        .candidates(ModelKind::Lr, 0, None)
        .unwrap()
        .iter()
        .map(|c| c.label())
        .collect();
    assert_eq!(
        labels,
        [
            "C=0.1 class_weight=\"none\"",
            "C=0.1 class_weight=\"balanced\"",
            "C=1 class_weight=\"none\"",
            "C=1 class_weight=\"balanced\""
        ]
    );
    assert!(Grid::from_json(r#"{"C": []}"#).is_err());
    assert!(Grid::from_json(r#"{"bogus": [1]}"#).unwrap().candidates(ModelKind::Lr, 0, None).is_err());
    assert!(Grid::from_json(r#"{"tfidf.min_df": [1]}"#).unwrap().candidates(ModelKind::Lr, 0, None).is_err());
}

#[test]
fn default_forest_grid_domains() {
    let g = Grid::default_for(ModelKind::Rf);
    let a = g.assignments();
    let domain = |key: &str| -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for m in &a {
            let v = m[key].to_string();
            if !seen.contains(&v) {
                seen.push(v);
            }
        }
        seen
    };
    assert_eq!(domain("n_trees"), ["5", "10", "20", "100"]);
    assert_eq!(domain("max_depth"), ["null", "20", "100"]);
    assert_eq!(domain("min_samples_split"), ["2", "5", "10"]);
    assert_eq!(domain("min_samples_leaf"), ["2", "5", "10", "20"]);
    assert_eq!(domain("class_weight"), ["\"balanced_subsample\""]);
    assert_eq!(domain("tfidf.max_features"), ["1000", "5000", "10000", "null"]);
    assert_eq!(domain("tfidf.ngram_range"), ["[1,1]", "[1,2]", "[1,3]"]);
    assert_eq!(domain("tfidf.min_df"), ["1", "2", "3"]);
    assert_eq!(g.len(), 4 * 3 * 3 * 4 * 3 * 3 * 4);
}

fn planted(n: usize, labels: usize, seed: u64) -> Vec<ProcessedReport> {
    planted_corpus(&PlantedSpec::pareto(n, labels, 1.0, seed)).reports
}

#[test]
fn single_candidate_is_selected() {
    let train = planted(90, 5, 1);
    let space = fit_label_space(&train).unwrap();
    let g = Grid::from_json(r#"{"C": [1]}"#).unwrap();
    let input = FeatureInput::<f64>::Tfidf(TfidfConfig::default());
    let r = grid_search(&g, ModelKind::Lr, &train, &space, &input, &TuneOptions::default(), None).unwrap();
    assert_eq!(r.best_index, 0);
    assert_eq!(r.results.len(), 1);
    assert_eq!(r.results[0].fold_map.len(), 3);
    assert!(r.results[0].mean_map > 0.0);
}

#[test]
fn signal_destroying_config_loses() {
    let train = planted(150, 6, 2);
    let space = fit_label_space(&train).unwrap();
    let g = Grid::from_json(r#"{"tfidf.max_features": [1, null], "C": [10], "class_weight": ["balanced"]}"#).unwrap();
    let input = FeatureInput::<f64>::Tfidf(TfidfConfig::default());
    let r = grid_search(&g, ModelKind::Lr, &train, &space, &input, &TuneOptions::default(), None).unwrap();
    assert!(r.results[1].mean_map > r.results[0].mean_map, "{:?}", r.selection_log);
    assert_eq!(r.best_index, 1);
    assert_eq!(r.features.dim(), r.model.dim);
}

#[test]
fn failing_candidate_scores_zero_and_search_continues() {
    let train = planted(90, 5, 3);
    let space = fit_label_space(&train).unwrap();
    let g = Grid::from_json(r#"{"tfidf.min_df": [100000, 1]}"#).unwrap();
    let input = FeatureInput::<f64>::Tfidf(TfidfConfig::default());
    let r = grid_search(&g, ModelKind::Svm, &train, &space, &input, &TuneOptions::default(), None).unwrap();
    assert_eq!(r.results[0].mean_map, 0.0);
    assert!(r.results[0].failure.is_some());
    assert_eq!(r.best_index, 1);
}

#[test]
fn ties_go_to_first_candidate() {
    let train = planted(60, 4, 4);
    let space = fit_label_space(&train).unwrap();
    // the tolerance never binds this solver differently, so both score the same
    let g = Grid::from_json(r#"{"max_iter": [1000, 1000]}"#).unwrap();
    let input = FeatureInput::<f64>::Tfidf(TfidfConfig::default());
    let r = grid_search(&g, ModelKind::Lr, &train, &space, &input, &TuneOptions::default(), None).unwrap();
    assert_eq!(r.results[0].mean_map, r.results[1].mean_map);
    assert_eq!(r.best_index, 0);
}

#[test]
fn held_out_fold_never_reaches_the_vocabulary() {
    let mut train = planted(90, 5, 5);
    for r in &mut train {
        r.tokens.push(format!("sentinel{}", r.report_id));
    }
    let space = fit_label_space(&train).unwrap();
    let g = Grid::from_json(r#"{"C": [0.1, 1]}"#).unwrap();
    let input = FeatureInput::<f64>::Tfidf(TfidfConfig::default());
    let checked = std::sync::atomic::AtomicUsize::new(0);
    let observer = |ctx: &FoldContext<'_, f64>| {
        let vocab = ctx.features.tfidf().unwrap();
        for id in &ctx.held_ids {
            assert!(!vocab.contains(&format!("sentinel{id}")), "held report {id} leaked");
        }
        for id in &ctx.fit_ids {
            assert!(vocab.contains(&format!("sentinel{id}")));
        }
        let fit: BTreeSet<_> = ctx.fit_ids.iter().collect();
        assert!(ctx.held_ids.iter().all(|id| !fit.contains(id)));
        checked.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
    };
    grid_search(&g, ModelKind::Lr, &train, &space, &input, &TuneOptions::default(), Some(&observer)).unwrap();
    assert_eq!(checked.into_inner(), 6);
}

#[test]
fn copies_share_their_source_fold() {
    let train = planted(90, 5, 6);
    let plain = grouped_folds(&train, 3, 42).unwrap();
    assert_eq!(plain, kfold_stratified(&train, 3, 42).unwrap().assignment);
    let mut augmented = train.clone();
    for r in &train[..30] {
        let mut c = r.clone();
        c.report_id = crate::augment::copy_id(&r.report_id, 1);
        augmented.push(c);
    }
    let folds = grouped_folds(&augmented, 3, 42).unwrap();
    assert_eq!(&folds[..90], &plain[..]);
    for i in 0..30 {
        assert_eq!(folds[90 + i], folds[i]);
    }
}

#[test]
fn linear_grid_values() {
    let c = Grid::default_for(ModelKind::Svm).candidates(ModelKind::Svm, 0, None).unwrap();
    assert_eq!(c.len(), 6);
    let HyperParams::Svm(LinearParams { c: first, .. }) = &c[0].hyper else { panic!() };
    assert_eq!(*first, num_rational::Ratio::new(1, 10));
}
