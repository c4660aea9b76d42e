//! Ranking evaluation and MAP-driven hyperparameter search.

pub mod metrics;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::augment::source_id;
use crate::datasplit::{binarize_reports, iterative_stratification, parse_ratio, seeded_rng, LabelSpace};
use crate::error::{Error, Result};
use crate::features::{DenseVectors, FeatureKind, FeatureSource, FittedFeatures, TfidfConfig};
use crate::models::forest::MaxFeatures;
use crate::models::{rank_indices, train_ovr, ClassWeight, ForestClassWeight, HyperParams, ModelKind, OvrModel, RankedPrediction};
use crate::models::RankedLabel;
use crate::scalar::{Fraction, Scalar};
use crate::textprep::ProcessedReport;

pub use metrics::{
    aggregate, average_precision, hit_at_k, metric_rows, metrics_table_csv, recall_at_k, reciprocal_rank,
    MetricsReport, DEFAULT_KS,
};

const DEFAULT_RF_GRID: &str = include_str!("../../data/grid_rf.json");
const DEFAULT_LINEAR_GRID: &str = include_str!("../../data/grid_linear.json");

/// Where features come from for a fit.
#[derive(Debug, Clone)]
pub enum FeatureInput<'a, T> {
    Tfidf(TfidfConfig),
    Dense(&'a DenseVectors<T>),
}

impl<T: Scalar> FeatureInput<'_, T> {
    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureInput::Tfidf(_) => FeatureKind::Tfidf,
            FeatureInput::Dense(_) => FeatureKind::Dense,
        }
    }

    pub fn vectors(&self) -> Option<&DenseVectors<T>> {
        match self {
            FeatureInput::Tfidf(_) => None,
            FeatureInput::Dense(v) => Some(v),
        }
    }
}

/// Fits the feature transformer and the model on `train` only.
pub fn fit_pipeline<T: Scalar>(
    train: &[ProcessedReport],
    label_space: &LabelSpace,
    input: &FeatureInput<'_, T>,
    hyper: &HyperParams,
) -> Result<(FittedFeatures<T>, OvrModel<T>)> {
    let features = match input {
        FeatureInput::Tfidf(cfg) => FittedFeatures::fit(train, FeatureSource::Tfidf(cfg))?,
        FeatureInput::Dense(v) => FittedFeatures::fit(train, FeatureSource::Dense(v))?,
    };
    let x = features.transform(train, input.vectors())?;
    let (y, _) = binarize_reports(train, label_space);
    let model = train_ovr(&x, &y, label_space, features.kind(), hyper)?;
    Ok((features, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Evaluation<T> {
    pub metrics: MetricsReport<f64>,
    pub predictions: Vec<RankedPrediction<T>>,
    /// true labels of evaluated reports that the model cannot rank
    pub out_of_space_labels: usize,
}

/// Scores and ranks every report with a fitted transformer and model, then
/// aggregates the ranking metrics. Nothing is refitted.
pub fn evaluate<T: Scalar>(
    model: &OvrModel<T>,
    features: &FittedFeatures<T>,
    reports: &[ProcessedReport],
    vectors: Option<&DenseVectors<T>>,
    ks: &[usize],
) -> Result<Evaluation<T>> {
    if features.kind() != model.feature_kind {
        return Err(Error::InvalidInput(format!(
            "model expects {:?} features, transformer produces {:?}",
            model.feature_kind,
            features.kind()
        )));
    }
    if features.dim() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, actual: features.dim() });
    }
    let x = features.transform(reports, vectors)?;
    let scores = model.score_matrix(&x)?;
    let space = &model.label_space;
    let mut rankings = Vec::with_capacity(reports.len());
    let mut truths = Vec::with_capacity(reports.len());
    let mut predictions = Vec::with_capacity(reports.len());
    let mut out_of_space = 0;
    for (r, s) in reports.iter().zip(&scores) {
        let ranking = crate::models::rank_labels(s, space)?;
        rankings.push(rank_indices(s));
        let (truth, dropped) = space.indices(r.labels.iter());
        out_of_space += dropped;
        truths.push(truth);
        predictions.push(RankedPrediction { report_id: r.report_id.clone(), ranking });
    }
    let metrics = aggregate::<usize, f64, _>(
        rankings.iter().zip(&truths).map(|(a, b)| (a.as_slice(), b.as_slice())),
        ks,
    )?;
    Ok(Evaluation { metrics, predictions, out_of_space_labels: out_of_space })
}

/// Ordered parameter grid; the cartesian product varies the last key fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    params: Vec<(String, Vec<Value>)>,
}

impl Grid {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::json(e, text))?;
        let Value::Object(obj) = raw else {
            return Err(Error::Config("grid must be a JSON object of name → list of values".into()));
        };
        let mut params = Vec::new();
        for (k, v) in obj {
            match v {
                Value::Array(vals) if !vals.is_empty() => params.push((k, vals)),
                _ => return Err(Error::Config(format!("grid entry `{k}` must be a non-empty list"))),
            }
        }
        if params.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        Ok(Grid { params })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The shipped grid for a model family.
    pub fn default_for(kind: ModelKind) -> Self {
        let text = match kind {
            ModelKind::Rf => DEFAULT_RF_GRID,
            ModelKind::Lr | ModelKind::Svm => DEFAULT_LINEAR_GRID,
        };
        Self::from_json(text).expect("embedded grid parses")
    }

    /// A grid with one value per key.
    pub fn single(entries: impl IntoIterator<Item = (String, Value)>) -> Result<Self> {
        let params: Vec<_> = entries.into_iter().map(|(k, v)| (k, vec![v])).collect();
        if params.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        Ok(Grid { params })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All assignments in enumeration order.
    pub fn assignments(&self) -> Vec<Map<String, Value>> {
        let mut out = vec![Map::new()];
        for (k, vals) in &self.params {
            out = out
                .into_iter()
                .flat_map(|m| {
                    vals.iter().map(move |v| {
                        let mut m = m.clone();
                        m.insert(k.clone(), v.clone());
                        m
                    })
                })
                .collect();
        }
        out
    }

    /// Resolves every assignment against the defaults for `kind`.
    pub fn candidates(&self, kind: ModelKind, seed: u64, base_tfidf: Option<&TfidfConfig>) -> Result<Vec<Candidate>> {
        self.assignments()
            .into_iter()
            .map(|params| {
                let mut hyper = HyperParams::default_for(kind, seed);
                let mut tfidf = base_tfidf.copied();
                for (k, v) in &params {
                    apply_param(k, v, &mut hyper, &mut tfidf)?;
                }
                Ok(Candidate { params, hyper, tfidf })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: Map<String, Value>,
    pub hyper: HyperParams,
    /// `None` for dense features
    pub tfidf: Option<TfidfConfig>,
}

impl Candidate {
    pub fn label(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }
}

fn bad(key: &str, v: &Value) -> Error {
    Error::Config(format!("invalid value {v} for `{key}`"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64().map(|n| n as usize).ok_or_else(|| bad(key, v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, v))
}

fn apply_param(key: &str, v: &Value, hyper: &mut HyperParams, tfidf: &mut Option<TfidfConfig>) -> Result<()> {
    if let Some(field) = key.strip_prefix("tfidf.") {
        let cfg = tfidf
            .as_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` needs TF-IDF features")))?;
        match field {
            "max_features" => cfg.max_features = if v.is_null() { None } else { Some(as_usize(key, v)?) },
            "min_df" => cfg.min_df = as_usize(key, v)?,
            "ngram_range" => {
                let pair = v.as_array().filter(|a| a.len() == 2).ok_or_else(|| bad(key, v))?;
                cfg.ngram_range = (as_usize(key, &pair[0])?, as_usize(key, &pair[1])?);
            }
            _ => return Err(Error::Config(format!("unknown grid parameter `{key}`"))),
        }
        return Ok(());
    }
    match hyper {
        HyperParams::Lr(p) | HyperParams::Svm(p) => match key {
            "C" | "c" => {
                let s = match v {
                    Value::Number(n) => n.to_string(),
                    Value::String(s) => s.clone(),
                    _ => return Err(bad(key, v)),
                };
                p.c = parse_ratio(&s)?;
            }
            "class_weight" => {
                p.class_weight = if v.is_null() { ClassWeight::None } else { as_str(key, v)?.parse()? }
            }
            "tol" => p.tol = v.as_f64().ok_or_else(|| bad(key, v))?,
            "max_iter" => p.max_iter = as_usize(key, v)?,
            _ => return Err(Error::Config(format!("unknown grid parameter `{key}` for lr/svm"))),
        },
        HyperParams::Rf(p) => match key {
            "n_trees" | "n_estimators" => p.n_trees = as_usize(key, v)?,
            "max_depth" => {
                p.max_depth = match v {
                    Value::Null => None,
                    Value::String(s) if s == "none" || s == "None" => None,
                    _ => Some(as_usize(key, v)?),
                }
            }
            "min_samples_split" => p.min_samples_split = as_usize(key, v)?,
            "min_samples_leaf" => p.min_samples_leaf = as_usize(key, v)?,
            "class_weight" => {
                p.class_weight = match v {
                    Value::String(s) if s == "balanced_subsample" => ForestClassWeight::BalancedSubsample,
                    Value::Null => ForestClassWeight::None,
                    Value::String(s) if s == "none" => ForestClassWeight::None,
                    _ => return Err(bad(key, v)),
                }
            }
            "max_features" => {
                p.max_features = match v {
                    Value::String(s) if s == "sqrt" => MaxFeatures::Sqrt,
                    Value::String(s) if s == "all" => MaxFeatures::All,
                    Value::Null => MaxFeatures::All,
                    _ => MaxFeatures::Fixed(as_usize(key, v)?),
                }
            }
            "bootstrap" => p.bootstrap = v.as_bool().ok_or_else(|| bad(key, v))?,
            "seed" => p.seed = v.as_u64().ok_or_else(|| bad(key, v))?,
            _ => return Err(Error::Config(format!("unknown grid parameter `{key}` for rf"))),
        },
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuneOptions {
    /// number of CV folds
    pub k: usize,
    pub seed: u64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions { k: 3, seed: crate::datasplit::DEFAULT_SEED }
    }
}

/// What a fold fit saw; handed to the observer before the held-out fold is scored.
pub struct FoldContext<'a, T> {
    pub candidate: usize,
    pub fold: usize,
    pub fit_ids: Vec<&'a str>,
    pub held_ids: Vec<&'a str>,
    pub features: &'a FittedFeatures<T>,
    pub model: &'a OvrModel<T>,
}

pub type FoldObserver<'o, T> = &'o (dyn Fn(&FoldContext<'_, T>) + Sync);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate: Candidate,
    pub fold_map: Vec<f64>,
    pub mean_map: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GridResult<T> {
    pub results: Vec<CandidateResult>,
    pub best_index: usize,
    /// fold of each training row
    pub fold_assignment: Vec<usize>,
    pub selection_log: Vec<String>,
    pub features: FittedFeatures<T>,
    pub model: OvrModel<T>,
}

impl<T> GridResult<T> {
    pub fn best(&self) -> &CandidateResult {
        &self.results[self.best_index]
    }
}

/// Stratified fold assignment in which augmented copies follow their source
/// report, so no source text is on both sides of a fold boundary.
pub fn grouped_folds(train: &[ProcessedReport], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let mut group_of = Vec::with_capacity(train.len());
    let mut groups: Vec<&str> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for r in train {
        let src = source_id(&r.report_id);
        let g = *index.entry(src).or_insert_with(|| {
            groups.push(src);
            groups.len() - 1
        });
        group_of.push(g);
    }
    if k > groups.len() {
        return Err(Error::InvalidInput(format!("k = {k} exceeds the {} distinct training reports", groups.len())));
    }
    let space = crate::datasplit::fit_label_space(train)?;
    let mut lists = vec![Vec::new(); groups.len()];
    for (r, &g) in train.iter().zip(&group_of) {
        if lists[g].is_empty() {
            lists[g] = space.indices(r.labels.iter()).0;
        }
    }
    let ratios = vec![num_rational::Ratio::new(1, k as u64); k];
    let mut rng = seeded_rng(seed);
    let assignment = iterative_stratification(&lists, space.len(), &ratios, &mut rng);
    Ok(group_of.into_iter().map(|g| assignment[g]).collect())
}

fn fold_map<T: Scalar>(
    train: &[ProcessedReport],
    label_space: &LabelSpace,
    input: &FeatureInput<'_, T>,
    cand: &Candidate,
    assignment: &[usize],
    fold: usize,
    ci: usize,
    observer: Option<FoldObserver<'_, T>>,
) -> Result<f64> {
    let mut fit = Vec::new();
    let mut held = Vec::new();
    for (r, &a) in train.iter().zip(assignment) {
        if a != fold {
            fit.push(r.clone());
        } else if source_id(&r.report_id) == r.report_id {
            // held-out scoring uses original reports only
            held.push(r.clone());
        }
    }
    let input = match (input, &cand.tfidf) {
        (FeatureInput::Tfidf(_), Some(cfg)) => FeatureInput::Tfidf(*cfg),
        (other, _) => other.clone(),
    };
    let (features, model) = fit_pipeline(&fit, label_space, &input, &cand.hyper)?;
    if let Some(obs) = observer {
        obs(&FoldContext {
            candidate: ci,
            fold,
            fit_ids: fit.iter().map(|r| r.report_id.as_str()).collect(),
            held_ids: held.iter().map(|r| r.report_id.as_str()).collect(),
            features: &features,
            model: &model,
        });
    }
    let eval = evaluate(&model, &features, &held, input.vectors(), &[1])?;
    Ok(eval.metrics.map_score)
}

/// k-fold cross-validated search maximizing mean held-out MAP; the first
/// enumerated candidate wins ties. The winner is refitted on all of `train`.
pub fn grid_search<T: Scalar>(
    grid: &Grid,
    kind: ModelKind,
    train: &[ProcessedReport],
    label_space: &LabelSpace,
    input: &FeatureInput<'_, T>,
    opts: &TuneOptions,
    observer: Option<FoldObserver<'_, T>>,
) -> Result<GridResult<T>> {
    let base_tfidf = match input {
        FeatureInput::Tfidf(cfg) => Some(cfg),
        FeatureInput::Dense(_) => None,
    };
    let candidates = grid.candidates(kind, opts.seed, base_tfidf)?;
    let assignment = grouped_folds(train, opts.k, opts.seed)?;
    let jobs: Vec<(usize, usize)> = (0..candidates.len()).flat_map(|c| (0..opts.k).map(move |f| (c, f))).collect();
    let outcomes: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| fold_map(train, label_space, input, &candidates[c], &assignment, f, c, observer))
        .collect();

    let mut results = Vec::with_capacity(candidates.len());
    let mut log = Vec::new();
    for (c, cand) in candidates.into_iter().enumerate() {
        let mut fold_scores = Vec::with_capacity(opts.k);
        let mut failure = None;
        for f in 0..opts.k {
            match &outcomes[c * opts.k + f] {
                Ok(m) => fold_scores.push(*m),
                Err(e) => {
                    failure.get_or_insert_with(|| format!("fold {f}: {e}"));
                    fold_scores.push(0.0);
                }
            }
        }
        let mean_map = if failure.is_some() { 0.0 } else { f64::mean(&fold_scores).unwrap_or(0.0) };
        log.push(match &failure {
            None => format!("candidate {c} [{}]: mean MAP {mean_map:.6}", cand.label()),
            Some(msg) => format!("candidate {c} [{}]: failed, scored 0 ({msg})", cand.label()),
        });
        results.push(CandidateResult { candidate: cand, fold_map: fold_scores, mean_map, failure });
    }
    let mut best_index = 0;
    for (i, r) in results.iter().enumerate() {
        if r.mean_map > results[best_index].mean_map {
            best_index = i;
        }
    }
    let best = &results[best_index].candidate;
    log.push(format!("selected candidate {best_index} [{}]", best.label()));
    let input = match (input, &best.tfidf) {
        (FeatureInput::Tfidf(_), Some(cfg)) => FeatureInput::Tfidf(*cfg),
        (other, _) => other.clone(),
    };
    let (features, model) = fit_pipeline(train, label_space, &input, &best.hyper)?;
    Ok(GridResult { results, best_index, fold_assignment: assignment, selection_log: log, features, model })
}

/// Top-k labels of a ranking, or all of them when `k` exceeds the count.
pub fn top_k<T: Clone>(ranking: &[RankedLabel<T>], k: usize) -> Vec<RankedLabel<T>> {
    ranking[..k.min(ranking.len())].to_vec()
}

#[cfg(test)]
mod tests;
