//! One-vs-rest multi-label rankers: logistic regression, linear SVM and
//! random forest, plus label scoring, ranking and model persistence.

pub mod bundle;
pub mod forest;
pub mod linear;

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasplit::{LabelMatrix, LabelSpace};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix, RowView};
use crate::scalar::Scalar;
use forest::{fit_forest, Forest, ForestConfig, MaxFeatures, TreeParams};
use linear::{fit_logistic, fit_svm, sigmoid, LogisticObjective};

pub use bundle::{load_model, save_model, ModelBundle, MODEL_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lr,
    Svm,
    Rf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Lr, ModelKind::Svm, ModelKind::Rf];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Svm => "svm",
            ModelKind::Rf => "rf",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logistic" => Ok(ModelKind::Lr),
            "svm" => Ok(ModelKind::Svm),
            "rf" | "forest" => Ok(ModelKind::Rf),
            other => Err(Error::Config(format!("unknown model kind `{other}` (lr, svm, rf)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    #[default]
    None,
    /// `n / (2·n_class)`
    Balanced,
}

impl FromStr for ClassWeight {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "null" => Ok(ClassWeight::None),
            "balanced" => Ok(ClassWeight::Balanced),
            other => Err(Error::Config(format!("unknown class_weight `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestClassWeight {
    #[default]
    BalancedSubsample,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    /// inverse regularization strength
    pub c: Ratio<u64>,
    pub tol: f64,
    pub max_iter: usize,
    pub class_weight: ClassWeight,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            c: Ratio::from_integer(1),
            tol: 1e-4,
            max_iter: 1000,
            class_weight: ClassWeight::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub class_weight: ForestClassWeight,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 2,
            max_features: MaxFeatures::Sqrt,
            class_weight: ForestClassWeight::BalancedSubsample,
            bootstrap: true,
            seed: crate::datasplit::DEFAULT_SEED,
        }
    }
}

impl ForestParams {
    fn config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            tree: TreeParams {
                max_depth: self.max_depth,
                min_samples_split: self.min_samples_split,
                min_samples_leaf: self.min_samples_leaf,
                max_features: self.max_features,
            },
            bootstrap: self.bootstrap,
            balanced_subsample: self.class_weight == ForestClassWeight::BalancedSubsample,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HyperParams {
    Lr(LinearParams),
    Svm(LinearParams),
    Rf(ForestParams),
}

impl HyperParams {
    pub fn default_for(kind: ModelKind, seed: u64) -> Self {
        match kind {
            ModelKind::Lr => HyperParams::Lr(LinearParams::default()),
            ModelKind::Svm => HyperParams::Svm(LinearParams::default()),
            ModelKind::Rf => HyperParams::Rf(ForestParams { seed, ..ForestParams::default() }),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            HyperParams::Lr(_) => ModelKind::Lr,
            HyperParams::Svm(_) => ModelKind::Svm,
            HyperParams::Rf(_) => ModelKind::Rf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HyperParams::Lr(p) | HyperParams::Svm(p) => {
                if *p.c.numer() == 0 {
                    return Err(Error::Config("C must be positive".into()));
                }
                if !(p.tol > 0.0 && p.tol.is_finite()) || p.max_iter == 0 {
                    return Err(Error::Config("tolerance and max_iter must be positive".into()));
                }
            }
            HyperParams::Rf(p) => {
                if p.n_trees == 0 || p.min_samples_leaf == 0 || p.min_samples_split < 2 {
                    return Err(Error::Config(
                        "n_trees ≥ 1, min_samples_leaf ≥ 1 and min_samples_split ≥ 2 required".into(),
                    ));
                }
                if p.max_depth == Some(0) || matches!(p.max_features, MaxFeatures::Fixed(0)) {
                    return Err(Error::Config("max_depth and max_features must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Compact `key=value` rendering used for result tables.
    pub fn label(&self) -> String {
        match self {
            HyperParams::Lr(p) | HyperParams::Svm(p) => {
                format!("C={} class_weight={:?}", ratio_decimal(p.c), p.class_weight).to_lowercase()
            }
            HyperParams::Rf(p) => format!(
                "n_trees={} max_depth={} min_samples_split={} min_samples_leaf={}",
                p.n_trees,
                p.max_depth.map_or("none".to_string(), |d| d.to_string()),
                p.min_samples_split,
                p.min_samples_leaf
            ),
        }
    }
}

fn ratio_decimal(r: Ratio<u64>) -> String {
    let v = *r.numer() as f64 / *r.denom() as f64;
    format!("{v}")
}

/// Binary scorer for one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Submodel<T> {
    Linear { weights: Vec<T>, bias: T },
    Forest(Forest<T>),
    /// Fallback for a label column with a single class.
    Constant { score: T },
}

impl<T: Scalar> Submodel<T> {
    fn raw(&self, x: &RowView<'_, T>) -> T {
        match self {
            Submodel::Linear { weights, bias } => x.dot(weights) + *bias,
            Submodel::Forest(f) => f.predict(x),
            Submodel::Constant { score } => *score,
        }
    }
}

/// Labels that needed a fallback or did not reach the solver tolerance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingNotes {
    pub degenerate_labels: Vec<String>,
    pub unconverged_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OvrModel<T> {
    pub kind: ModelKind,
    pub label_space: LabelSpace,
    pub per_label: Vec<Submodel<T>>,
    pub feature_kind: FeatureKind,
    pub dim: usize,
    pub hyper: HyperParams,
    pub notes: TrainingNotes,
}

/// Sample weights `n / (2·n_class)` for a binary column.
pub fn balanced_weights<T: Scalar>(y: &[bool]) -> Vec<T> {
    let n = y.len();
    let pos = y.iter().filter(|&&b| b).count();
    let wp = T::from_count(n) / T::from_count(2 * pos.max(1));
    let wn = T::from_count(n) / T::from_count(2 * (n - pos).max(1));
    y.iter().map(|&b| if b { wp } else { wn }).collect()
}

enum Fitted<T> {
    Model(Submodel<T>, bool),
    Degenerate(Submodel<T>),
}

/// Trains one binary submodel per label column of `y`.
pub fn train_ovr<T: Scalar>(
    x: &FeatureMatrix<T>,
    y: &LabelMatrix,
    label_space: &LabelSpace,
    feature_kind: FeatureKind,
    hyper: &HyperParams,
) -> Result<OvrModel<T>> {
    hyper.validate()?;
    if x.n_rows() != y.n_rows {
        return Err(Error::DimensionMismatch { expected: y.n_rows, actual: x.n_rows() });
    }
    if y.n_labels != label_space.len() {
        return Err(Error::DimensionMismatch { expected: label_space.len(), actual: y.n_labels });
    }
    if x.n_rows() == 0 {
        return Err(Error::InvalidInput("cannot train on an empty matrix".into()));
    }
    let kind = hyper.kind();
    let fitted: Vec<Fitted<T>> = (0..y.n_labels)
        .into_par_iter()
        .map(|j| fit_label(x, &y.column(j), hyper, j))
        .collect();

    let mut notes = TrainingNotes::default();
    let mut per_label = Vec::with_capacity(fitted.len());
    for (j, f) in fitted.into_iter().enumerate() {
        let name = label_space.labels()[j].clone();
        match f {
            Fitted::Model(m, converged) => {
                if !converged {
                    notes.unconverged_labels.push(name);
                }
                per_label.push(m);
            }
            Fitted::Degenerate(m) => {
                notes.degenerate_labels.push(name);
                per_label.push(m);
            }
        }
    }
    Ok(OvrModel {
        kind,
        label_space: label_space.clone(),
        per_label,
        feature_kind,
        dim: x.dim(),
        hyper: hyper.clone(),
        notes,
    })
}

fn fit_label<T: Scalar>(x: &FeatureMatrix<T>, y: &[bool], hyper: &HyperParams, label_index: usize) -> Fitted<T> {
    let n = y.len();
    let pos = y.iter().filter(|&&b| b).count();
    if pos == 0 || pos == n {
        let rate = T::from_count(pos) / T::from_count(n);
        let score = match hyper {
            // base rate mapped onto the margin scale: −1 or +1
            HyperParams::Svm(_) => T::lit(2.0) * rate - T::one(),
            _ => rate,
        };
        return Fitted::Degenerate(Submodel::Constant { score });
    }
    match hyper {
        HyperParams::Lr(p) | HyperParams::Svm(p) => {
            let signs: Vec<T> = y.iter().map(|&b| if b { T::one() } else { -T::one() }).collect();
            let weights = match p.class_weight {
                ClassWeight::None => vec![T::one(); n],
                ClassWeight::Balanced => balanced_weights(y),
            };
            let c = T::from_u64(*p.c.numer()).unwrap() / T::from_u64(*p.c.denom()).unwrap();
            let tol = T::lit(p.tol);
            let fit = if matches!(hyper, HyperParams::Lr(_)) {
                let obj = LogisticObjective { x, y: &signs, sample_weight: &weights, c };
                fit_logistic(&obj, tol, p.max_iter)
            } else {
                fit_svm(x, &signs, &weights, c, tol, p.max_iter)
            };
            Fitted::Model(Submodel::Linear { weights: fit.weights, bias: fit.bias }, fit.converged)
        }
        HyperParams::Rf(p) => Fitted::Model(Submodel::Forest(fit_forest(x, y, &p.config(), label_index)), true),
    }
}

fn check_row<T: Scalar>(row: &RowView<'_, T>, dim: usize) -> Result<()> {
    match row {
        RowView::Dense(v) if v.len() != dim => Err(Error::DimensionMismatch { expected: dim, actual: v.len() }),
        RowView::Sparse(s) => match s.indices.last() {
            Some(&j) if j as usize >= dim => Err(Error::DimensionMismatch { expected: dim, actual: j as usize + 1 }),
            _ => Ok(()),
        },
        _ => Ok(()),
    }
}

impl<T: Scalar> OvrModel<T> {
    pub fn n_labels(&self) -> usize {
        self.per_label.len()
    }

    /// Probabilities (lr), margins (svm) or mean leaf fractions (rf).
    pub fn score_row(&self, row: RowView<'_, T>) -> Result<Vec<T>> {
        check_row(&row, self.dim)?;
        Ok(self
            .per_label
            .iter()
            .map(|m| {
                let raw = m.raw(&row);
                match (self.kind, m) {
                    (ModelKind::Lr, Submodel::Linear { .. }) => sigmoid(raw),
                    _ => raw,
                }
            })
            .collect())
    }

    pub fn score_matrix(&self, x: &FeatureMatrix<T>) -> Result<Vec<Vec<T>>> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: x.dim() });
        }
        (0..x.n_rows()).into_par_iter().map(|i| self.score_row(x.row(i))).collect()
    }

    /// Multiplies every linear submodel's `(w, b)` by `lambda`.
    pub fn scaled(&self, lambda: T) -> Self {
        let mut out = self.clone();
        for m in &mut out.per_label {
            match m {
                Submodel::Linear { weights, bias } => {
                    weights.iter_mut().for_each(|w| *w = *w * lambda);
                    *bias = *bias * lambda;
                }
                Submodel::Constant { score } if self.kind == ModelKind::Svm => *score = *score * lambda,
                _ => {}
            }
        }
        out
    }
}

pub fn score_labels<T: Scalar>(model: &OvrModel<T>, x: RowView<'_, T>) -> Result<Vec<T>> {
    model.score_row(x)
}

/// Indices sorted by descending score; equal scores keep index order.
pub fn rank_indices<T: PartialOrd>(scores: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RankedLabel<T> {
    pub label: String,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RankedPrediction<T> {
    #[serde(rename = "id")]
    pub report_id: String,
    pub ranking: Vec<RankedLabel<T>>,
}

impl<T: Scalar> RankedPrediction<T> {
    pub fn labels(&self) -> Vec<&str> {
        self.ranking.iter().map(|r| r.label.as_str()).collect()
    }
}

pub fn rank_labels<T: Scalar>(scores: &[T], space: &LabelSpace) -> Result<Vec<RankedLabel<T>>> {
    if scores.len() != space.len() {
        return Err(Error::DimensionMismatch { expected: space.len(), actual: scores.len() });
    }
    if let Some(j) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(j));
    }
    Ok(rank_indices(scores)
        .into_iter()
        .map(|j| RankedLabel { label: space.labels()[j].clone(), score: scores[j] })
        .collect())
}

pub fn predict<T: Scalar>(model: &OvrModel<T>, report_id: &str, x: RowView<'_, T>) -> Result<RankedPrediction<T>> {
    let scores = model.score_row(x)?;
    Ok(RankedPrediction { report_id: report_id.to_owned(), ranking: rank_labels(&scores, &model.label_space)? })
}
