//! Bug-report fault localization: rank the subfolders most likely to hold
//! the fault behind a natural-language bug report.
//!
//! Stages: [`corpus`] ingestion and filtering, [`textprep`] normalization,
//! [`datasplit`] stratified splitting, [`augment`] training-set augmentation,
//! [`features`] TF-IDF and dense vectors, [`models`] one-vs-rest rankers and
//! [`evalrank`] metrics and tuning. Numeric code is generic over [`Scalar`];
//! the aliases below fix it to `f64`.

pub mod augment;
pub mod corpus;
pub mod datasplit;
pub mod error;
pub mod evalrank;
pub mod features;
pub mod models;
pub mod scalar;
pub mod synth;
pub mod textprep;

pub use error::{Error, Result};
pub use scalar::{Fraction, Scalar};

pub type Model = models::OvrModel<f64>;
pub type Bundle = models::ModelBundle<f64>;
pub type Features = features::FittedFeatures<f64>;
pub type Tfidf = features::TfidfModel<f64>;
pub type Matrix = features::FeatureMatrix<f64>;
pub type Vectors = features::DenseVectors<f64>;
pub type Prediction = models::RankedPrediction<f64>;
pub type Metrics = evalrank::MetricsReport<f64>;
/// Metrics computed without rounding.
pub type ExactMetrics = evalrank::MetricsReport<num_rational::Ratio<i64>>;
pub type Evaluation = evalrank::Evaluation<f64>;
pub type TuningResult = evalrank::GridResult<f64>;
