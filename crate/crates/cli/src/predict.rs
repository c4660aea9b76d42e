//! Ranking new report text with a saved bundle.

use std::path::Path;

use bugloc_core::evalrank::top_k;
use bugloc_core::features::FittedFeatures;
use bugloc_core::models::{load_model, rank_labels, RankedLabel};
use bugloc_core::textprep::process_text;
use bugloc_core::Bundle;
use serde::{Deserialize, Serialize};

use crate::artifacts::file_digest;
use crate::error::{CliError, CliResult};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOutput {
    pub ranking: Vec<RankedLabel<f64>>,
}

/// An immutable loaded bundle; shared read-only across requests.
#[derive(Debug)]
pub struct Predictor {
    bundle: Bundle,
    version: String,
}

impl Predictor {
    pub fn new(bundle: Bundle, version: impl Into<String>) -> CliResult<Self> {
        if !matches!(bundle.features, FittedFeatures::Tfidf(_)) {
            return Err(CliError::new(
                "unsupported_bundle",
                "this bundle was trained on dense vectors; raw text can only be ranked by TF-IDF bundles",
            ));
        }
        Ok(Predictor {
            bundle,
            version: version.into(),
        })
    }

    /// Loads a bundle; the model version is `<kind>-<first 12 hex of its sha256>`.
    pub fn load(path: &Path) -> CliResult<Self> {
        let bundle = load_model::<f64>(path)?;
        let digest = file_digest(path)?;
        let version = format!("{}-{}", bundle.model.kind, &digest[..12]);
        Self::new(bundle, version)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn bundle(&self) -> &Bundle {
        &self.bundle
    }

    pub fn predict(&self, title: &str, description: &str, k: usize) -> CliResult<PredictOutput> {
        if k == 0 {
            return Err(CliError::new("invalid_input", "top_k must be at least 1"));
        }
        let tokens = process_text(&format!("{title} {description}"), &self.bundle.preprocess);
        if tokens.is_empty() {
            return Err(CliError::new(
                "empty_text",
                "the report text is empty after preprocessing; include a description with concrete \
                 symptoms, component names or error messages",
            ));
        }
        let FittedFeatures::Tfidf(tfidf) = &self.bundle.features else {
            unreachable!("checked in Predictor::new");
        };
        let x = tfidf.transform(&tokens);
        let scores = self.bundle.model.score_row(bugloc_core::features::RowView::Sparse(&x))?;
        let ranking = rank_labels(&scores, &self.bundle.model.label_space)?;
        Ok(PredictOutput {
            ranking: top_k(&ranking, k),
        })
    }
}
