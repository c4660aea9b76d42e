//! Versioned JSON persistence for a trained model together with the feature
//! transformer and preprocessing settings it was trained with.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HyperParams, ModelKind, OvrModel, Submodel, TrainingNotes};
use crate::datasplit::LabelSpace;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FittedFeatures};
use crate::scalar::Scalar;
use crate::textprep::PreprocessConfig;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Everything needed to score raw report text.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub model: OvrModel<T>,
    pub features: FittedFeatures<T>,
    pub preprocess: PreprocessConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct FeatureRef<T> {
    transformer: FittedFeatures<T>,
    preprocess: PreprocessConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct BundleFile<T> {
    version: u32,
    scalar: String,
    kind: ModelKind,
    hyper: HyperParams,
    label_space: LabelSpace,
    feature_kind: FeatureKind,
    dim: usize,
    notes: TrainingNotes,
    feature_ref: FeatureRef<T>,
    params: Vec<Submodel<T>>,
}

impl<T: Scalar> ModelBundle<T> {
    pub fn new(model: OvrModel<T>, features: FittedFeatures<T>, preprocess: PreprocessConfig) -> Result<Self> {
        if features.dim() != model.dim || features.kind() != model.feature_kind {
            return Err(Error::DimensionMismatch { expected: model.dim, actual: features.dim() });
        }
        Ok(ModelBundle { model, features, preprocess })
    }

    pub fn to_json(&self) -> String {
        let m = &self.model;
        let file = BundleFile {
            version: MODEL_FORMAT_VERSION,
            scalar: T::NAME.to_owned(),
            kind: m.kind,
            hyper: m.hyper.clone(),
            label_space: m.label_space.clone(),
            feature_kind: m.feature_kind,
            dim: m.dim,
            notes: m.notes.clone(),
            feature_ref: FeatureRef { transformer: self.features.clone(), preprocess: self.preprocess.clone() },
            params: m.per_label.clone(),
        };
        serde_json::to_string(&file).expect("model bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::json(e, text))?;
        let version = raw
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::InvalidInput("model bundle has no `version` field".into()))?;
        if version != MODEL_FORMAT_VERSION as u64 {
            return Err(Error::Version { found: version as u32, supported: MODEL_FORMAT_VERSION });
        }
        if let Some(s) = raw.get("scalar").and_then(|v| v.as_str()) {
            if s != T::NAME {
                return Err(Error::InvalidInput(format!(
                    "model bundle stores {s} parameters, loader expects {}",
                    T::NAME
                )));
            }
        }
        let f: BundleFile<T> =
            serde_json::from_value(raw).map_err(|e| Error::InvalidInput(format!("model bundle: {e}")))?;
        if f.params.len() != f.label_space.len() {
            return Err(Error::InvalidInput(format!(
                "model bundle has {} submodels for {} labels",
                f.params.len(),
                f.label_space.len()
            )));
        }
        if f.hyper.kind() != f.kind {
            return Err(Error::InvalidInput("model bundle `kind` disagrees with `hyper`".into()));
        }
        let model = OvrModel {
            kind: f.kind,
            label_space: f.label_space,
            per_label: f.params,
            feature_kind: f.feature_kind,
            dim: f.dim,
            hyper: f.hyper,
            notes: f.notes,
        };
        ModelBundle::new(model, f.feature_ref.transformer, f.feature_ref.preprocess)
    }
}

pub fn save_model<T: Scalar>(bundle: &ModelBundle<T>, path: &Path) -> Result<()> {
    fs::write(path, bundle.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<ModelBundle<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_json(&text)
}
