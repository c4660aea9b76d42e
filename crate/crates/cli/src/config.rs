//! Run configuration.
//!
//! The config file is plain text, one `key = value` pair per line:
//!
//! ```text
//! # comment lines start with '#'
//! reports = data/reports.csv
//! mapping = data/mapping.csv
//! split.ratios = 0.7,0.2,0.1
//! models = lr,svm,rf
//! tfidf.max_features = none
//! ```
//!
//! Keys are case-sensitive, whitespace around `=` and the value is trimmed, a
//! key may appear once per file, and unknown keys are rejected with their line
//! number. Relative paths resolve against the working directory. Command-line
//! flags are applied after the file and each one is recorded in
//! [`RunConfig::overrides`].

use std::fs;
use std::path::{Path, PathBuf};

use bugloc_core::augment::{AugmentPlan, ORIGINAL_VARIANT};
use bugloc_core::datasplit::{parse_ratio, SplitSpec, DEFAULT_SEED};
use bugloc_core::evalrank::DEFAULT_KS;
use bugloc_core::features::{FeatureKind, TfidfConfig};
use bugloc_core::models::ModelKind;
use bugloc_core::corpus::{MAX_LABELS_PER_REPORT, MIN_LABEL_OCCURRENCE};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Override {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub config_file: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub thesaurus: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub lemma_exceptions: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub max_labels: usize,
    pub min_label_occurrence: usize,
    pub decamel: bool,
    pub split: SplitSpec,
    pub augment_threshold: usize,
    pub augment_factor: usize,
    pub augment_edit_rate: Ratio<u64>,
    pub features: FeatureKind,
    pub tfidf: TfidfConfig,
    pub models: Vec<ModelKind>,
    pub variants: Vec<String>,
    pub ks: Vec<usize>,
    pub cv_folds: usize,
    pub grid_lr: Option<PathBuf>,
    pub grid_svm: Option<PathBuf>,
    pub grid_rf: Option<PathBuf>,
    /// Refit the selected model on train + validation before the test run.
    pub refit_train_val: bool,
    pub overrides: Vec<Override>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config_file: None,
            reports: None,
            mapping: None,
            thesaurus: None,
            stopwords: None,
            lemma_exceptions: None,
            templates: None,
            vectors: None,
            out: PathBuf::from("bugloc-out"),
            seed: DEFAULT_SEED,
            max_labels: MAX_LABELS_PER_REPORT,
            min_label_occurrence: MIN_LABEL_OCCURRENCE,
            decamel: true,
            split: SplitSpec::default(),
            augment_threshold: 25,
            augment_factor: 1,
            augment_edit_rate: Ratio::new(1, 10),
            features: FeatureKind::Tfidf,
            tfidf: TfidfConfig::default(),
            models: ModelKind::ALL.to_vec(),
            variants: standard_variant_names(),
            ks: DEFAULT_KS.to_vec(),
            cv_folds: 3,
            grid_lr: None,
            grid_svm: None,
            grid_rf: None,
            refit_train_val: false,
            overrides: Vec::new(),
        }
    }
}

/// `original` followed by the four standard augmented variants.
pub fn standard_variant_names() -> Vec<String> {
    std::iter::once(ORIGINAL_VARIANT.to_owned())
        .chain(AugmentPlan::standard_variants(0).iter().map(AugmentPlan::variant_name))
        .collect()
}

pub const KEYS: [&str; 28] = [
    "reports",
    "mapping",
    "thesaurus",
    "stopwords",
    "lemma_exceptions",
    "templates",
    "vectors",
    "out",
    "seed",
    "max_labels",
    "min_label_occurrence",
    "decamel",
    "split.ratios",
    "augment.threshold",
    "augment.factor",
    "augment.edit_rate",
    "features",
    "tfidf.max_features",
    "tfidf.ngram_range",
    "tfidf.min_df",
    "models",
    "variants",
    "ks",
    "cv.folds",
    "grid.lr",
    "grid.svm",
    "grid.rf",
    "refit_train_val",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::config(format!("`{key}`: expected a number, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

pub fn parse_ks(value: &str) -> CliResult<Vec<usize>> {
    let ks: Vec<usize> = list(value).map(|k| parse_num("ks", k)).collect::<CliResult<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::config(format!("`ks`: expected positive integers, got `{value}`")));
    }
    Ok(ks)
}

pub fn parse_models(value: &str) -> CliResult<Vec<ModelKind>> {
    let models: Vec<ModelKind> = list(value).map(|m| m.parse()).collect::<Result<_, _>>()?;
    if models.is_empty() {
        return Err(CliError::config("`models` is empty"));
    }
    Ok(models)
}

fn parse_feature_kind(value: &str) -> CliResult<FeatureKind> {
    match value {
        "tfidf" => Ok(FeatureKind::Tfidf),
        "dense" => Ok(FeatureKind::Dense),
        _ => Err(CliError::config(format!("`features`: expected tfidf or dense, got `{value}`"))),
    }
}

impl RunConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| CliError::config(format!("line {}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_owned()) {
                return Err(at(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value.trim()).map_err(|e| at(e.message))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.config_file = Some(path.to_owned());
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "reports" => self.reports = path(),
            "mapping" => self.mapping = path(),
            "thesaurus" => self.thesaurus = path(),
            "stopwords" => self.stopwords = path(),
            "lemma_exceptions" => self.lemma_exceptions = path(),
            "templates" => self.templates = path(),
            "vectors" => self.vectors = path(),
            "out" => self.out = PathBuf::from(value),
            "seed" => {
                self.seed = parse_num(key, value)?;
                self.split.seed = self.seed;
            }
            "max_labels" => self.max_labels = parse_num(key, value)?,
            "min_label_occurrence" => self.min_label_occurrence = parse_num(key, value)?,
            "decamel" => self.decamel = parse_bool(key, value)?,
            "split.ratios" => {
                let spec: SplitSpec = value.parse()?;
                self.split.ratios = spec.ratios;
            }
            "augment.threshold" => self.augment_threshold = parse_num(key, value)?,
            "augment.factor" => self.augment_factor = parse_num(key, value)?,
            "augment.edit_rate" => self.augment_edit_rate = parse_ratio(value)?,
            "features" => self.features = parse_feature_kind(value)?,
            "tfidf.max_features" => {
                self.tfidf.max_features = match value {
                    "none" | "null" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "tfidf.ngram_range" => {
                let parts: Vec<usize> = list(value).map(|p| parse_num(key, p)).collect::<CliResult<_>>()?;
                let [lo, hi] = parts[..] else {
                    return Err(CliError::config(format!("`{key}`: expected `lo,hi`, got `{value}`")));
                };
                self.tfidf.ngram_range = (lo, hi);
            }
            "tfidf.min_df" => self.tfidf.min_df = parse_num(key, value)?,
            "models" => self.models = parse_models(value)?,
            "variants" => self.variants = list(value).map(str::to_owned).collect(),
            "ks" => self.ks = parse_ks(value)?,
            "cv.folds" => self.cv_folds = parse_num(key, value)?,
            "grid.lr" => self.grid_lr = path(),
            "grid.svm" => self.grid_svm = path(),
            "grid.rf" => self.grid_rf = path(),
            "refit_train_val" => self.refit_train_val = parse_bool(key, value)?,
            _ => return Err(CliError::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a command-line value and records it.
    pub fn override_with(&mut self, key: &str, value: &str) -> CliResult<()> {
        self.set(key, value)?;
        self.overrides.push(Override {
            key: key.to_owned(),
            value: value.to_owned(),
        });
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.split.validate()?;
        self.tfidf.validate()?;
        if self.cv_folds < 2 {
            return Err(CliError::config("`cv.folds` must be at least 2"));
        }
        if self.max_labels == 0 {
            return Err(CliError::config("`max_labels` must be positive"));
        }
        Ok(())
    }

    pub fn grid_path(&self, kind: ModelKind) -> Option<&Path> {
        match kind {
            ModelKind::Lr => self.grid_lr.as_deref(),
            ModelKind::Svm => self.grid_svm.as_deref(),
            ModelKind::Rf => self.grid_rf.as_deref(),
        }
    }
}
