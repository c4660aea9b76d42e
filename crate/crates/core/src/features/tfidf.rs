use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, SparseVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TFIDF_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TfidfConfig {
    /// `None` keeps every term that passes `min_df`.
    pub max_features: Option<usize>,
    pub ngram_range: (usize, usize),
    pub min_df: usize,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            max_features: None,
            ngram_range: (1, 1),
            min_df: 1,
        }
    }
}

impl TfidfConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ngram_range;
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!("invalid ngram range ({lo}, {hi})")));
        }
        if self.min_df < 1 {
            return Err(Error::Config("min_df must be at least 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(Error::Config("max_features must be positive".into()));
        }
        Ok(())
    }
}

/// All n-grams of orders `lo..=hi`, space-joined, in text order per order.
pub fn extract_ngrams(tokens: &[String], (lo, hi): (usize, usize)) -> Vec<String> {
    let mut out = Vec::new();
    for n in lo..=hi {
        if n > tokens.len() {
            break;
        }
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

/// Fitted vocabulary and smoothed inverse document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel<T> {
    config: TfidfConfig,
    vocabulary: Vec<String>,
    index: HashMap<String, u32>,
    idf: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct TfidfFile<T> {
    version: u32,
    config: TfidfConfig,
    vocabulary: Vec<String>,
    idf: Vec<T>,
}

impl<T: Scalar> Serialize for TfidfModel<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TfidfFile {
            version: TFIDF_FORMAT_VERSION,
            config: self.config,
            vocabulary: self.vocabulary.clone(),
            idf: self.idf.clone(),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for TfidfModel<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = TfidfFile::<T>::deserialize(d)?;
        if f.version != TFIDF_FORMAT_VERSION {
            return Err(serde::de::Error::custom(format!(
                "unsupported tfidf version {} (expected {TFIDF_FORMAT_VERSION})",
                f.version
            )));
        }
        TfidfModel::from_parts(f.config, f.vocabulary, f.idf).map_err(serde::de::Error::custom)
    }
}

impl<T: Scalar> TfidfModel<T> {
    pub fn from_parts(config: TfidfConfig, vocabulary: Vec<String>, idf: Vec<T>) -> Result<Self> {
        if vocabulary.len() != idf.len() {
            return Err(Error::DimensionMismatch {
                expected: vocabulary.len(),
                actual: idf.len(),
            });
        }
        let index: HashMap<String, u32> = vocabulary.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        if index.len() != vocabulary.len() {
            return Err(Error::InvalidInput("duplicate vocabulary term".into()));
        }
        Ok(TfidfModel {
            config,
            vocabulary,
            index,
            idf,
        })
    }

    /// Fits on training documents. Terms with document frequency below
    /// `min_df` are dropped; if more than `max_features` remain, the most
    /// frequent (by total count, ties lexicographic) are kept. Columns are
    /// ordered lexicographically.
    pub fn fit<D: AsRef<[String]>>(docs: &[D], config: &TfidfConfig) -> Result<Self> {
        config.validate()?;
        if docs.is_empty() {
            return Err(Error::InvalidInput("cannot fit TF-IDF on an empty corpus".into()));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut total: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            let grams = extract_ngrams(doc.as_ref(), config.ngram_range);
            let mut seen: Vec<&String> = grams.iter().collect();
            seen.sort();
            seen.dedup();
            for g in seen {
                *df.entry(g.clone()).or_insert(0) += 1;
            }
            for g in grams {
                *total.entry(g).or_insert(0) += 1;
            }
        }
        let mut terms: Vec<(String, usize)> = df
            .into_iter()
            .filter(|(_, d)| *d >= config.min_df)
            .collect();
        if terms.is_empty() {
            return Err(Error::EmptyVocabulary { min_df: config.min_df });
        }
        if let Some(max) = config.max_features {
            if terms.len() > max {
                terms.sort_by(|a, b| total[&b.0].cmp(&total[&a.0]).then_with(|| a.0.cmp(&b.0)));
                terms.truncate(max);
                terms.sort_by(|a, b| a.0.cmp(&b.0));
            }
        }
        let n = T::from_count(docs.len());
        let one = T::one();
        let (vocabulary, idf): (Vec<String>, Vec<T>) = terms
            .into_iter()
            .map(|(t, d)| {
                let w = ((one + n) / (one + T::from_count(d))).ln() + one;
                (t, w)
            })
            .unzip();
        Self::from_parts(*config, vocabulary, idf)
    }

    pub fn config(&self) -> &TfidfConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[T] {
        &self.idf
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.index.contains_key(term)
    }

    /// Raw counts × idf, then L2 normalization. Unknown n-grams are ignored;
    /// an all-unknown document maps to the zero vector.
    pub fn transform(&self, tokens: &[String]) -> SparseVector<T> {
        let pairs: Vec<(u32, T)> = extract_ngrams(tokens, self.config.ngram_range)
            .iter()
            .filter_map(|g| self.index.get(g).map(|&i| (i, T::one())))
            .collect();
        let mut v = SparseVector::from_pairs(pairs);
        for (i, val) in v.indices.iter().zip(v.values.iter_mut()) {
            *val = *val * self.idf[*i as usize];
        }
        v.l2_normalize();
        v
    }

    pub fn transform_all<'a>(&self, docs: impl IntoIterator<Item = &'a [String]>) -> FeatureMatrix<T> {
        FeatureMatrix::Sparse {
            rows: docs.into_iter().map(|d| self.transform(d)).collect(),
            dim: self.dim(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tfidf model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::json(e, text))?;
        if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
            if v as u32 != TFIDF_FORMAT_VERSION {
                return Err(Error::Version {
                    found: v as u32,
                    supported: TFIDF_FORMAT_VERSION,
                });
            }
        }
        serde_json::from_value(raw).map_err(|e| Error::InvalidInput(format!("tfidf model: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
