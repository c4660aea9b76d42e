use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{lookup_id, FeatureMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Precomputed per-report vectors of uniform dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVectors<T> {
    dim: usize,
    vectors: HashMap<String, Vec<T>>,
}

impl<T: Scalar> DenseVectors<T> {
    pub fn new(rows: Vec<(String, Vec<T>)>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.1.len());
        let mut vectors = HashMap::with_capacity(rows.len());
        for (i, (id, v)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Row {
                    row: i + 1,
                    message: format!("expected {dim} values, found {}", v.len()),
                });
            }
            if let Some(x) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Row {
                    row: i + 1,
                    message: format!("non-finite value at position {x}"),
                });
            }
            if vectors.insert(id.clone(), v).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(DenseVectors { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[T]> {
        lookup_id(&self.vectors, id).map(Vec::as_slice)
    }

    /// Rows in `ids` order. Augmented copies resolve to their source vector.
    pub fn align<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<FeatureMatrix<T>> {
        let mut data = Vec::new();
        let mut n_rows = 0;
        for id in ids {
            let v = self.get(id).ok_or_else(|| Error::MissingId(id.to_owned()))?;
            data.extend_from_slice(v);
            n_rows += 1;
        }
        Ok(FeatureMatrix::Dense {
            data,
            n_rows,
            dim: self.dim,
        })
    }
}

/// Parses `id,v0,v1,...` rows; a first row starting with `id` is a header.
pub fn parse_dense_csv<T: Scalar>(text: &str) -> Result<DenseVectors<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Row { row, message: e.to_string() })?;
        if i == 0 && rec.get(0).map(str::trim) == Some("id") {
            continue;
        }
        let mut fields = rec.iter();
        let id = fields.next().unwrap_or_default().trim().to_owned();
        let values = fields
            .map(|f| {
                f.trim().parse::<f64>().ok().and_then(T::from_f64).ok_or_else(|| Error::Row {
                    row,
                    message: format!("`{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push((id, values, row));
    }
    check_ragged(&rows)?;
    DenseVectors::new(rows.into_iter().map(|(id, v, _)| (id, v)).collect())
}

#[derive(Deserialize)]
struct JsonVector {
    id: serde_json::Value,
    vector: Vec<f64>,
}

/// Parses `{"id": ..., "vector": [...]}` lines.
pub fn parse_dense_jsonl<T: Scalar>(text: &str) -> Result<DenseVectors<T>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let v: JsonVector = serde_json::from_str(line).map_err(|e| Error::Row { row, message: e.to_string() })?;
        let id = match v.id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        let values = v
            .vector
            .into_iter()
            .map(|x| T::from_f64(x).ok_or_else(|| Error::Row { row, message: "value out of range".into() }))
            .collect::<Result<Vec<T>>>()?;
        rows.push((id, values, row));
    }
    check_ragged(&rows)?;
    DenseVectors::new(rows.into_iter().map(|(id, v, _)| (id, v)).collect())
}

fn check_ragged<T>(rows: &[(String, Vec<T>, usize)]) -> Result<()> {
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let dim = first.1.len();
    if dim == 0 {
        return Err(Error::Row { row: first.2, message: "vector has no values".into() });
    }
    for (_, v, row) in rows {
        if v.len() != dim {
            return Err(Error::Row {
                row: *row,
                message: format!("ragged vector: expected {dim} values, found {}", v.len()),
            });
        }
    }
    Ok(())
}

/// Loads a vector file (CSV or JSONL by extension) aligned to `expected_ids`.
pub fn load_dense_vectors<T: Scalar>(path: &Path, expected_ids: &[&str]) -> Result<FeatureMatrix<T>> {
    read_dense_vectors(path)?.align(expected_ids.iter().copied())
}

pub fn read_dense_vectors<T: Scalar>(path: &Path) -> Result<DenseVectors<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("ndjson") => parse_dense_jsonl(&text),
        _ => parse_dense_csv(&text),
    }
}

/// Per-dimension centering and scaling with population standard deviation.
/// Constant dimensions get a scale of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(train: &FeatureMatrix<T>) -> Result<Self> {
        let n = train.n_rows();
        if n < 2 {
            return Err(Error::InvalidInput(format!("standardizer needs at least 2 rows, got {n}")));
        }
        let dim = train.dim();
        let nf = T::from_count(n);
        let mut mean = vec![T::zero(); dim];
        let mut std = vec![T::one(); dim];
        for j in 0..dim {
            let col: Vec<T> = (0..n).map(|i| train.row(i).get(j)).collect();
            if col.iter().all(|&x| x == col[0]) {
                mean[j] = col[0];
                continue;
            }
            let m = crate::scalar::compensated_sum(col.iter().copied()) / nf;
            let var = crate::scalar::compensated_sum(col.iter().map(|&x| (x - m) * (x - m))) / nf;
            mean[j] = m;
            if var > T::zero() {
                std[j] = var.sqrt();
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect())
    }

    pub fn apply(&self, m: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        if m.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: m.dim() });
        }
        let rows = (0..m.n_rows())
            .map(|i| {
                let row: Vec<T> = (0..m.dim()).map(|j| m.row(i).get(j)).collect();
                self.apply_row(&row)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = FeatureMatrix::dense(rows)?;
        if let FeatureMatrix::Dense { dim, .. } = &mut out {
            *dim = self.dim();
        }
        Ok(out)
    }
}
