//! Featurization: TF-IDF sparse vectors and standardized dense vectors.

mod dense;
mod tfidf;

use serde::{Deserialize, Serialize};

pub use dense::{load_dense_vectors, parse_dense_csv, parse_dense_jsonl, read_dense_vectors, DenseVectors, Standardizer};
pub use tfidf::{extract_ngrams, TfidfConfig, TfidfModel, TFIDF_FORMAT_VERSION};

use crate::augment::source_id;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textprep::ProcessedReport;

/// Sparse vector with strictly increasing column indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector<T> {
    pub indices: Vec<u32>,
    pub values: Vec<T>,
}

impl<T: Scalar> SparseVector<T> {
    /// Builds from unsorted (index, value) pairs; duplicate indices are summed.
    pub fn from_pairs(mut pairs: Vec<(u32, T)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut indices: Vec<u32> = Vec::with_capacity(pairs.len());
        let mut values: Vec<T> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if indices.last() == Some(&i) {
                let last = values.last_mut().unwrap();
                *last = *last + v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        SparseVector { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn l2_normalize(&mut self) {
        let n = self.norm();
        if n > T::zero() {
            for v in &mut self.values {
                *v = *v / n;
            }
        }
    }

    pub fn get(&self, j: usize) -> T {
        match self.indices.binary_search(&(j as u32)) {
            Ok(p) => self.values[p],
            Err(_) => T::zero(),
        }
    }
}

/// Borrowed view of one feature row.
#[derive(Debug, Clone, Copy)]
pub enum RowView<'a, T> {
    Sparse(&'a SparseVector<T>),
    Dense(&'a [T]),
}

impl<T: Scalar> RowView<'_, T> {
    pub fn dot(&self, w: &[T]) -> T {
        match self {
            RowView::Sparse(v) => v
                .indices
                .iter()
                .zip(&v.values)
                .map(|(&i, &x)| w[i as usize] * x)
                .fold(T::zero(), |a, b| a + b),
            RowView::Dense(x) => x.iter().zip(w).map(|(&a, &b)| a * b).fold(T::zero(), |a, b| a + b),
        }
    }

    /// `w += alpha · row`
    pub fn axpy(&self, alpha: T, w: &mut [T]) {
        match self {
            RowView::Sparse(v) => {
                for (&i, &x) in v.indices.iter().zip(&v.values) {
                    w[i as usize] = w[i as usize] + alpha * x;
                }
            }
            RowView::Dense(x) => {
                for (wi, &xi) in w.iter_mut().zip(x.iter()) {
                    *wi = *wi + alpha * xi;
                }
            }
        }
    }

    pub fn get(&self, j: usize) -> T {
        match self {
            RowView::Sparse(v) => v.get(j),
            RowView::Dense(x) => x[j],
        }
    }

    pub fn squared_norm(&self) -> T {
        match self {
            RowView::Sparse(v) => v.values.iter().map(|x| *x * *x).fold(T::zero(), |a, b| a + b),
            RowView::Dense(x) => x.iter().map(|x| *x * *x).fold(T::zero(), |a, b| a + b),
        }
    }

    /// Calls `f(column, value)` for every stored entry.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, T)) {
        match self {
            RowView::Sparse(v) => v.indices.iter().zip(&v.values).for_each(|(&i, &x)| f(i as usize, x)),
            RowView::Dense(x) => x.iter().enumerate().for_each(|(i, &v)| f(i, v)),
        }
    }
}

/// Report-aligned feature rows.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMatrix<T> {
    Sparse { rows: Vec<SparseVector<T>>, dim: usize },
    Dense { data: Vec<T>, n_rows: usize, dim: usize },
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn dense(rows: Vec<Vec<T>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Row {
                    row: i + 1,
                    message: format!("expected {dim} values, found {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(FeatureMatrix::Dense {
            data,
            n_rows: rows.len(),
            dim,
        })
    }

    pub fn n_rows(&self) -> usize {
        match self {
            FeatureMatrix::Sparse { rows, .. } => rows.len(),
            FeatureMatrix::Dense { n_rows, .. } => *n_rows,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMatrix::Sparse { dim, .. } | FeatureMatrix::Dense { dim, .. } => *dim,
        }
    }

    pub fn row(&self, i: usize) -> RowView<'_, T> {
        match self {
            FeatureMatrix::Sparse { rows, .. } => RowView::Sparse(&rows[i]),
            FeatureMatrix::Dense { data, dim, .. } => RowView::Dense(&data[i * dim..(i + 1) * dim]),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, FeatureMatrix::Sparse { .. })
    }

    /// Rows at the given positions, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            FeatureMatrix::Sparse { rows, dim } => FeatureMatrix::Sparse {
                rows: idx.iter().map(|&i| rows[i].clone()).collect(),
                dim: *dim,
            },
            FeatureMatrix::Dense { data, dim, .. } => {
                let mut out = Vec::with_capacity(idx.len() * dim);
                for &i in idx {
                    out.extend_from_slice(&data[i * dim..(i + 1) * dim]);
                }
                FeatureMatrix::Dense {
                    data: out,
                    n_rows: idx.len(),
                    dim: *dim,
                }
            }
        }
    }

    /// Column-major nonzero lists: for each column, `(row, value)` by row.
    pub fn columns(&self) -> Vec<Vec<(u32, T)>> {
        let mut cols = vec![Vec::new(); self.dim()];
        for i in 0..self.n_rows() {
            self.row(i).for_each_entry(|j, v| {
                if v != T::zero() {
                    cols[j].push((i as u32, v));
                }
            });
        }
        cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Tfidf,
    Dense,
}

/// A fitted feature transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum FittedFeatures<T> {
    Tfidf(TfidfModel<T>),
    Dense(Standardizer<T>),
}

/// How to build features for a fit.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a, T> {
    Tfidf(&'a TfidfConfig),
    Dense(&'a DenseVectors<T>),
}

impl<T: Scalar> FittedFeatures<T> {
    /// Fits on training reports only.
    pub fn fit(train: &[ProcessedReport], source: FeatureSource<'_, T>) -> Result<Self> {
        match source {
            FeatureSource::Tfidf(cfg) => {
                let docs: Vec<&[String]> = train.iter().map(|r| r.tokens.as_slice()).collect();
                Ok(FittedFeatures::Tfidf(TfidfModel::fit(&docs, cfg)?))
            }
            FeatureSource::Dense(vectors) => {
                let m = vectors.align(train.iter().map(|r| r.report_id.as_str()))?;
                Ok(FittedFeatures::Dense(Standardizer::fit(&m)?))
            }
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FittedFeatures::Tfidf(_) => FeatureKind::Tfidf,
            FittedFeatures::Dense(_) => FeatureKind::Dense,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FittedFeatures::Tfidf(m) => m.dim(),
            FittedFeatures::Dense(s) => s.dim(),
        }
    }

    /// Transforms reports; dense transformers need the vector source.
    pub fn transform(&self, reports: &[ProcessedReport], vectors: Option<&DenseVectors<T>>) -> Result<FeatureMatrix<T>> {
        match self {
            FittedFeatures::Tfidf(m) => Ok(m.transform_all(reports.iter().map(|r| r.tokens.as_slice()))),
            FittedFeatures::Dense(s) => {
                let vectors = vectors.ok_or_else(|| {
                    Error::InvalidInput("dense features require a vector file for these reports".into())
                })?;
                let m = vectors.align(reports.iter().map(|r| r.report_id.as_str()))?;
                s.apply(&m)
            }
        }
    }

    pub fn tfidf(&self) -> Option<&TfidfModel<T>> {
        match self {
            FittedFeatures::Tfidf(m) => Some(m),
            FittedFeatures::Dense(_) => None,
        }
    }
}

/// Vector lookup falls back to the source report for augmented copies.
pub(crate) fn lookup_id<'a, V>(map: &'a std::collections::HashMap<String, V>, id: &str) -> Option<&'a V> {
    map.get(id).or_else(|| map.get(source_id(id)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_from_pairs_merges() {
        let v = SparseVector::from_pairs(vec![(3, 1.0), (1, 2.0), (3, 0.5)]);
        assert_eq!(v.indices, vec![1, 3]);
        assert_eq!(v.values, vec![2.0, 1.5]);
        assert_eq!(v.get(3), 1.5);
        assert_eq!(v.get(2), 0.0);
    }

    #[test]
    fn row_views_agree() {
        let dense = FeatureMatrix::dense(vec![vec![0.0, 2.0, 0.0, 1.0]]).unwrap();
        let sparse = FeatureMatrix::Sparse {
            rows: vec![SparseVector::from_pairs(vec![(1, 2.0), (3, 1.0)])],
            dim: 4,
        };
        let w = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(dense.row(0).dot(&w), sparse.row(0).dot(&w));
        assert_eq!(dense.columns(), sparse.columns());
        assert!(FeatureMatrix::dense(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
