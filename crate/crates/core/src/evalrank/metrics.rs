//! Per-report ranking metrics and their aggregates.
//!
//! Rankings are full label orderings and truth is a set of relevant labels.
//! All values are exact in the chosen [`Fraction`] type.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Fraction;

pub const DEFAULT_KS: [usize; 4] = [1, 3, 5, 10];

fn prefix<L>(ranking: &[L], k: usize) -> &[L] {
    &ranking[..k.min(ranking.len())]
}

/// 1 if any of the first `k` ranked labels is relevant. `k` beyond the
/// ranking length uses the whole ranking.
pub fn hit_at_k<L: PartialEq, F: Fraction>(ranking: &[L], truth: &[L], k: usize) -> F {
    assert!(k >= 1, "k must be at least 1");
    let hit = prefix(ranking, k).iter().any(|l| truth.contains(l));
    F::ratio(hit as usize, 1)
}

/// `|top-k ∩ truth| / |truth|`; `None` for empty truth.
pub fn recall_at_k<L: PartialEq, F: Fraction>(ranking: &[L], truth: &[L], k: usize) -> Option<F> {
    assert!(k >= 1, "k must be at least 1");
    if truth.is_empty() {
        return None;
    }
    let found = prefix(ranking, k).iter().filter(|l| truth.contains(l)).count();
    Some(F::ratio(found, truth.len()))
}

/// Mean of precision@r over the ranks r holding a relevant label, divided by
/// `|truth|`; `None` for empty truth.
pub fn average_precision<L: PartialEq, F: Fraction>(ranking: &[L], truth: &[L]) -> Option<F> {
    if truth.is_empty() {
        return None;
    }
    let mut found = 0;
    let mut sum = F::zero();
    for (r, l) in ranking.iter().enumerate() {
        if truth.contains(l) {
            found += 1;
            sum = sum + F::ratio(found, r + 1);
        }
    }
    Some(sum / F::ratio(truth.len(), 1))
}

/// `1 / rank` of the first relevant label, 0 if none is ranked; `None` for
/// empty truth.
pub fn reciprocal_rank<L: PartialEq, F: Fraction>(ranking: &[L], truth: &[L]) -> Option<F> {
    if truth.is_empty() {
        return None;
    }
    Some(match ranking.iter().position(|l| truth.contains(l)) {
        Some(r) => F::ratio(1, r + 1),
        None => F::zero(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<F> {
    pub hit_at: BTreeMap<usize, F>,
    pub recall_at: BTreeMap<usize, F>,
    #[serde(rename = "map")]
    pub map_score: F,
    pub mrr: F,
    pub n_reports: usize,
    /// reports left out because none of their labels is rankable
    pub excluded_empty_truth: usize,
    /// reports with no relevant label anywhere in the ranking
    pub no_relevant_ranked: usize,
    /// requested k values larger than the ranking length
    pub truncated_ks: Vec<usize>,
}

impl<F: Fraction> MetricsReport<F> {
    pub fn to_f64(&self) -> MetricsReport<f64> {
        MetricsReport {
            hit_at: self.hit_at.iter().map(|(k, v)| (*k, v.to_f64())).collect(),
            recall_at: self.recall_at.iter().map(|(k, v)| (*k, v.to_f64())).collect(),
            map_score: self.map_score.to_f64(),
            mrr: self.mrr.to_f64(),
            n_reports: self.n_reports,
            excluded_empty_truth: self.excluded_empty_truth,
            no_relevant_ranked: self.no_relevant_ranked,
            truncated_ks: self.truncated_ks.clone(),
        }
    }
}

/// Aggregates metrics over `(ranking, truth)` cases by macro-averaging over
/// reports. Cases with empty truth are excluded and counted.
pub fn aggregate<'a, L, F, I>(cases: I, ks: &[usize]) -> Result<MetricsReport<F>>
where
    L: PartialEq + 'a,
    F: Fraction,
    I: IntoIterator<Item = (&'a [L], &'a [L])>,
{
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("k values must be positive".into()));
    }
    let mut hits: Vec<Vec<F>> = vec![Vec::new(); ks.len()];
    let mut recalls: Vec<Vec<F>> = vec![Vec::new(); ks.len()];
    let mut aps = Vec::new();
    let mut rrs = Vec::new();
    let mut excluded = 0;
    let mut no_relevant = 0;
    let mut max_len = usize::MAX;
    for (ranking, truth) in cases {
        max_len = max_len.min(ranking.len());
        let Some(ap) = average_precision::<L, F>(ranking, truth) else {
            excluded += 1;
            continue;
        };
        let rr = reciprocal_rank::<L, F>(ranking, truth).expect("non-empty truth");
        if rr == F::zero() {
            no_relevant += 1;
        }
        for (i, &k) in ks.iter().enumerate() {
            hits[i].push(hit_at_k(ranking, truth, k));
            recalls[i].push(recall_at_k(ranking, truth, k).expect("non-empty truth"));
        }
        aps.push(ap);
        rrs.push(rr);
    }
    if aps.is_empty() {
        return Err(Error::InvalidInput("no report with a rankable true label to evaluate".into()));
    }
    Ok(MetricsReport {
        hit_at: ks.iter().zip(&hits).map(|(&k, v)| (k, F::mean(v).unwrap())).collect(),
        recall_at: ks.iter().zip(&recalls).map(|(&k, v)| (k, F::mean(v).unwrap())).collect(),
        map_score: F::mean(&aps).unwrap(),
        mrr: F::mean(&rrs).unwrap(),
        n_reports: aps.len(),
        excluded_empty_truth: excluded,
        no_relevant_ranked: no_relevant,
        truncated_ks: ks.iter().copied().filter(|&k| k > max_len).collect(),
    })
}

/// Row names of the metrics table, in order.
pub fn metric_rows(ks: &[usize]) -> Vec<String> {
    let mut rows: Vec<String> = ks.iter().map(|k| format!("Top-{k}")).collect();
    rows.extend(ks.iter().map(|k| format!("Recall@{k}")));
    rows.push("MAP".into());
    rows.push("MRR".into());
    rows
}

/// Metrics as rows, one column per named configuration, four decimals.
pub fn metrics_table_csv(columns: &[(String, MetricsReport<f64>)], ks: &[usize]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["metric".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    let fmt = |v: Option<&f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
    for (i, row) in metric_rows(ks).into_iter().enumerate() {
        let mut rec = vec![row];
        for (_, m) in columns {
            let v = if i < ks.len() {
                m.hit_at.get(&ks[i])
            } else if i < 2 * ks.len() {
                m.recall_at.get(&ks[i - ks.len()])
            } else if i == 2 * ks.len() {
                Some(&m.map_score)
            } else {
                Some(&m.mrr)
            };
            rec.push(fmt(v));
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
