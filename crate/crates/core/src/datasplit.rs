//! Reproducible multi-label stratified partitioning and label binarization.
//!
//! Partitioning follows iterative stratification: labels are processed from
//! the one with the fewest unassigned examples upward, and each example is
//! sent to the subset that still wants the most of that label. Ties go to the
//! subset with the most free capacity, then to a seeded uniform choice.
//! Subset capacities are integers from a largest-remainder rounding of
//! `ratio · N`, and a full subset never receives further examples, so the
//! final sizes equal those capacities exactly.

use std::collections::{BTreeSet, HashMap};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::ProcessedReport;

pub const DEFAULT_SEED: u64 = 42;

/// Deterministic generator used for every seeded choice in the toolkit.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parses a decimal (`0.7`) or fraction (`7/10`) into an exact ratio.
pub fn parse_ratio(s: &str) -> Result<Ratio<u64>> {
    let s = s.trim();
    let bad = || Error::Config(format!("invalid ratio `{s}`"));
    if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 18 || (int.is_empty() && frac.is_empty()) {
        return Err(bad());
    }
    let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let frac_val: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    let scale = 10u64.pow(frac.len() as u32);
    Ok(Ratio::from_integer(int) + Ratio::new(frac_val, scale))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// train, validation, test
    pub ratios: [Ratio<u64>; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [Ratio::new(7, 10), Ratio::new(2, 10), Ratio::new(1, 10)],
            seed: DEFAULT_SEED,
        }
    }
}

impl SplitSpec {
    pub fn new(ratios: [Ratio<u64>; 3], seed: u64) -> Result<Self> {
        let spec = SplitSpec { ratios, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        validate_ratios(&self.ratios)
    }

    pub fn ratios_f64(&self) -> [f64; 3] {
        self.ratios.map(|r| r.to_f64().unwrap_or(f64::NAN))
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    /// Parses `train,val,test` ratios, keeping the default seed.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<_> = s.split(',').map(parse_ratio).collect::<Result<_>>()?;
        let ratios: [Ratio<u64>; 3] = parts
            .try_into()
            .map_err(|_| Error::Config(format!("expected three ratios, got `{s}`")))?;
        SplitSpec::new(ratios, DEFAULT_SEED)
    }
}

fn validate_ratios(ratios: &[Ratio<u64>]) -> Result<()> {
    let one = Ratio::from_integer(1);
    for r in ratios {
        if r.is_zero() || *r >= one {
            return Err(Error::Config(format!("ratio {r} outside (0, 1)")));
        }
    }
    let sum: Ratio<u64> = ratios.iter().copied().sum();
    if sum != one {
        return Err(Error::Config(format!("ratios sum to {sum}, not 1")));
    }
    Ok(())
}

/// Integer subset sizes summing to `n` (largest remainder, ties to earlier subsets).
pub fn subset_capacities(ratios: &[Ratio<u64>], n: usize) -> Vec<usize> {
    let exact: Vec<Ratio<u64>> = ratios.iter().map(|r| *r * Ratio::from_integer(n as u64)).collect();
    let mut caps: Vec<usize> = exact.iter().map(|r| r.to_integer() as usize).collect();
    let mut short = n.saturating_sub(caps.iter().sum());
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| exact[b].fract().cmp(&exact[a].fract()).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        caps[i] += 1;
        short -= 1;
    }
    caps
}

/// Assigns each example (given as label-index lists) to a subset.
pub fn iterative_stratification(
    examples: &[Vec<usize>],
    n_labels: usize,
    ratios: &[Ratio<u64>],
    rng: &mut SeededRng,
) -> Vec<usize> {
    let n = examples.len();
    let k = ratios.len();
    let ratios_f: Vec<f64> = ratios.iter().map(|r| r.to_f64().unwrap_or(0.0)).collect();
    let mut capacity = subset_capacities(ratios, n);

    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
    for (i, labels) in examples.iter().enumerate() {
        for &l in labels {
            by_label[l].push(i);
        }
    }
    let mut desired: Vec<Vec<f64>> = (0..k)
        .map(|s| by_label.iter().map(|ex| ratios_f[s] * ex.len() as f64).collect())
        .collect();
    let mut remaining: Vec<usize> = by_label.iter().map(Vec::len).collect();
    let mut assignment = vec![usize::MAX; n];
    let mut unassigned = n;

    let pick = |candidates: &mut Vec<usize>, rng: &mut SeededRng| -> usize {
        if candidates.len() == 1 {
            candidates[0]
        } else {
            candidates[rng.random_range(0..candidates.len())]
        }
    };

    while unassigned > 0 {
        let label = (0..n_labels)
            .filter(|&l| remaining[l] > 0)
            .min_by_key(|&l| (remaining[l], l));
        let Some(label) = label else {
            // Examples without labels: fill by free capacity.
            for i in 0..n {
                if assignment[i] != usize::MAX {
                    continue;
                }
                let best = *capacity.iter().max().unwrap();
                let mut cands: Vec<usize> = (0..k).filter(|&s| capacity[s] == best).collect();
                let s = pick(&mut cands, rng);
                assignment[i] = s;
                capacity[s] -= 1;
            }
            break;
        };

        for &i in &by_label[label] {
            if assignment[i] != usize::MAX {
                continue;
            }
            let open: Vec<usize> = (0..k).filter(|&s| capacity[s] > 0).collect();
            let top = open
                .iter()
                .map(|&s| desired[s][label])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut cands: Vec<usize> = open.iter().copied().filter(|&s| desired[s][label] == top).collect();
            if cands.len() > 1 {
                let most = cands.iter().map(|&s| capacity[s]).max().unwrap();
                cands.retain(|&s| capacity[s] == most);
            }
            let s = pick(&mut cands, rng);
            assignment[i] = s;
            capacity[s] -= 1;
            unassigned -= 1;
            for &l in &examples[i] {
                desired[s][l] -= 1.0;
                remaining[l] -= 1;
            }
        }
    }
    refine_balance(examples, n_labels, &mut assignment, k);
    assignment
}

/// Pairwise-swap refinement after the greedy pass.
///
/// The greedy pass rounds small labels toward small subsets, and with fixed
/// subset sizes the examples left at the end (usually those carrying only
/// the most frequent label) are forced into whatever room remains. That can
/// leave a dominant label well off its corpus frequency in a small subset.
/// This pass swaps two examples with different label sets between two
/// subsets whenever the swap lowers `Σ (count/size − corpus share)²` over
/// subsets and labels. Sizes never change, and a swap never empties a
/// label's nonzero count in a subset, so coverage only ever grows.
/// Deterministic: the best swap wins, first found on ties, and the example
/// moved from a label-set class is its lowest-index member.
fn refine_balance(examples: &[Vec<usize>], n_labels: usize, assignment: &mut [usize], k: usize) -> usize {
    let n = examples.len();
    let size: Vec<f64> = (0..k).map(|s| assignment.iter().filter(|&&a| a == s).count() as f64).collect();
    let mut share = vec![0.0; n_labels];
    let mut count = vec![vec![0i64; n_labels]; k];
    for (labels, &a) in examples.iter().zip(assignment.iter()) {
        for &l in labels {
            share[l] += 1.0 / n as f64;
            count[a][l] += 1;
        }
    }
    let term = |s: usize, l: usize, c: i64| {
        let d = c as f64 / size[s] - share[l];
        d * d
    };
    let mut classes: Vec<&Vec<usize>> = examples.iter().collect();
    classes.sort();
    classes.dedup();
    let class_of: Vec<usize> = examples.iter().map(|x| classes.binary_search(&x).unwrap()).collect();
    // labels that move from the first subset to the second under a swap of classes x → y
    let moved = |x: usize, y: usize| -> Vec<(usize, i64)> {
        let (a, b) = (classes[x], classes[y]);
        a.iter()
            .filter(|l| !b.contains(l))
            .map(|&l| (l, -1))
            .chain(b.iter().filter(|l| !a.contains(l)).map(|&l| (l, 1)))
            .collect()
    };

    let mut swaps = 0;
    while swaps < n {
        let mut present = vec![vec![false; classes.len()]; k];
        for (&c, &a) in class_of.iter().zip(assignment.iter()) {
            present[a][c] = true;
        }
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for sa in 0..k {
            for sb in sa + 1..k {
                for x in (0..classes.len()).filter(|&x| present[sa][x]) {
                    for y in (0..classes.len()).filter(|&y| y != x && present[sb][y]) {
                        let mut delta = 0.0;
                        let mut allowed = true;
                        for (l, d) in moved(x, y) {
                            let (na, nb) = (count[sa][l] + d, count[sb][l] - d);
                            if (count[sa][l] > 0 && na == 0) || (count[sb][l] > 0 && nb == 0) {
                                allowed = false;
                                break;
                            }
                            delta += term(sa, l, na) - term(sa, l, count[sa][l]) + term(sb, l, nb)
                                - term(sb, l, count[sb][l]);
                        }
                        if allowed && delta < -1e-12 && best.is_none_or(|b| delta < b.0) {
                            best = Some((delta, sa, sb, x, y));
                        }
                    }
                }
            }
        }
        let Some((_, sa, sb, x, y)) = best else { break };
        let i = (0..n).find(|&i| assignment[i] == sa && class_of[i] == x).unwrap();
        let j = (0..n).find(|&j| assignment[j] == sb && class_of[j] == y).unwrap();
        assignment[i] = sb;
        assignment[j] = sa;
        for &l in &examples[i] {
            count[sa][l] -= 1;
            count[sb][l] += 1;
        }
        for &l in &examples[j] {
            count[sb][l] -= 1;
            count[sa][l] += 1;
        }
        swaps += 1;
    }
    swaps
}

/// Ordered label vocabulary, fitted on the training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new(labels: impl IntoIterator<Item = String>) -> Self {
        let labels: Vec<String> = labels.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        LabelSpace { labels, index }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Label indices present in `labels`; out-of-space labels are counted.
    pub fn indices<'a>(&self, labels: impl IntoIterator<Item = &'a String>) -> (Vec<usize>, usize) {
        let mut dropped = 0;
        let mut idx: Vec<usize> = labels
            .into_iter()
            .filter_map(|l| {
                let p = self.position(l);
                if p.is_none() {
                    dropped += 1;
                }
                p
            })
            .collect();
        idx.sort_unstable();
        (idx, dropped)
    }

    /// Labels set to 1 in a 0/1 vector.
    pub fn decode(&self, vector: &[u8]) -> BTreeSet<String> {
        vector
            .iter()
            .zip(&self.labels)
            .filter(|(v, _)| **v == 1)
            .map(|(_, l)| l.clone())
            .collect()
    }
}

impl Serialize for LabelSpace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.labels.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(d)?;
        let space = LabelSpace::new(labels.clone());
        if space.labels != labels {
            return Err(serde::de::Error::custom("label space must be sorted and unique"));
        }
        Ok(space)
    }
}

pub fn fit_label_space(train: &[ProcessedReport]) -> Result<LabelSpace> {
    if train.is_empty() {
        return Err(Error::InvalidInput("cannot fit a label space on an empty training split".into()));
    }
    if let Some(r) = train.iter().find(|r| r.labels.is_empty()) {
        return Err(Error::InvalidInput(format!("report `{}` has no labels", r.report_id)));
    }
    Ok(LabelSpace::new(train.iter().flat_map(|r| r.labels.iter().cloned())))
}

/// Multi-hot vector; the second value counts labels outside the space.
pub fn binarize(labels: &BTreeSet<String>, space: &LabelSpace) -> (Vec<u8>, usize) {
    let mut v = vec![0u8; space.len()];
    let (idx, dropped) = space.indices(labels);
    for i in idx {
        v[i] = 1;
    }
    (v, dropped)
}

/// Row-major 0/1 matrix aligned with a report list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub n_rows: usize,
    pub n_labels: usize,
    data: Vec<u8>,
}

impl LabelMatrix {
    pub fn from_rows(rows: &[Vec<u8>], n_labels: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * n_labels);
        for r in rows {
            assert_eq!(r.len(), n_labels, "ragged label row");
            data.extend_from_slice(r);
        }
        LabelMatrix {
            n_rows: rows.len(),
            n_labels,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.n_labels..(i + 1) * self.n_labels]
    }

    pub fn column(&self, j: usize) -> Vec<bool> {
        (0..self.n_rows).map(|i| self.data[i * self.n_labels + j] == 1).collect()
    }

    pub fn column_count(&self, j: usize) -> usize {
        (0..self.n_rows).filter(|&i| self.data[i * self.n_labels + j] == 1).count()
    }
}

/// Binarizes a report list; returns the matrix and the out-of-space label count.
pub fn binarize_reports(reports: &[ProcessedReport], space: &LabelSpace) -> (LabelMatrix, usize) {
    let mut dropped = 0;
    let rows: Vec<Vec<u8>> = reports
        .iter()
        .map(|r| {
            let (v, d) = binarize(&r.labels, space);
            dropped += d;
            v
        })
        .collect();
    (LabelMatrix::from_rows(&rows, space.len()), dropped)
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Vec<ProcessedReport>,
    pub val: Vec<ProcessedReport>,
    pub test: Vec<ProcessedReport>,
    pub label_space: LabelSpace,
    pub y_train: LabelMatrix,
    pub y_val: LabelMatrix,
    pub y_test: LabelMatrix,
    /// Validation/test labels not present in the training label space.
    pub out_of_space_labels: usize,
}

impl SplitResult {
    fn assemble(
        train: Vec<ProcessedReport>,
        val: Vec<ProcessedReport>,
        test: Vec<ProcessedReport>,
    ) -> Result<Self> {
        let label_space = fit_label_space(&train)?;
        let (y_train, _) = binarize_reports(&train, &label_space);
        let (y_val, dv) = binarize_reports(&val, &label_space);
        let (y_test, dt) = binarize_reports(&test, &label_space);
        Ok(SplitResult {
            train,
            val,
            test,
            label_space,
            y_train,
            y_val,
            y_test,
            out_of_space_labels: dv + dt,
        })
    }

    pub fn manifest(&self, spec: &SplitSpec) -> SplitManifest {
        let ids = |v: &[ProcessedReport]| v.iter().map(|r| r.report_id.clone()).collect();
        SplitManifest {
            seed: spec.seed,
            ratios: spec.ratios,
            ratios_decimal: spec.ratios_f64(),
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
            variants: Vec::new(),
        }
    }
}

fn label_index_lists(corpus: &[ProcessedReport]) -> (Vec<Vec<usize>>, usize) {
    let space = LabelSpace::new(corpus.iter().flat_map(|r| r.labels.iter().cloned()));
    let lists = corpus.iter().map(|r| space.indices(&r.labels).0).collect();
    (lists, space.len())
}

pub fn iterative_stratified_split(corpus: &[ProcessedReport], spec: &SplitSpec) -> Result<SplitResult> {
    spec.validate()?;
    if corpus.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "corpus of {} reports is too small for a three-way split",
            corpus.len()
        )));
    }
    if let Some(r) = corpus.iter().find(|r| r.labels.is_empty()) {
        return Err(Error::InvalidInput(format!("report `{}` has no labels", r.report_id)));
    }
    let (lists, n_labels) = label_index_lists(corpus);
    let mut rng = seeded_rng(spec.seed);
    let assignment = iterative_stratification(&lists, n_labels, &spec.ratios, &mut rng);
    let mut parts: [Vec<ProcessedReport>; 3] = Default::default();
    for (r, &s) in corpus.iter().zip(&assignment) {
        parts[s].push(r.clone());
    }
    let [train, val, test] = parts;
    SplitResult::assemble(train, val, test)
}

/// Fold assignment over a training list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl Folds {
    /// Indices (fit, held-out) for fold `f`, both in input order.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut fit = Vec::new();
        let mut held = Vec::new();
        for (i, &a) in self.assignment.iter().enumerate() {
            if a == f {
                held.push(i);
            } else {
                fit.push(i);
            }
        }
        (fit, held)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }
}

pub fn kfold_stratified(train: &[ProcessedReport], k: usize, seed: u64) -> Result<Folds> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > train.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds the training split size {}",
            train.len()
        )));
    }
    let (lists, n_labels) = label_index_lists(train);
    let ratios = vec![Ratio::new(1, k as u64); k];
    let mut rng = seeded_rng(seed);
    Ok(Folds {
        k,
        assignment: iterative_stratification(&lists, n_labels, &ratios, &mut rng),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub name: String,
    pub file: String,
    pub rows: usize,
}

/// Report ids per partition; enough to rebuild a split exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [Ratio<u64>; 3],
    pub ratios_decimal: [f64; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub variants: Vec<VariantRecord>,
}

impl SplitManifest {
    pub fn materialize(&self, corpus: &[ProcessedReport]) -> Result<SplitResult> {
        let by_id: HashMap<&str, &ProcessedReport> = corpus.iter().map(|r| (r.report_id.as_str(), r)).collect();
        let take = |ids: &[String]| -> Result<Vec<ProcessedReport>> {
            ids.iter()
                .map(|id| by_id.get(id.as_str()).map(|r| (*r).clone()).ok_or_else(|| Error::MissingId(id.clone())))
                .collect()
        };
        SplitResult::assemble(take(&self.train)?, take(&self.val)?, take(&self.test)?)
    }
}
