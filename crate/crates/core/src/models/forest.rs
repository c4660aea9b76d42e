//! CART trees with weighted Gini and random forests with per-bootstrap
//! balanced class weights. Sparse rows are consumed as sorted nonzeros with
//! implicit zeros.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::datasplit::SeededRng;
use crate::features::{FeatureMatrix, RowView};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// ⌈√dim⌉
    #[default]
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, dim: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (dim as f64).sqrt().ceil() as usize,
            MaxFeatures::All => dim,
            MaxFeatures::Fixed(k) => k,
        };
        m.clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Node<T> {
    Split { feature: u32, threshold: T, left: u32, right: u32 },
    Leaf { value: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    pub fn leaf(value: T) -> Self {
        Tree { nodes: vec![Node::Leaf { value }] }
    }

    pub fn predict(&self, x: &RowView<'_, T>) -> T {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x.get(*feature as usize) <= *threshold { *left } else { *right } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left as usize).max(go(nodes, *right as usize)),
            }
        }
        go(&self.nodes, 0)
    }
}

/// Gini impurity `1 − Σ p_k²` from weighted class totals.
pub fn gini<T: Scalar>(pos: T, neg: T) -> T {
    let total = pos + neg;
    if total <= T::zero() {
        return T::zero();
    }
    let (p, q) = (pos / total, neg / total);
    T::one() - p * p - q * q
}

/// Training view: each row with its multiplicity and class weight.
struct Sample<'a, T> {
    x: &'a FeatureMatrix<T>,
    y: &'a [bool],
    /// bootstrap multiplicity (0 means out of bag)
    count: Vec<u32>,
    /// multiplicity × class weight
    weight: Vec<T>,
}

#[derive(Clone, Copy)]
struct Totals<T> {
    pos: T,
    neg: T,
    count: u32,
}

impl<T: Scalar> Totals<T> {
    fn zero() -> Self {
        Totals { pos: T::zero(), neg: T::zero(), count: 0 }
    }
    fn add(&mut self, s: &Sample<'_, T>, row: u32) {
        let r = row as usize;
        if s.y[r] {
            self.pos = self.pos + s.weight[r];
        } else {
            self.neg = self.neg + s.weight[r];
        }
        self.count += s.count[r];
    }
    fn minus(self, o: Self) -> Self {
        Totals { pos: self.pos - o.pos, neg: self.neg - o.neg, count: self.count - o.count }
    }
    /// `Σ_k w_k² / W`; larger is purer. Maximizing the sum over children
    /// minimizes weighted child Gini.
    fn proxy(self) -> T {
        let w = self.pos + self.neg;
        if w <= T::zero() {
            T::zero()
        } else {
            (self.pos * self.pos + self.neg * self.neg) / w
        }
    }
}

struct Candidate<T> {
    feature: u32,
    threshold: T,
    score: T,
}

/// Grows one tree over the rows with nonzero multiplicity.
fn grow<T: Scalar>(s: &Sample<'_, T>, params: &TreeParams, rng: &mut SeededRng) -> Tree<T> {
    let dim = s.x.dim();
    let m = params.max_features.resolve(dim);
    let rows: Vec<u32> = (0..s.y.len() as u32).filter(|&r| s.count[r as usize] > 0).collect();
    let mut nodes: Vec<Node<T>> = vec![Node::Leaf { value: T::zero() }];
    // (node slot, rows, depth)
    let mut stack = vec![(0usize, rows, 0usize)];
    while let Some((slot, rows, depth)) = stack.pop() {
        let mut tot = Totals::zero();
        for &r in &rows {
            tot.add(s, r);
        }
        let w = tot.pos + tot.neg;
        let leaf_value = if w > T::zero() { tot.pos / w } else { T::zero() };
        let count = tot.count as usize;
        let stop = tot.pos <= T::zero()
            || tot.neg <= T::zero()
            || params.max_depth.is_some_and(|d| depth >= d)
            || count < params.min_samples_split
            || count < 2 * params.min_samples_leaf;
        let best = if stop { None } else { best_split(s, &rows, tot, params, m, rng) };
        match best {
            None => nodes[slot] = Node::Leaf { value: leaf_value },
            Some(c) => {
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
                    .iter()
                    .partition(|&&r| s.x.row(r as usize).get(c.feature as usize) <= c.threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf { value: T::zero() });
                nodes.push(Node::Leaf { value: T::zero() });
                nodes[slot] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: left as u32,
                    right: left as u32 + 1,
                };
                // right pushed first so the left subtree is built first
                stack.push((left + 1, right_rows, depth + 1));
                stack.push((left, left_rows, depth + 1));
            }
        }
    }
    Tree { nodes }
}

/// Draws features without replacement among those that vary inside the node
/// until `m` varying ones have been evaluated. Features that are zero on
/// every node row are never candidates; sampling uniformly among the rest is
/// the same as drawing from all features and skipping constants.
fn best_split<T: Scalar>(
    s: &Sample<'_, T>,
    rows: &[u32],
    tot: Totals<T>,
    params: &TreeParams,
    m: usize,
    rng: &mut SeededRng,
) -> Option<Candidate<T>> {
    let mut entries: Vec<(u32, T, u32)> = Vec::new();
    for &r in rows {
        s.x.row(r as usize).for_each_entry(|j, v| {
            if v != T::zero() {
                entries.push((j as u32, v, r));
            }
        });
    }
    // group by feature now; values are sorted only for features actually drawn
    group_by_feature(&mut entries, s.x.dim());
    // contiguous ranges per feature
    let mut groups: Vec<(u32, usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=entries.len() {
        if i == entries.len() || entries[i].0 != entries[start].0 {
            if start < entries.len() {
                groups.push((entries[start].0, start, i));
            }
            start = i;
        }
    }

    let min_leaf = params.min_samples_leaf as u32;
    let mut best: Option<Candidate<T>> = None;
    let mut visited = 0;
    let mut pool: Vec<usize> = (0..groups.len()).collect();
    let mut drawn = 0;
    while visited < m && drawn < pool.len() {
        let pick = rng.random_range(drawn..pool.len());
        pool.swap(drawn, pick);
        let (feature, lo, hi) = groups[pool[drawn]];
        drawn += 1;
        entries[lo..hi].sort_unstable_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.2.cmp(&b.2)));
        let nz = &entries[lo..hi];

        // Ordered runs of equal value, with the implicit zeros slotted in.
        let mut nz_tot = Totals::zero();
        for e in nz {
            nz_tot.add(s, e.2);
        }
        let zeros = tot.minus(nz_tot);
        let n_zero_rows = rows.len() - nz.len();
        let mut runs: Vec<(T, Totals<T>)> = Vec::new();
        let mut push = |v: T, t: Totals<T>| match runs.last_mut() {
            Some((lv, lt)) if *lv == v => {
                lt.pos = lt.pos + t.pos;
                lt.neg = lt.neg + t.neg;
                lt.count += t.count;
            }
            _ => runs.push((v, t)),
        };
        let mut zero_done = n_zero_rows == 0;
        for e in nz {
            if !zero_done && e.1 > T::zero() {
                push(T::zero(), zeros);
                zero_done = true;
            }
            let mut t = Totals::zero();
            t.add(s, e.2);
            push(e.1, t);
        }
        if !zero_done {
            push(T::zero(), zeros);
        }
        if runs.len() < 2 {
            continue;
        }
        visited += 1;

        let mut left = Totals::zero();
        for k in 0..runs.len() - 1 {
            let t = runs[k].1;
            left.pos = left.pos + t.pos;
            left.neg = left.neg + t.neg;
            left.count += t.count;
            let right = tot.minus(left);
            if left.count < min_leaf || right.count < min_leaf {
                continue;
            }
            let score = left.proxy() + right.proxy();
            if best.as_ref().is_none_or(|b| score > b.score) {
                let (a, b) = (runs[k].0, runs[k + 1].0);
                let mut threshold = a + (b - a) / T::lit(2.0);
                if threshold >= b || threshold < a {
                    threshold = a;
                }
                best = Some(Candidate { feature, threshold, score });
            }
        }
    }
    best
}

/// Reorders entries so each feature's entries are contiguous, features
/// ascending. Counting sort when the node is dense enough to pay for the
/// per-feature table, comparison sort otherwise.
fn group_by_feature<T: Copy>(entries: &mut Vec<(u32, T, u32)>, dim: usize) {
    if entries.len() < dim / 4 {
        entries.sort_unstable_by_key(|e| e.0);
        return;
    }
    let mut start = vec![0usize; dim + 1];
    for e in entries.iter() {
        start[e.0 as usize + 1] += 1;
    }
    for j in 0..dim {
        start[j + 1] += start[j];
    }
    let mut out = Vec::with_capacity(entries.len());
    // every slot is written exactly once below
    out.resize(entries.len(), entries[0]);
    for &e in entries.iter() {
        let slot = &mut start[e.0 as usize];
        out[*slot] = e;
        *slot += 1;
    }
    *entries = out;
}

/// RNG for one tree of one label.
pub fn tree_rng(seed: u64, label: usize, tree: usize) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(((label as u64) << 32) | tree as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Forest<T> {
    pub trees: Vec<Tree<T>>,
}

impl<T: Scalar> Forest<T> {
    /// Mean leaf value over trees.
    pub fn predict(&self, x: &RowView<'_, T>) -> T {
        let sum = self.trees.iter().map(|t| t.predict(x)).fold(T::zero(), |a, b| a + b);
        sum / T::from_count(self.trees.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
    /// per-bootstrap `n_boot / (2·n_class_boot)` weights when set
    pub balanced_subsample: bool,
    pub seed: u64,
}

/// Fits one binary forest for the label at `label_index`.
pub fn fit_forest<T: Scalar>(x: &FeatureMatrix<T>, y: &[bool], cfg: &ForestConfig, label_index: usize) -> Forest<T> {
    let n = y.len();
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let mut rng = tree_rng(cfg.seed, label_index, t);
            let count: Vec<u32> = if cfg.bootstrap {
                let mut c = vec![0u32; n];
                for _ in 0..n {
                    c[rng.random_range(0..n)] += 1;
                }
                c
            } else {
                vec![1; n]
            };
            let (mut n_pos, mut n_neg) = (0u64, 0u64);
            for (i, &k) in count.iter().enumerate() {
                if y[i] {
                    n_pos += k as u64;
                } else {
                    n_neg += k as u64;
                }
            }
            let class_w = |is_pos: bool| -> T {
                if !cfg.balanced_subsample {
                    return T::one();
                }
                let nc = if is_pos { n_pos } else { n_neg };
                if nc == 0 {
                    T::zero()
                } else {
                    T::from_count((n_pos + n_neg) as usize) / T::from_count(2 * nc as usize)
                }
            };
            let (wp, wn) = (class_w(true), class_w(false));
            let weight = count
                .iter()
                .zip(y)
                .map(|(&k, &pos)| T::from_count(k as usize) * if pos { wp } else { wn })
                .collect();
            let sample = Sample { x, y, count, weight };
            grow(&sample, &cfg.tree, &mut rng)
        })
        .collect();
    Forest { trees }
}
