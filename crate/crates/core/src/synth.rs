//! Planted-keyword corpora with known signal, for benchmarks and tests.
//!
//! Every label owns one keyword that appears in a fixed share of its reports;
//! all other tokens come from a noise vocabulary shared by every label.
//! Keywords and noise words are letter-only pseudo-words that pass through
//! preprocessing unchanged.

use std::collections::{BTreeSet, HashSet};

use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::BugReport;
use crate::datasplit::{seeded_rng, SeededRng};
use crate::textprep::ProcessedReport;

/// Label-set sizes 1..=5 in proportion to the reference corpus histogram.
pub const REFERENCE_CARDINALITY: [usize; 5] = [428, 138, 61, 20, 13];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n_reports: usize,
    /// relative label frequencies; labels with larger weight are more common
    pub label_weights: Vec<f64>,
    /// share of a label's reports that carry its keyword
    pub keyword_rate: Ratio<u64>,
    pub noise_vocabulary: usize,
    pub noise_tokens: (usize, usize),
    /// relative frequency of label-set sizes 1, 2, …
    pub cardinality: Vec<usize>,
    pub seed: u64,
}

impl PlantedSpec {
    /// Pareto-skewed label weights `1 / (j+1)^alpha`.
    pub fn pareto(n_reports: usize, n_labels: usize, alpha: f64, seed: u64) -> Self {
        PlantedSpec {
            n_reports,
            label_weights: (0..n_labels).map(|j| 1.0 / ((j + 1) as f64).powf(alpha)).collect(),
            keyword_rate: Ratio::new(4, 5),
            noise_vocabulary: 300,
            noise_tokens: (10, 25),
            cardinality: REFERENCE_CARDINALITY.to_vec(),
            seed,
        }
    }

    pub fn n_labels(&self) -> usize {
        self.label_weights.len()
    }
}

pub fn label_name(j: usize) -> String {
    format!("src/module{j:02}/")
}

/// Distinct pseudo-words of three consonant-vowel syllables plus a final
/// consonant that no suffix rule touches.
fn pseudo_words(n: usize, rng: &mut SeededRng, taken: &mut HashSet<String>) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprtvz";
    const V: &[u8] = b"aeiou";
    const END: &[u8] = b"kmnprt";
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut w = String::new();
        for _ in 0..3 {
            w.push(C[rng.random_range(0..C.len())] as char);
            w.push(V[rng.random_range(0..V.len())] as char);
        }
        w.push(END[rng.random_range(0..END.len())] as char);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn pick_weighted(weights: &[f64], rng: &mut SeededRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub reports: Vec<ProcessedReport>,
    /// keyword of label `j`
    pub keywords: Vec<String>,
    pub noise: Vec<String>,
}

/// Generates the corpus. Each label keeps its keyword in exactly
/// `⌊rate·count⌉` of its reports, chosen at random.
pub fn planted_corpus(spec: &PlantedSpec) -> PlantedCorpus {
    let mut rng = seeded_rng(spec.seed);
    let mut taken = HashSet::new();
    let keywords = pseudo_words(spec.n_labels(), &mut rng, &mut taken);
    let noise = pseudo_words(spec.noise_vocabulary, &mut rng, &mut taken);
    let card_weights: Vec<f64> = spec.cardinality.iter().map(|&c| c as f64).collect();

    let mut label_sets: Vec<BTreeSet<usize>> = Vec::with_capacity(spec.n_reports);
    for _ in 0..spec.n_reports {
        let size = (pick_weighted(&card_weights, &mut rng) + 1).min(spec.n_labels());
        let mut set = BTreeSet::new();
        while set.len() < size {
            set.insert(pick_weighted(&spec.label_weights, &mut rng));
        }
        label_sets.push(set);
    }
    // every label is used at least once
    for j in 0..spec.n_labels().min(spec.n_reports) {
        if !label_sets.iter().any(|s| s.contains(&j)) {
            label_sets[j % spec.n_reports].insert(j);
        }
    }

    let mut with_keyword = vec![BTreeSet::new(); spec.n_reports];
    for j in 0..spec.n_labels() {
        let mut owners: Vec<usize> = (0..spec.n_reports).filter(|&i| label_sets[i].contains(&j)).collect();
        let keep = (spec.keyword_rate * Ratio::from_integer(owners.len() as u64)).round().to_integer() as usize;
        for k in 0..keep {
            let pick = rng.random_range(k..owners.len());
            owners.swap(k, pick);
            with_keyword[owners[k]].insert(j);
        }
    }

    let reports = (0..spec.n_reports)
        .map(|i| {
            let n_noise = rng.random_range(spec.noise_tokens.0..=spec.noise_tokens.1);
            let mut tokens: Vec<String> = (0..n_noise).map(|_| noise[rng.random_range(0..noise.len())].clone()).collect();
            for &j in &with_keyword[i] {
                let at = rng.random_range(0..=tokens.len());
                tokens.insert(at, keywords[j].clone());
            }
            ProcessedReport {
                report_id: format!("{}", 1000 + i),
                tokens,
                labels: label_sets[i].iter().map(|&j| label_name(j)).collect(),
                variant: None,
            }
        })
        .collect();
    PlantedCorpus { reports, keywords, noise }
}

/// Raw reports whose text preprocesses back to the planted tokens and whose
/// fix paths derive to the planted labels.
pub fn planted_bug_reports(corpus: &PlantedCorpus) -> Vec<BugReport> {
    corpus
        .reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let split = r.tokens.len().min(4);
            BugReport {
                id: r.report_id.clone(),
                date: format!("2023-{:02}-{:02}", i % 12 + 1, i % 28 + 1),
                title: r.tokens[..split].join(" "),
                description: r.tokens[split..].join(" "),
                priority: Some((i % 4) as i64 + 1),
                paths: r.labels.iter().map(|l| format!("{l}impl_{i}.cpp")).collect(),
            }
        })
        .collect()
}
