//! Training-set augmentation by synonym replacement and random word swap.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasplit::{fit_label_space, LabelSpace, SeededRng, SplitResult};
use crate::error::{Error, Result};
use crate::textprep::ProcessedReport;

const DEFAULT_THESAURUS: &str = include_str!("../data/thesaurus.txt");

/// token → synonyms
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thesaurus {
    entries: BTreeMap<String, Vec<String>>,
}

impl Thesaurus {
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Result<Self> {
        for (key, syns) in &entries {
            if syns.is_empty() {
                return Err(Error::Config(format!("thesaurus entry `{key}` has no synonyms")));
            }
            for s in syns {
                if s.is_empty() || s != &s.to_lowercase() || s == key || s.contains(char::is_whitespace) {
                    return Err(Error::Config(format!("invalid synonym `{s}` for `{key}`")));
                }
            }
        }
        Ok(Thesaurus { entries })
    }

    /// Parses `token: syn1, syn2, ...` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(':').ok_or_else(|| Error::Row {
                row: i + 1,
                message: "expected `token: synonym, ...`".into(),
            })?;
            let key = key.trim().to_owned();
            let syns = entries.entry(key.clone()).or_default();
            for s in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                if !syns.iter().any(|x| x == s) {
                    syns.push(s.to_owned());
                }
            }
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn embedded() -> Self {
        Self::parse(DEFAULT_THESAURUS).expect("embedded thesaurus parses")
    }

    pub fn synonyms(&self, token: &str) -> Option<&[String]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Number of edits for a token list: `max(1, ceil(rate · len))`.
pub fn edit_count(edit_rate: Ratio<u64>, len: usize) -> usize {
    let n = (edit_rate * Ratio::from_integer(len as u64)).ceil().to_integer() as usize;
    n.max(1)
}

/// Replaces up to `edit_count` thesaurus-covered tokens with a random synonym.
/// The flag is false when no token was eligible.
pub fn synonym_replace(
    tokens: &[String],
    thesaurus: &Thesaurus,
    edit_rate: Ratio<u64>,
    rng: &mut SeededRng,
) -> (Vec<String>, bool) {
    let mut out = tokens.to_vec();
    let eligible: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| thesaurus.synonyms(t).is_some())
        .map(|(i, _)| i)
        .collect();
    if tokens.is_empty() || eligible.is_empty() {
        return (out, false);
    }
    let n = edit_count(edit_rate, tokens.len()).min(eligible.len());
    let mut chosen: Vec<usize> = index::sample(rng, eligible.len(), n).into_iter().map(|k| eligible[k]).collect();
    chosen.sort_unstable();
    for pos in chosen {
        let syns = thesaurus.synonyms(&tokens[pos]).expect("eligible");
        out[pos] = syns[rng.random_range(0..syns.len())].clone();
    }
    (out, true)
}

/// Performs `edit_count` swaps of two distinct random positions.
/// The flag is false when the input is too short to swap.
pub fn random_swap(tokens: &[String], edit_rate: Ratio<u64>, rng: &mut SeededRng) -> (Vec<String>, bool) {
    let mut out = tokens.to_vec();
    let len = out.len();
    if len < 2 {
        return (out, false);
    }
    for _ in 0..edit_count(edit_rate, len) {
        let i = rng.random_range(0..len);
        let mut j = rng.random_range(0..len - 1);
        if j >= i {
            j += 1;
        }
        out.swap(i, j);
    }
    (out, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    SynonymReplacement,
    RandomSwap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Full,
    Targeted,
}

impl std::str::FromStr for Technique {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synonym_replacement" | "sr" => Ok(Technique::SynonymReplacement),
            "random_swap" | "rs" => Ok(Technique::RandomSwap),
            _ => Err(Error::Config(format!("unknown augmentation technique `{s}`"))),
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scope::Full),
            "targeted" => Ok(Scope::Targeted),
            _ => Err(Error::Config(format!("unknown augmentation scope `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub technique: Technique,
    pub scope: Scope,
    /// Labels with fewer training occurrences than this are under-represented.
    pub target_threshold: usize,
    pub factor: usize,
    pub edit_rate: Ratio<u64>,
    pub seed: u64,
}

impl AugmentPlan {
    pub fn new(technique: Technique, scope: Scope, seed: u64) -> Self {
        AugmentPlan {
            technique,
            scope,
            target_threshold: 25,
            factor: 1,
            edit_rate: Ratio::new(1, 10),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor < 1 {
            return Err(Error::Config("augmentation factor must be at least 1".into()));
        }
        if self.target_threshold < 1 {
            return Err(Error::Config("target threshold must be at least 1".into()));
        }
        if self.edit_rate.to_f64().is_none_or(|r| r <= 0.0 || r > 1.0) {
            return Err(Error::Config(format!("edit rate {} outside (0, 1]", self.edit_rate)));
        }
        Ok(())
    }

    /// Short variant name such as `rs_full` or `sr_targeted`.
    pub fn variant_name(&self) -> String {
        let t = match self.technique {
            Technique::SynonymReplacement => "sr",
            Technique::RandomSwap => "rs",
        };
        let s = match self.scope {
            Scope::Full => "full",
            Scope::Targeted => "targeted",
        };
        format!("{t}_{s}")
    }

    /// The four augmented variants: SR/RS × full/targeted.
    pub fn standard_variants(seed: u64) -> [AugmentPlan; 4] {
        [
            AugmentPlan::new(Technique::SynonymReplacement, Scope::Full, seed),
            AugmentPlan::new(Technique::RandomSwap, Scope::Full, seed),
            AugmentPlan::new(Technique::SynonymReplacement, Scope::Targeted, seed),
            AugmentPlan::new(Technique::RandomSwap, Scope::Targeted, seed),
        ]
    }
}

pub const ORIGINAL_VARIANT: &str = "original";

/// The training partition; the only input augmentation accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSet(Vec<ProcessedReport>);

impl TrainingSet {
    /// Wraps reports already known to be a training partition (e.g. a stored train file).
    pub fn from_train_partition(reports: Vec<ProcessedReport>) -> Self {
        TrainingSet(reports)
    }

    pub fn reports(&self) -> &[ProcessedReport] {
        &self.0
    }

    pub fn into_reports(self) -> Vec<ProcessedReport> {
        self.0
    }

    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        crate::corpus::label_counts(self.0.iter().map(|r| &r.labels))
    }
}

impl SplitResult {
    pub fn training_set(&self) -> TrainingSet {
        TrainingSet(self.train.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub eligible_sources: usize,
    pub copies: usize,
    /// Copies identical to their source (no eligible token / too short).
    pub unchanged_copies: usize,
}

/// Separator between a source id and the augmented copy suffix.
pub const COPY_SEPARATOR: &str = "#aug";

pub fn copy_id(source: &str, copy: usize) -> String {
    format!("{source}{COPY_SEPARATOR}{copy}")
}

/// Strips an augmented-copy suffix, returning the source report id.
pub fn source_id(id: &str) -> &str {
    match id.rfind(COPY_SEPARATOR) {
        Some(i) if id[i + COPY_SEPARATOR.len()..].bytes().all(|b| b.is_ascii_digit()) => &id[..i],
        _ => id,
    }
}

/// RNG substream for one augmented copy, keyed by (seed, report id, copy index).
pub fn copy_rng(seed: u64, report_id: &str, copy: usize) -> SeededRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((report_id.len() as u64).to_le_bytes());
    h.update(report_id.as_bytes());
    h.update((copy as u64).to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    SeededRng::from_seed(key)
}

/// Returns originals (input order) followed by augmented copies (source order).
pub fn augment_training_set(
    train: &TrainingSet,
    plan: &AugmentPlan,
    thesaurus: &Thesaurus,
    label_counts: &BTreeMap<String, usize>,
) -> Result<(TrainingSet, AugmentReport)> {
    plan.validate()?;
    let variant = plan.variant_name();
    let eligible = |r: &ProcessedReport| match plan.scope {
        Scope::Full => true,
        Scope::Targeted => r
            .labels
            .iter()
            .any(|l| label_counts.get(l).copied().unwrap_or(0) < plan.target_threshold),
    };
    let mut report = AugmentReport::default();
    let mut out = train.0.clone();
    for r in &train.0 {
        if !eligible(r) {
            continue;
        }
        report.eligible_sources += 1;
        for c in 1..=plan.factor {
            let mut rng = copy_rng(plan.seed, &r.report_id, c);
            let (tokens, changed) = match plan.technique {
                Technique::SynonymReplacement => synonym_replace(&r.tokens, thesaurus, plan.edit_rate, &mut rng),
                Technique::RandomSwap => random_swap(&r.tokens, plan.edit_rate, &mut rng),
            };
            if !changed || tokens == r.tokens {
                report.unchanged_copies += 1;
            }
            report.copies += 1;
            out.push(ProcessedReport {
                report_id: copy_id(&r.report_id, c),
                tokens,
                labels: r.labels.clone(),
                variant: Some(variant.clone()),
            });
        }
    }
    Ok((TrainingSet(out), report))
}

/// Refits the label space on an augmented variant and checks it equals the
/// original one (copies carry their source labels verbatim).
pub fn check_variant_label_space(variant: &TrainingSet, original: &LabelSpace) -> Result<LabelSpace> {
    let refit = fit_label_space(&variant.0)?;
    if &refit != original {
        return Err(Error::InvalidInput("augmented variant changed the label space".into()));
    }
    Ok(refit)
}

/// Labels of every report, for summarising a variant.
pub fn variant_labels(set: &TrainingSet) -> BTreeSet<String> {
    set.0.iter().flat_map(|r| r.labels.iter().cloned()).collect()
}
