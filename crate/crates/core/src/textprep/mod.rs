//! Deterministic normalization of bug-report text into token sequences.
//!
//! The pipeline runs in a fixed order: template stripping, de-camelcasing,
//! lowercasing, punctuation replacement, whitespace tokenization, stopword
//! removal and lemmatization.

mod lemma;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use lemma::{Lemmatizer, SuffixRule, SUFFIX_RULES};

use crate::corpus::{BugReport, LabeledExample};
use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");
const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.txt");

/// Compiled template patterns together with their source strings.
#[derive(Debug, Clone)]
pub struct TemplatePatterns {
    sources: Vec<String>,
    compiled: Vec<Regex>,
}

impl TemplatePatterns {
    pub fn new(patterns: impl IntoIterator<Item = String>) -> Result<Self> {
        let sources: Vec<String> = patterns.into_iter().filter(|p| !p.trim().is_empty()).collect();
        let compiled = sources
            .iter()
            .map(|p| Regex::new(p).map_err(|e| Error::Config(format!("invalid template pattern `{p}`: {e}"))))
            .collect::<Result<_>>()?;
        Ok(TemplatePatterns { sources, compiled })
    }

    /// One pattern per line.
    pub fn parse_lines(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::to_owned))
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }
}

impl PartialEq for TemplatePatterns {
    fn eq(&self, other: &Self) -> bool {
        self.sources == other.sources
    }
}

impl Serialize for TemplatePatterns {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.sources.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TemplatePatterns {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let sources = Vec::<String>::deserialize(d)?;
        TemplatePatterns::new(sources).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub templates: TemplatePatterns,
    pub stopwords: BTreeSet<String>,
    pub lemmatizer: Lemmatizer,
    pub decamel: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            templates: TemplatePatterns::parse_lines(DEFAULT_TEMPLATES).expect("embedded templates compile"),
            stopwords: parse_word_list(DEFAULT_STOPWORDS),
            lemmatizer: Lemmatizer::default(),
            decamel: true,
        }
    }
}

impl PreprocessConfig {
    /// Builds a config from optional override files; absent files keep the
    /// embedded defaults.
    pub fn from_files(
        templates: Option<&Path>,
        stopwords: Option<&Path>,
        lemma_exceptions: Option<&Path>,
    ) -> Result<Self> {
        let mut cfg = PreprocessConfig::default();
        if let Some(p) = templates {
            cfg.templates = TemplatePatterns::parse_lines(&read(p)?)?;
        }
        if let Some(p) = stopwords {
            cfg.stopwords = parse_word_list(&read(p)?);
        }
        if let Some(p) = lemma_exceptions {
            cfg.lemmatizer = Lemmatizer::load(p)?;
        }
        Ok(cfg)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

pub fn strip_templates(text: &str, patterns: &TemplatePatterns) -> String {
    let mut out = text.to_owned();
    for re in &patterns.compiled {
        if re.is_match(&out) {
            out = re.replace_all(&out, "").into_owned();
        }
    }
    out
}

/// Splits identifiers at lower/digit→upper boundaries and before the last
/// capital of an acronym run that is followed by a lowercase letter.
pub fn decamel(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        if i > 0 && c.is_uppercase() {
            let prev = chars[i - 1];
            let lower_to_upper = prev.is_lowercase() || prev.is_ascii_digit();
            let acronym_end =
                prev.is_uppercase() && chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if lower_to_upper || acronym_end {
                out.push(' ');
            }
        }
        out.push(c);
    }
    out
}

pub fn lowercase(text: &str) -> String {
    text.to_lowercase()
}

/// Replaces every character outside `[a-z0-9]` and whitespace with a space.
pub fn replace_punctuation(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_ascii_lowercase() || c.is_ascii_digit() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect()
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

pub fn remove_stopwords(tokens: Vec<String>, stopwords: &BTreeSet<String>) -> Vec<String> {
    tokens.into_iter().filter(|t| !stopwords.contains(t)).collect()
}

/// Lemmatizes each token; a lemma that is itself a stopword is dropped.
pub fn lemmatize_tokens(tokens: Vec<String>, config: &PreprocessConfig) -> Vec<String> {
    tokens
        .iter()
        .map(|t| config.lemmatizer.lemmatize(t))
        .filter(|l| !config.stopwords.contains(l) && !l.is_empty())
        .collect()
}

/// Lowercase → punctuation → tokenize → stopwords → lemmatize.
pub fn normalize(text: &str, config: &PreprocessConfig) -> Vec<String> {
    let text = replace_punctuation(&lowercase(text));
    let tokens = remove_stopwords(tokenize(&text), &config.stopwords);
    lemmatize_tokens(tokens, config)
}

/// Full pipeline over already-concatenated text.
pub fn process_text(text: &str, config: &PreprocessConfig) -> Vec<String> {
    let stripped = strip_templates(text, &config.templates);
    let split = if config.decamel {
        decamel(&stripped)
    } else {
        stripped
    };
    normalize(&split, config)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessedReport {
    pub report_id: String,
    pub tokens: Vec<String>,
    pub labels: BTreeSet<String>,
    /// Training variant this row belongs to; `None` for unaugmented data.
    pub variant: Option<String>,
}

impl ProcessedReport {
    pub fn new(report_id: impl Into<String>, tokens: Vec<String>, labels: BTreeSet<String>) -> Self {
        ProcessedReport {
            report_id: report_id.into(),
            tokens,
            labels,
            variant: None,
        }
    }

    pub fn processed_text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Serialize, Deserialize)]
struct ProcessedRow {
    id: String,
    processed_text: String,
    label_list: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
}

impl Serialize for ProcessedReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ProcessedRow {
            id: self.report_id.clone(),
            processed_text: self.processed_text(),
            label_list: self.labels.clone(),
            variant: self.variant.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProcessedReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let row = ProcessedRow::deserialize(d)?;
        Ok(ProcessedReport {
            report_id: row.id,
            tokens: tokenize(&row.processed_text),
            labels: row.label_list,
            variant: row.variant,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleaningReason {
    EmptyDescription,
    EmptyTokens,
}

/// Record of a report removed during cleaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningRecord {
    pub id: String,
    pub reason: CleaningReason,
}

/// Anything carrying a title, description and (possibly empty) label set.
pub trait ReportText {
    fn id(&self) -> &str;
    fn title(&self) -> &str;
    fn description(&self) -> &str;
    fn labels(&self) -> BTreeSet<String>;
}

impl ReportText for BugReport {
    fn id(&self) -> &str {
        &self.id
    }
    fn title(&self) -> &str {
        &self.title
    }
    fn description(&self) -> &str {
        &self.description
    }
    fn labels(&self) -> BTreeSet<String> {
        BTreeSet::new()
    }
}

impl ReportText for LabeledExample {
    fn id(&self) -> &str {
        &self.report_id
    }
    fn title(&self) -> &str {
        &self.title
    }
    fn description(&self) -> &str {
        &self.description
    }
    fn labels(&self) -> BTreeSet<String> {
        self.labels.clone()
    }
}

pub fn preprocess_report<R: ReportText>(
    report: &R,
    config: &PreprocessConfig,
) -> std::result::Result<ProcessedReport, CleaningRecord> {
    let reject = |reason| CleaningRecord {
        id: report.id().to_owned(),
        reason,
    };
    if report.description().trim().is_empty() {
        return Err(reject(CleaningReason::EmptyDescription));
    }
    let text = format!("{} {}", report.title(), report.description());
    let tokens = process_text(&text, config);
    if tokens.is_empty() {
        return Err(reject(CleaningReason::EmptyTokens));
    }
    Ok(ProcessedReport::new(report.id(), tokens, report.labels()))
}

/// Preprocesses a corpus, returning kept reports (input order) and removals.
pub fn preprocess_corpus<R: ReportText>(
    reports: &[R],
    config: &PreprocessConfig,
) -> (Vec<ProcessedReport>, Vec<CleaningRecord>) {
    let mut kept = Vec::with_capacity(reports.len());
    let mut removed = Vec::new();
    for r in reports {
        match preprocess_report(r, config) {
            Ok(p) => kept.push(p),
            Err(c) => removed.push(c),
        }
    }
    (kept, removed)
}
