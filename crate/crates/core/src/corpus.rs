//! Bug-report ingestion, subfolder label derivation and corpus filtering.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of distinct subfolders a fix may touch before the report is
/// considered a diffuse, cross-cutting change.
pub const MAX_LABELS_PER_REPORT: usize = 5;

/// Labels occurring fewer times than this across the corpus are stripped.
pub const MIN_LABEL_OCCURRENCE: usize = 10;

pub const CSV_COLUMNS: [&str; 6] = ["Date", "Bug ID", "Bug Title", "Prio.", "Description", "Paths"];

/// Label used for files that live directly at the repository root.
pub const ROOT_LABEL: &str = "/";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub id: String,
    pub date: String,
    pub title: String,
    pub description: String,
    /// Carried for completeness; never used as a feature.
    pub priority: Option<i64>,
    pub paths: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(ReportFormat::Csv),
            "jsonl" | "ndjson" => Some(ReportFormat::Jsonl),
            _ => None,
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" => Ok(ReportFormat::Jsonl),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

pub fn load_reports(path: &Path, format: ReportFormat) -> Result<Vec<BugReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ReportFormat::Csv => parse_reports_csv(&text),
        ReportFormat::Jsonl => parse_reports_jsonl(&text),
    }
}

/// Splits a `Paths` cell on commas, trimming whitespace and dropping empties.
pub fn split_paths_cell(cell: &str) -> Vec<String> {
    cell.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn parse_reports_csv(text: &str) -> Result<Vec<BugReport>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut columns = [0usize; 6];
    for (slot, name) in columns.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_owned(),
            })?;
    }

    let mut reports = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Header is line 1.
        let row = i + 2;
        let record = record.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let field = |c: usize| -> Result<&str> {
            record.get(columns[c]).ok_or_else(|| Error::Row {
                row,
                message: format!("missing field `{}`", CSV_COLUMNS[c]),
            })
        };
        let priority = parse_priority(field(3)?, row)?;
        reports.push(BugReport {
            date: field(0)?.trim().to_owned(),
            id: field(1)?.trim().to_owned(),
            title: field(2)?.to_owned(),
            priority,
            description: field(4)?.to_owned(),
            paths: split_paths_cell(field(5)?),
        });
    }
    check_ids(&reports)?;
    Ok(reports)
}

fn parse_priority(cell: &str, row: usize) -> Result<Option<i64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse().map(Some).map_err(|_| Error::Row {
        row,
        message: format!("priority `{cell}` is not an integer"),
    })
}

#[derive(Deserialize)]
struct JsonReport {
    #[serde(default)]
    date: String,
    id: serde_json::Value,
    #[serde(default)]
    title: String,
    #[serde(default)]
    priority: Option<i64>,
    #[serde(default)]
    description: String,
    #[serde(default)]
    paths: Vec<String>,
}

pub fn parse_reports_jsonl(text: &str) -> Result<Vec<BugReport>> {
    let mut reports = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let raw: JsonReport = serde_json::from_str(line).map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let id = match raw.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(Error::Row {
                    row,
                    message: format!("id must be a string or number, got {other}"),
                })
            }
        };
        reports.push(BugReport {
            id,
            date: raw.date,
            title: raw.title,
            priority: raw.priority,
            description: raw.description,
            paths: raw.paths.iter().map(|p| p.trim().to_owned()).filter(|p| !p.is_empty()).collect(),
        });
    }
    check_ids(&reports)?;
    Ok(reports)
}

fn check_ids(reports: &[BugReport]) -> Result<()> {
    let mut seen = HashSet::with_capacity(reports.len());
    for (i, r) in reports.iter().enumerate() {
        if r.id.is_empty() {
            return Err(Error::Row {
                row: i + 1,
                message: "empty bug id".into(),
            });
        }
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    Ok(())
}

/// Curated file → subfolder mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathMapping {
    entries: BTreeMap<String, String>,
}

impl PathMapping {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (file, label) in entries {
            let file = normalize_path(&file);
            if label.trim().is_empty() {
                return Err(Error::Config(format!("empty label for `{file}`")));
            }
            if map.insert(file.clone(), label.trim().to_owned()).is_some() {
                return Err(Error::DuplicateId(file));
            }
        }
        Ok(PathMapping { entries: map })
    }

    /// Loads a `File,Occ.,Label` CSV; the `Occ.` column is optional and ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn {
                    column: name.to_owned(),
                })
        };
        let (file_col, label_col) = (col("File")?, col("Label")?);
        let mut entries = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| Error::Row {
                row,
                message: e.to_string(),
            })?;
            match (record.get(file_col), record.get(label_col)) {
                (Some(f), Some(l)) if !f.trim().is_empty() => {
                    entries.push((f.trim().to_owned(), l.to_owned()))
                }
                _ => {
                    return Err(Error::Row {
                        row,
                        message: "missing File or Label".into(),
                    })
                }
            }
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Resolves a path by exact match, then by the longest mapping key that is
    /// a whole-segment suffix of the path.
    pub fn lookup(&self, path: &str) -> Option<&str> {
        let path = normalize_path(path);
        if let Some(label) = self.entries.get(&path) {
            return Some(label);
        }
        let mut best: Option<(&str, &str)> = None;
        for (key, label) in &self.entries {
            let suffix_match = path.len() > key.len()
                && path.ends_with(key.as_str())
                && path.as_bytes()[path.len() - key.len() - 1] == b'/';
            let prefix_of_key = key.len() > path.len()
                && key.ends_with(path.as_str())
                && key.as_bytes()[key.len() - path.len() - 1] == b'/';
            if (suffix_match || prefix_of_key) && best.is_none_or(|(k, _)| key.len() > k.len()) {
                best = Some((key, label));
            }
        }
        best.map(|(_, l)| l)
    }

    /// Labels that are not a directory prefix of their file (curated overrides).
    pub fn curated_overrides(&self) -> usize {
        self.entries
            .iter()
            .filter(|(file, label)| !file.starts_with(label.trim_end_matches('/')))
            .count()
    }
}

/// Uses forward slashes and strips leading `./` and `../` segments.
pub fn normalize_path(path: &str) -> String {
    let unified = path.trim().replace('\\', "/");
    let mut rest = unified.as_str();
    loop {
        if let Some(r) = rest.strip_prefix("../") {
            rest = r;
        } else if let Some(r) = rest.strip_prefix("./") {
            rest = r;
        } else if let Some(r) = rest.strip_prefix('/') {
            rest = r;
        } else {
            break;
        }
    }
    rest.to_owned()
}

/// Immediate parent directory of `path`, with a trailing slash.
pub fn parent_dir_label(path: &str) -> String {
    let path = normalize_path(path);
    match path.rfind('/') {
        Some(i) => path[..=i].to_owned(),
        None => ROOT_LABEL.to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    #[serde(rename = "id")]
    pub report_id: String,
    pub title: String,
    pub description: String,
    #[serde(rename = "label_list")]
    pub labels: BTreeSet<String>,
}

impl LabeledExample {
    /// Title and description joined by a single space.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.description)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeriveReport {
    pub mapped_paths: usize,
    /// Paths absent from the mapping that fell back to their parent directory.
    pub fallback_paths: usize,
    pub unlabeled_reports: usize,
}

pub fn derive_labels(reports: &[BugReport], mapping: &PathMapping) -> (Vec<LabeledExample>, DeriveReport) {
    let mut stats = DeriveReport::default();
    let examples = reports
        .iter()
        .map(|r| {
            let labels: BTreeSet<String> = r
                .paths
                .iter()
                .map(|p| match mapping.lookup(p) {
                    Some(label) => {
                        stats.mapped_paths += 1;
                        label.to_owned()
                    }
                    None => {
                        stats.fallback_paths += 1;
                        parent_dir_label(p)
                    }
                })
                .collect();
            if labels.is_empty() {
                stats.unlabeled_reports += 1;
            }
            LabeledExample {
                report_id: r.id.clone(),
                title: r.title.clone(),
                description: r.description.clone(),
                labels,
            }
        })
        .collect();
    (examples, stats)
}

/// Removes examples linked to more than `max_labels` distinct subfolders.
/// Returns the survivors and the number removed.
pub fn filter_diffuse(examples: Vec<LabeledExample>, max_labels: usize) -> (Vec<LabeledExample>, usize) {
    let before = examples.len();
    let kept: Vec<_> = examples
        .into_iter()
        .filter(|e| e.labels.len() <= max_labels)
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RareLabelReport {
    pub stripped_labels: Vec<String>,
    pub dropped_examples: usize,
}

pub fn label_counts<'a>(examples: impl IntoIterator<Item = &'a BTreeSet<String>>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for labels in examples {
        for l in labels {
            *counts.entry(l.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Strips labels occurring fewer than `min_occurrence` times, then drops
/// examples left without labels. Counts are taken once, before stripping;
/// iterating to a fixpoint could remove further labels.
pub fn filter_rare_labels(
    examples: Vec<LabeledExample>,
    min_occurrence: usize,
) -> (Vec<LabeledExample>, RareLabelReport) {
    let counts = label_counts(examples.iter().map(|e| &e.labels));
    let rare: HashSet<&str> = counts
        .iter()
        .filter(|(_, &c)| c < min_occurrence)
        .map(|(l, _)| l.as_str())
        .collect();
    let mut report = RareLabelReport {
        stripped_labels: counts
            .keys()
            .filter(|l| rare.contains(l.as_str()))
            .cloned()
            .collect(),
        dropped_examples: 0,
    };
    let mut kept = Vec::with_capacity(examples.len());
    for mut e in examples {
        e.labels.retain(|l| !rare.contains(l.as_str()));
        if e.labels.is_empty() {
            report.dropped_examples += 1;
        } else {
            kept.push(e);
        }
    }
    (kept, report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub report_count: usize,
    pub label_count: usize,
    /// labels-per-report → number of reports
    pub histogram: BTreeMap<usize, usize>,
    /// Exact mean; absent for an empty corpus.
    pub mean_labels_per_report: Option<Ratio<u64>>,
    /// Sorted by descending count, ties by label.
    pub label_frequency: Vec<(String, usize)>,
}

impl CorpusStats {
    /// Builds statistics from a labels-per-report histogram alone.
    pub fn from_histogram(histogram: BTreeMap<usize, usize>) -> Self {
        let report_count = histogram.values().sum::<usize>();
        let total: usize = histogram.iter().map(|(k, v)| k * v).sum();
        CorpusStats {
            report_count,
            label_count: 0,
            mean_labels_per_report: (report_count > 0)
                .then(|| Ratio::new(total as u64, report_count as u64)),
            histogram,
            label_frequency: Vec::new(),
        }
    }

    pub fn mean_f64(&self) -> Option<f64> {
        self.mean_labels_per_report.and_then(|m| m.to_f64())
    }

    /// Mean rounded to two decimals, e.g. `1.56`.
    pub fn mean_display(&self) -> String {
        match self.mean_f64() {
            Some(m) => format!("{m:.2}"),
            None => "n/a".into(),
        }
    }

    pub fn write_label_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "count"])?;
        for (label, count) in &self.label_frequency {
            w.write_record([label.as_str(), &count.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<label csv>", e))?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "report_count": self.report_count,
            "label_count": self.label_count,
            "mean_labels": self.mean_f64(),
            "histogram": self.histogram.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        })
    }
}

pub fn corpus_stats(examples: &[LabeledExample]) -> CorpusStats {
    let mut histogram = BTreeMap::new();
    for e in examples {
        *histogram.entry(e.labels.len()).or_insert(0) += 1;
    }
    let mut stats = CorpusStats::from_histogram(histogram);
    let counts = label_counts(examples.iter().map(|e| &e.labels));
    stats.label_count = counts.len();
    let mut freq: Vec<(String, usize)> = counts.into_iter().collect();
    freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    stats.label_frequency = freq;
    stats
}

/// Runs label derivation and both filters in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub input_reports: usize,
    pub derive: DeriveReport,
    pub empty_label_reports: usize,
    pub diffuse_removed: usize,
    pub rare: RareLabelReport,
    pub output_reports: usize,
}

pub fn build_corpus(
    reports: &[BugReport],
    mapping: &PathMapping,
    max_labels: usize,
    min_occurrence: usize,
) -> (Vec<LabeledExample>, IngestReport) {
    let (examples, derive) = derive_labels(reports, mapping);
    let before = examples.len();
    let examples: Vec<_> = examples.into_iter().filter(|e| !e.labels.is_empty()).collect();
    let empty_label_reports = before - examples.len();
    let (examples, diffuse_removed) = filter_diffuse(examples, max_labels);
    let (examples, rare) = filter_rare_labels(examples, min_occurrence);
    let report = IngestReport {
        input_reports: reports.len(),
        derive,
        empty_label_reports,
        diffuse_removed,
        rare,
        output_reports: examples.len(),
    };
    (examples, report)
}

/// Index from report id to position, used when re-aligning stage outputs.
pub fn id_index<'a>(ids: impl IntoIterator<Item = &'a str>) -> HashMap<&'a str, usize> {
    ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}
