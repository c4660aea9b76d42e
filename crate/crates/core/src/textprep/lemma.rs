//! Rule-based English lemmatizer.
//!
//! An exception dictionary is consulted first; otherwise the first matching
//! suffix rule (in [`SUFFIX_RULES`] order) rewrites the token. At most one
//! rule fires per token.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_EXCEPTIONS: &str = include_str!("../../data/lemma_exceptions.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuffixRule {
    /// `entries` → `entry`
    Ies,
    /// `classes` → `class`
    Sses,
    /// `boxes` → `box`, `files` → `file`
    Es,
    /// `errors` → `error`
    S,
    /// `saving` → `save`, `loading` → `load`
    Ing,
    /// `saved` → `save`, `stopped` → `stop`
    Ed,
}

pub const SUFFIX_RULES: [SuffixRule; 6] = [
    SuffixRule::Ies,
    SuffixRule::Sses,
    SuffixRule::Es,
    SuffixRule::S,
    SuffixRule::Ing,
    SuffixRule::Ed,
];

impl SuffixRule {
    fn apply(self, word: &str) -> Option<String> {
        match self {
            SuffixRule::Ies => {
                let stem = word.strip_suffix("ies")?;
                (stem.len() >= 2).then(|| format!("{stem}y"))
            }
            SuffixRule::Sses => {
                let stem = word.strip_suffix("sses")?;
                Some(format!("{stem}ss"))
            }
            SuffixRule::Es => {
                let stem = word.strip_suffix("es")?;
                if stem.len() < 2 {
                    return None;
                }
                let drop_es = ["x", "z", "ch", "sh", "ss", "us"]
                    .iter()
                    .any(|s| stem.ends_with(s));
                Some(if drop_es {
                    stem.to_owned()
                } else {
                    format!("{stem}e")
                })
            }
            SuffixRule::S => {
                if word.len() < 4 || ["ss", "us", "is"].iter().any(|s| word.ends_with(s)) {
                    return None;
                }
                word.strip_suffix('s').map(str::to_owned)
            }
            SuffixRule::Ing => verb_stem(word.strip_suffix("ing")?),
            SuffixRule::Ed => {
                let stem = word.strip_suffix("ed")?;
                if stem.ends_with('e') {
                    return None;
                }
                verb_stem(stem)
            }
        }
    }
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

fn is_consonant_at(s: &[u8], i: usize) -> bool {
    match s[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant_at(s, i - 1),
        _ => true,
    }
}

/// Number of vowel→consonant transitions (the Porter "measure").
fn measure(s: &[u8]) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..s.len() {
        let c = is_consonant_at(s, i);
        if c && prev_vowel {
            m += 1;
        }
        prev_vowel = !c;
    }
    m
}

fn ends_cvc(s: &[u8]) -> bool {
    let n = s.len();
    n >= 3
        && is_consonant_at(s, n - 3)
        && !is_consonant_at(s, n - 2)
        && is_consonant_at(s, n - 1)
        && !matches!(s[n - 1], b'w' | b'x' | b'y')
}

/// Restores a verb stem after `-ing`/`-ed` removal: undoubles a final double
/// consonant, or re-appends `e` where the bare stem would be malformed.
fn verb_stem(stem: &str) -> Option<String> {
    let b = stem.as_bytes();
    if b.len() < 3 || !b.iter().any(|&c| is_vowel(c) || c == b'y') {
        return None;
    }
    let n = b.len();
    if b[n - 1] == b[n - 2] && is_consonant_at(b, n - 1) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        return Some(stem[..n - 1].to_owned());
    }
    if ["at", "bl", "iz", "iv", "uc", "ur"].iter().any(|s| stem.ends_with(s)) {
        return Some(format!("{stem}e"));
    }
    if measure(b) == 1 && ends_cvc(b) {
        return Some(format!("{stem}e"));
    }
    Some(stem.to_owned())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lemmatizer {
    exceptions: BTreeMap<String, String>,
}

impl Default for Lemmatizer {
    fn default() -> Self {
        Self::from_exceptions_csv(DEFAULT_EXCEPTIONS).expect("embedded lemma exceptions parse")
    }
}

impl Lemmatizer {
    pub fn with_exceptions(exceptions: BTreeMap<String, String>) -> Self {
        Lemmatizer { exceptions }
    }

    /// Parses a `token,lemma` CSV.
    pub fn from_exceptions_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let mut exceptions = BTreeMap::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let (Some(tok), Some(lemma)) = (rec.get(0), rec.get(1)) else {
                return Err(Error::Row {
                    row: i + 2,
                    message: "expected `token,lemma`".into(),
                });
            };
            let (tok, lemma) = (tok.trim().to_lowercase(), lemma.trim().to_lowercase());
            if tok.is_empty() || lemma.is_empty() {
                return Err(Error::Row {
                    row: i + 2,
                    message: "empty token or lemma".into(),
                });
            }
            exceptions.insert(tok, lemma);
        }
        Ok(Lemmatizer { exceptions })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_exceptions_csv(&text)
    }

    pub fn exceptions(&self) -> &BTreeMap<String, String> {
        &self.exceptions
    }

    pub fn lemmatize(&self, token: &str) -> String {
        if let Some(lemma) = self.exceptions.get(token) {
            return lemma.clone();
        }
        SUFFIX_RULES
            .iter()
            .find_map(|r| r.apply(token))
            .unwrap_or_else(|| token.to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_rules() {
        let l = Lemmatizer::with_exceptions(BTreeMap::new());
        let cases = [
            ("saving", "save"),
            ("loading", "load"),
            ("errors", "error"),
            ("entries", "entry"),
            ("classes", "class"),
            ("boxes", "box"),
            ("files", "file"),
            ("statuses", "status"),
            ("stopped", "stop"),
            ("failed", "fail"),
            ("saved", "save"),
            ("opened", "open"),
            ("installed", "install"),
            ("activated", "activate"),
            ("configured", "configure"),
            ("occurred", "occur"),
            ("speed", "speed"),
            ("status", "status"),
            ("string", "string"),
            ("robot", "robot"),
            ("cs", "cs"),
        ];
        for (w, want) in cases {
            assert_eq!(l.lemmatize(w), want, "{w}");
        }
    }

    #[test]
    fn exceptions_win() {
        let l = Lemmatizer::default();
        assert_eq!(l.lemmatize("warning"), "warning");
        assert_eq!(l.lemmatize("using"), "use");
        assert_eq!(l.lemmatize("saving"), "save");
    }

    #[test]
    fn malformed_exception_file() {
        assert!(Lemmatizer::from_exceptions_csv("token,lemma\nfoo,\n").is_err());
    }
}
