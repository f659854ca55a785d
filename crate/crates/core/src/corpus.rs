//! Token count ingestion and multilingual frequency merging.
//!
//! Input is a TSV stream of `token<TAB>count[<TAB>language]` records. Identical
//! token strings from different languages collapse into one entry; the language
//! column is kept on [`RawCounts`] but plays no part in the merged table.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountEntry {
    pub token: String,
    pub count: u64,
    pub language: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawCounts {
    pub entries: Vec<CountEntry>,
}

impl RawCounts {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Parse a frequency file.
///
/// Blank lines and lines starting with `#` are skipped. Line numbers in errors
/// are 1-based and count every physical line.
pub fn load_counts<R: BufRead>(reader: R) -> Result<RawCounts> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::Parse {
                line: lineno,
                message: "invalid UTF-8".into(),
            },
            _ => Error::Io(e),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        entries.push(parse_line(line, lineno)?);
    }
    Ok(RawCounts { entries })
}

fn parse_line(line: &str, lineno: usize) -> Result<CountEntry> {
    let err = |message: String| Error::Parse {
        line: lineno,
        message,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if !(2..=3).contains(&fields.len()) {
        return Err(err(format!(
            "expected 2 or 3 tab-separated fields, found {}",
            fields.len()
        )));
    }
    let token = fields[0];
    if token.is_empty() {
        return Err(err("empty token".into()));
    }
    let count: i128 = fields[1]
        .trim()
        .parse()
        .map_err(|_| err(format!("count {:?} is not an integer", fields[1])))?;
    if count <= 0 {
        return Err(err(format!("count must be >= 1, found {count}")));
    }
    let count = u64::try_from(count).map_err(|_| err(format!("count {count} overflows u64")))?;
    let language = fields.get(2).map(|s| s.to_string()).filter(|s| !s.is_empty());
    Ok(CountEntry {
        token: token.to_string(),
        count,
        language,
    })
}

/// Merged, normalized token frequencies.
///
/// Tokens are ordered by descending probability, ties broken by codepoint
/// order of the token string. When the table was built from integer counts
/// those counts are kept so that tree construction can compare exact sums.
#[derive(Debug, Clone, PartialEq)]
pub struct TermFrequencyTable {
    tokens: Vec<String>,
    probs: Vec<f64>,
    counts: Option<Vec<u64>>,
}

impl TermFrequencyTable {
    /// Build a table directly from probabilities (or any positive weights,
    /// which are normalized). Tokens are reordered by the usual rule.
    pub fn from_weights<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let mut merged: HashMap<String, f64> = HashMap::new();
        for (token, w) in pairs {
            let token = token.into();
            if token.is_empty() {
                return Err(Error::InvalidConfig("empty token".into()));
            }
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "weight for {token:?} must be finite and positive, found {w}"
                )));
            }
            *merged.entry(token).or_insert(0.0) += w;
        }
        if merged.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut pairs: Vec<(String, f64)> = merged.into_iter().collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let (tokens, probs) = pairs.into_iter().map(|(t, w)| (t, w / total)).unzip();
        Ok(Self {
            tokens,
            probs,
            counts: None,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Summed integer counts, aligned with [`tokens`](Self::tokens), when known.
    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.tokens.iter().map(String::as_str).zip(self.probs.iter().copied())
    }
}

/// Sum counts of identical tokens across languages and normalize.
pub fn merge_and_normalize(counts: &RawCounts) -> Result<TermFrequencyTable> {
    if counts.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let mut merged: HashMap<&str, u64> = HashMap::new();
    for e in &counts.entries {
        let slot = merged.entry(e.token.as_str()).or_insert(0);
        *slot = slot
            .checked_add(e.count)
            .ok_or_else(|| Error::InvalidConfig(format!("count overflow for token {:?}", e.token)))?;
    }
    let mut pairs: Vec<(&str, u64)> = merged.into_iter().collect();
    // Equal totals means probability order is count order, compared exactly.
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let total: u128 = pairs.iter().map(|p| p.1 as u128).sum();
    let total_f = total as f64;
    let mut tokens = Vec::with_capacity(pairs.len());
    let mut probs = Vec::with_capacity(pairs.len());
    let mut summed = Vec::with_capacity(pairs.len());
    for (token, count) in pairs {
        tokens.push(token.to_string());
        probs.push(count as f64 / total_f);
        summed.push(count);
    }
    Ok(TermFrequencyTable {
        tokens,
        probs,
        counts: Some(summed),
    })
}
