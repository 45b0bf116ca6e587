//! Candidate document set with structured attributes, and DocID resolution.
//!
//! DocIDs are normalized product titles. Resolution is exact-match only:
//! fuzzy matching would hide exactly the hallucinations this toolkit exists
//! to surface.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Search scenario a document belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Fund,
    Insurance,
    #[default]
    Other,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Fund => write!(f, "fund"),
            Scenario::Insurance => write!(f, "insurance"),
            Scenario::Other => write!(f, "other"),
        }
    }
}

/// Sentinel value for a structured attribute the feed did not provide.
pub const UNKNOWN_VALUE: &str = "unknown";

/// A candidate document: its DocID (normalized title) plus structured
/// attributes keyed by perspective name ("company", "type", "duration", ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub attributes: std::collections::BTreeMap<String, String>,
    pub scenario: Scenario,
}

impl Document {
    /// Attribute value for a perspective, treating the missing case and the
    /// explicit sentinel uniformly.
    pub fn attribute(&self, perspective: &str) -> Option<&str> {
        match self.attributes.get(perspective).map(String::as_str) {
            None | Some(UNKNOWN_VALUE) | Some("") => None,
            Some(v) => Some(v),
        }
    }
}

/// Errors from catalog and query-log loading.
#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable candidate document set with a DocID lookup table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalog {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    perspectives: Vec<String>,
}

/// Normalize a raw string into DocID form: Unicode NFC, trimmed, internal
/// whitespace runs collapsed to a single space. Idempotent.
pub fn normalize_docid(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    let mut pending_space = false;
    for ch in composed.trim().chars() {
        if ch.is_whitespace() {
            pending_space = true;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        }
    }
    out
}

/// On-disk catalog record: one JSON object per line.
#[derive(Debug, Deserialize)]
struct CatalogRecord {
    title: String,
    #[serde(default)]
    attributes: std::collections::BTreeMap<String, String>,
    #[serde(default)]
    scenario: Scenario,
}

impl Catalog {
    /// Build a catalog from records, enforcing DocID uniqueness. The
    /// perspective list is the first-seen order of attribute keys across all
    /// records; every document is filled to that list, missing or empty
    /// values becoming the `"unknown"` sentinel.
    pub fn from_records(
        records: Vec<(String, std::collections::BTreeMap<String, String>, Scenario)>,
    ) -> Result<Self, CatalogError> {
        if records.is_empty() {
            return Err(CatalogError::EmptyCatalog);
        }
        let mut perspectives: Vec<String> = Vec::new();
        for (_, attrs, _) in &records {
            for key in attrs.keys() {
                if !perspectives.iter().any(|p| p == key) {
                    perspectives.push(key.clone());
                }
            }
        }
        let mut documents = Vec::with_capacity(records.len());
        let mut by_id = HashMap::with_capacity(records.len());
        for (title, mut attrs, scenario) in records {
            let doc_id = normalize_docid(&title);
            for p in &perspectives {
                let v = attrs.entry(p.clone()).or_default();
                if v.trim().is_empty() {
                    *v = UNKNOWN_VALUE.to_string();
                }
            }
            if by_id.insert(doc_id.clone(), documents.len()).is_some() {
                return Err(CatalogError::DuplicateDocId(doc_id));
            }
            documents.push(Document {
                doc_id,
                title,
                attributes: attrs,
                scenario,
            });
        }
        Ok(Catalog {
            documents,
            by_id,
            perspectives,
        })
    }

    /// Load a catalog from a JSON Lines file (`title`, optional `attributes`
    /// object, optional `scenario`). File order is preserved.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parse catalog JSON Lines from a string. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, CatalogError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CatalogRecord =
                serde_json::from_str(line).map_err(|e| CatalogError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if normalize_docid(&rec.title).is_empty() {
                return Err(CatalogError::Parse {
                    line: i + 1,
                    msg: "title normalizes to empty DocID".to_string(),
                });
            }
            records.push((rec.title, rec.attributes, rec.scenario));
        }
        Self::from_records(records)
    }

    /// Resolve a generated string to a catalog document by exact normalized
    /// DocID match. `None` means the string is a hallucinated identifier.
    pub fn resolve(&self, generated: &str) -> Option<&Document> {
        let id = normalize_docid(generated);
        if id.is_empty() {
            return None;
        }
        self.by_id.get(&id).map(|&i| &self.documents[i])
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Document> {
        self.documents.get(index)
    }

    pub fn index_of(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }

    /// Perspective names observed across the catalog, first-seen order.
    pub fn perspectives(&self) -> &[String] {
        &self.perspectives
    }
}

/// One line of the query log: the query text and how often it was issued.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLogEntry {
    pub query: String,
    #[serde(default = "default_frequency")]
    pub frequency: u64,
}

fn default_frequency() -> u64 {
    1
}

/// Load a query log from JSON Lines (`query`, optional `frequency`).
pub fn load_query_log(path: impl AsRef<Path>) -> Result<Vec<QueryLogEntry>, CatalogError> {
    let text = std::fs::read_to_string(path)?;
    parse_query_log(&text)
}

/// Parse query-log JSON Lines; queries are trimmed and must be non-empty.
pub fn parse_query_log(text: &str) -> Result<Vec<QueryLogEntry>, CatalogError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: QueryLogEntry =
            serde_json::from_str(line).map_err(|e| CatalogError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        entry.query = entry.query.trim().to_string();
        if entry.query.is_empty() {
            return Err(CatalogError::Parse {
                line: i + 1,
                msg: "query is empty after trimming".to_string(),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}
