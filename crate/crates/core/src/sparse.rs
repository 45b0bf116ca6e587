//! From-scratch BM25 inverted index.
//!
//! Serves both as the sparse baseline and as the retrieval model behind the
//! decision agent's candidate expansion. Tokenization emits overlapping
//! character bigrams for CJK runs (the catalogs are Chinese product titles
//! and bigrams need no segmenter) and lowercased words for everything else.
//!
//! The idf uses the `ln(1 + (N - df + 0.5)/(df + 0.5))` variant so scores
//! stay non-negative even on tiny corpora where a term appears in more than
//! half the documents.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, UNKNOWN_VALUE};

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("document index {doc} out of range (num_docs = {num_docs})")]
    IndexOutOfRange { doc: usize, num_docs: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("bad index dump: {0}")]
    BadDump(String),
}

/// Okapi BM25 parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_b")]
    pub b: f64,
}

fn default_k1() -> f64 {
    1.2
}

fn default_b() -> f64 {
    0.75
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), SparseError> {
        if self.k1.is_nan() || self.k1 < 0.0 {
            return Err(SparseError::InvalidParams(format!("k1 = {} (must be >= 0)", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(SparseError::InvalidParams(format!("b = {} (must be in [0, 1])", self.b)));
        }
        Ok(())
    }
}

/// Which document fields feed the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexFields {
    #[default]
    Title,
    TitleAndAttributes,
}

fn is_cjk(ch: char) -> bool {
    matches!(ch,
        '\u{4e00}'..='\u{9fff}'     // CJK Unified Ideographs
        | '\u{3400}'..='\u{4dbf}'   // Extension A
        | '\u{f900}'..='\u{faff}'   // Compatibility Ideographs
    )
}

/// Tokenize text: maximal CJK runs emit overlapping character bigrams (a
/// lone CJK character emits itself); other alphanumeric runs are lowercased
/// and emitted whole; everything else separates. Output follows input order.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cjk_run: Vec<char> = Vec::new();
    let mut word = String::new();

    fn flush_cjk(run: &mut Vec<char>, out: &mut Vec<String>) {
        match run.len() {
            0 => {}
            1 => out.push(run[0].to_string()),
            _ => {
                for pair in run.windows(2) {
                    let mut t = String::with_capacity(8);
                    t.push(pair[0]);
                    t.push(pair[1]);
                    out.push(t);
                }
            }
        }
        run.clear();
    }

    fn flush_word(word: &mut String, out: &mut Vec<String>) {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    }

    for ch in text.chars() {
        if is_cjk(ch) {
            flush_word(&mut word, &mut tokens);
            cjk_run.push(ch);
        } else if ch.is_alphanumeric() {
            flush_cjk(&mut cjk_run, &mut tokens);
            word.extend(ch.to_lowercase());
        } else {
            flush_cjk(&mut cjk_run, &mut tokens);
            flush_word(&mut word, &mut tokens);
        }
    }
    flush_cjk(&mut cjk_run, &mut tokens);
    flush_word(&mut word, &mut tokens);
    tokens
}

/// Inverted index over a catalog. Postings are `(doc index, tf)` sorted by
/// document index ascending; `doc_ids` mirrors catalog order and backs the
/// deterministic tie-break in [`InvertedIndex::retrieve`].
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_len: Vec<u32>,
    doc_ids: Vec<String>,
    avgdl: f64,
    num_docs: usize,
}

impl InvertedIndex {
    /// Build the index over title text, plus attribute values when
    /// `fields` asks for them (the `"unknown"` sentinel is never indexed).
    /// Field boundaries do not form bigrams.
    pub fn build(catalog: &Catalog, fields: IndexFields) -> Result<Self, SparseError> {
        if catalog.is_empty() {
            return Err(SparseError::EmptyCatalog);
        }
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(catalog.len());
        let mut doc_ids = Vec::with_capacity(catalog.len());

        for (doc_idx, doc) in catalog.documents().iter().enumerate() {
            let mut tokens = tokenize(&doc.title);
            if fields == IndexFields::TitleAndAttributes {
                for p in catalog.perspectives() {
                    if let Some(value) = doc.attributes.get(p) {
                        if value != UNKNOWN_VALUE {
                            tokens.extend(tokenize(value));
                        }
                    }
                }
            }
            doc_len.push(tokens.len() as u32);
            doc_ids.push(doc.doc_id.clone());

            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.as_str()).or_insert(0) += 1;
            }
            // Docs are visited in ascending order, so postings stay sorted.
            for (term, count) in tf {
                postings
                    .entry(term.to_string())
                    .or_default()
                    .push((doc_idx as u32, count));
            }
        }
        for list in postings.values_mut() {
            list.sort_unstable_by_key(|&(doc, _)| doc);
        }
        let num_docs = doc_len.len();
        let avgdl = doc_len.iter().map(|&l| l as f64).sum::<f64>() / num_docs as f64;
        Ok(InvertedIndex {
            postings,
            doc_len,
            doc_ids,
            avgdl,
            num_docs,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, doc: usize) -> Option<u32> {
        self.doc_len.get(doc).copied()
    }

    pub fn doc_id(&self, doc: usize) -> Option<&str> {
        self.doc_ids.get(doc).map(String::as_str)
    }

    /// Number of documents containing `term`.
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn postings(&self, term: &str) -> Option<&[(u32, u32)]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    /// All indexed terms, unordered.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.num_docs as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn tf_in(&self, term: &str, doc: u32) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| {
                list.binary_search_by_key(&doc, |&(d, _)| d)
                    .ok()
                    .map(|i| list[i].1)
            })
            .unwrap_or(0)
    }

    /// BM25 score of one document for pre-tokenized query terms. Terms
    /// absent from the index contribute zero; duplicated query terms
    /// contribute once per occurrence.
    pub fn score(
        &self,
        params: &Bm25Params,
        query_terms: &[String],
        doc: usize,
    ) -> Result<f64, SparseError> {
        if doc >= self.num_docs {
            return Err(SparseError::IndexOutOfRange {
                doc,
                num_docs: self.num_docs,
            });
        }
        let dl = self.doc_len[doc] as f64;
        let norm = params.k1 * (1.0 - params.b + params.b * dl / self.avgdl);
        let mut total = 0.0;
        for term in query_terms {
            let df = self.df(term);
            if df == 0 {
                continue;
            }
            let tf = self.tf_in(term, doc as u32) as f64;
            total += self.idf(df) * (tf * (params.k1 + 1.0)) / (tf + norm);
        }
        Ok(total)
    }

    /// Top-k retrieval: documents with positive score, ordered by score
    /// descending with ties broken by doc_id ascending. Deterministic.
    pub fn retrieve(
        &self,
        params: &Bm25Params,
        query: &str,
        k: usize,
    ) -> Result<Vec<(usize, f64)>, SparseError> {
        if k == 0 {
            return Err(SparseError::InvalidArgument("k must be >= 1".to_string()));
        }
        params.validate()?;
        let terms = tokenize(query);
        let mut scores: HashMap<u32, f64> = HashMap::new();
        // Outer loop over query terms keeps each document's accumulation in
        // query-term order, so scores are reproducible bit-for-bit.
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(doc, tf) in list {
                let dl = self.doc_len[doc as usize] as f64;
                let norm = params.k1 * (1.0 - params.b + params.b * dl / self.avgdl);
                let tf = tf as f64;
                *scores.entry(doc).or_insert(0.0) += idf * (tf * (params.k1 + 1.0)) / (tf + norm);
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(doc, s)| (doc as usize, s))
            .collect();
        ranked.sort_unstable_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
        ranked.truncate(k);
        Ok(ranked)
    }

    /// Serialize to a versioned JSON dump.
    pub fn to_dump(&self) -> String {
        let dump = IndexDump {
            version: DUMP_VERSION,
            doc_ids: self.doc_ids.clone(),
            doc_len: self.doc_len.clone(),
            postings: self
                .postings
                .iter()
                .map(|(t, l)| (t.clone(), l.clone()))
                .collect(),
        };
        serde_json::to_string(&dump).expect("index dump serializes")
    }

    /// Rebuild an index from [`InvertedIndex::to_dump`] output.
    pub fn from_dump(text: &str) -> Result<Self, SparseError> {
        let dump: IndexDump =
            serde_json::from_str(text).map_err(|e| SparseError::BadDump(e.to_string()))?;
        if dump.version != DUMP_VERSION {
            return Err(SparseError::BadDump(format!(
                "unsupported dump version {} (expected {DUMP_VERSION})",
                dump.version
            )));
        }
        if dump.doc_ids.len() != dump.doc_len.len() || dump.doc_ids.is_empty() {
            return Err(SparseError::BadDump(
                "doc_ids and doc_len must be non-empty and equal length".to_string(),
            ));
        }
        let num_docs = dump.doc_ids.len();
        for (term, list) in &dump.postings {
            if !list.windows(2).all(|w| w[0].0 < w[1].0) {
                return Err(SparseError::BadDump(format!(
                    "postings for {term:?} not strictly ascending"
                )));
            }
            if list.is_empty() || list.iter().any(|&(d, _)| d as usize >= num_docs) {
                return Err(SparseError::BadDump(format!("postings for {term:?} out of range")));
            }
        }
        let avgdl = dump.doc_len.iter().map(|&l| l as f64).sum::<f64>() / num_docs as f64;
        Ok(InvertedIndex {
            postings: dump.postings.into_iter().collect(),
            doc_len: dump.doc_len,
            doc_ids: dump.doc_ids,
            avgdl,
            num_docs,
        })
    }
}

const DUMP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexDump {
    version: u32,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    postings: std::collections::BTreeMap<String, Vec<(u32, u32)>>,
}
