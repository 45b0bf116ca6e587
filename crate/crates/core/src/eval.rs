//! Accuracy evaluation against a labeled eval set. ACC is measured over
//! judged retrieved pairs only. Invalid DocIDs count as irrelevant when
//! the system actually served them (agent bypassed, raw generation is the
//! output); with the agent on they are filtered before the final list and
//! surface only in the hallucination count.

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{normalize_docid, Catalog};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: doc_id {doc_id:?} is not in the catalog")]
    UnknownDocId { line: usize, doc_id: String },
    #[error("no judged pairs: accuracy is undefined")]
    UndefinedMetric,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

/// Labels for one query, keyed by normalized doc_id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCase {
    pub query: String,
    pub labels: BTreeMap<String, Relevance>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalSet {
    pub cases: Vec<EvalCase>,
}

impl EvalSet {
    pub fn load(path: &Path, catalog: &Catalog) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, catalog)
    }

    /// Parse JSONL cases, normalizing label keys and validating them
    /// against the catalog.
    pub fn parse(text: &str, catalog: &Catalog) -> Result<Self, EvalError> {
        #[derive(Deserialize)]
        struct Line {
            query: String,
            labels: BTreeMap<String, Relevance>,
        }
        let mut cases = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(raw).map_err(|e| EvalError::Parse {
                line,
                message: e.to_string(),
            })?;
            let query = parsed.query.trim().to_string();
            if query.is_empty() {
                return Err(EvalError::Parse {
                    line,
                    message: "empty query".to_string(),
                });
            }
            let mut labels = BTreeMap::new();
            for (doc_id, relevance) in parsed.labels {
                let norm = normalize_docid(&doc_id);
                if catalog.resolve(&norm).is_none() {
                    return Err(EvalError::UnknownDocId { line, doc_id });
                }
                if let Some(previous) = labels.insert(norm.clone(), relevance) {
                    if previous != relevance {
                        return Err(EvalError::Parse {
                            line,
                            message: format!("conflicting labels for {norm:?}"),
                        });
                    }
                }
            }
            cases.push(EvalCase { query, labels });
        }
        Ok(EvalSet { cases })
    }
}

/// What one system run produced for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query: String,
    /// Final retrieved doc_ids, best first.
    pub final_docs: Vec<String>,
    /// Generated strings that resolved to no catalog entry.
    pub invalid: Vec<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccMode {
    #[default]
    Micro,
    Macro,
}

/// One evaluated system, serialized into result files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Which pipeline variant produced this (for example "full" or
    /// "no_agent").
    pub system: String,
    pub k: usize,
    pub use_agent: bool,
    /// False when the run used the preliminary (pre-distillation) backend.
    #[serde(default = "default_true")]
    pub reasoning_corpus_used: bool,
    pub mode: AccMode,
    pub acc: f64,
    /// Judged-relevant retrieved pairs (the numerator).
    pub relevant: usize,
    /// Labeled retrieved pairs plus invalid DocIDs (the denominator).
    pub judged: usize,
    /// Retrieved docs the eval set does not label; excluded from ACC.
    pub unjudged: usize,
    pub invalid_docids: usize,
    pub queries: usize,
    pub queries_skipped: usize,
}

struct PerQuery {
    relevant: usize,
    judged: usize,
    unjudged: usize,
    invalid: usize,
}

fn judge_outcome(
    outcome: &QueryOutcome,
    labels: Option<&BTreeMap<String, Relevance>>,
    count_invalid: bool,
) -> PerQuery {
    static EMPTY: BTreeMap<String, Relevance> = BTreeMap::new();
    let labels = labels.unwrap_or(&EMPTY);
    let mut relevant = 0usize;
    let mut labeled = 0usize;
    for doc_id in &outcome.final_docs {
        match labels.get(doc_id) {
            Some(Relevance::Relevant) => {
                relevant += 1;
                labeled += 1;
            }
            Some(Relevance::Irrelevant) => labeled += 1,
            None => {}
        }
    }
    let invalid = outcome.invalid.len();
    PerQuery {
        relevant,
        judged: labeled + if count_invalid { invalid } else { 0 },
        unjudged: outcome.final_docs.len() - labeled,
        invalid,
    }
}

/// Score a system's outcomes against the eval set.
///
/// Micro mode pools all judged pairs; macro mode averages per-query
/// accuracies over queries that have at least one judged pair. Either way
/// a run with nothing judged has no defined accuracy. In bypass runs
/// (`use_agent` false) invalid generated strings were part of the served
/// output, so they enter the denominator as irrelevant.
pub fn evaluate(
    system: &str,
    k: usize,
    use_agent: bool,
    mode: AccMode,
    outcomes: &[QueryOutcome],
    eval_set: &EvalSet,
    queries_skipped: usize,
) -> Result<EvalReport, EvalError> {
    let by_query: HashMap<&str, &EvalCase> = eval_set
        .cases
        .iter()
        .map(|case| (case.query.as_str(), case))
        .collect();
    let count_invalid = !use_agent;
    let mut relevant = 0usize;
    let mut judged = 0usize;
    let mut unjudged = 0usize;
    let mut invalid = 0usize;
    let mut per_query_accs: Vec<f64> = Vec::new();
    for outcome in outcomes {
        let labels = by_query.get(outcome.query.as_str()).map(|case| &case.labels);
        let pq = judge_outcome(outcome, labels, count_invalid);
        relevant += pq.relevant;
        judged += pq.judged;
        unjudged += pq.unjudged;
        invalid += pq.invalid;
        if pq.judged > 0 {
            per_query_accs.push(pq.relevant as f64 / pq.judged as f64);
        }
    }
    let acc = match mode {
        AccMode::Micro => {
            if judged == 0 {
                return Err(EvalError::UndefinedMetric);
            }
            relevant as f64 / judged as f64
        }
        AccMode::Macro => {
            if per_query_accs.is_empty() {
                return Err(EvalError::UndefinedMetric);
            }
            per_query_accs.iter().sum::<f64>() / per_query_accs.len() as f64
        }
    };
    Ok(EvalReport {
        system: system.to_string(),
        k,
        use_agent,
        reasoning_corpus_used: true,
        mode,
        acc,
        relevant,
        judged,
        unjudged,
        invalid_docids: invalid,
        queries: outcomes.len(),
        queries_skipped,
    })
}

/// One K of a sweep; a failed run leaves the point empty rather than
/// aborting the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub report: Option<EvalReport>,
}

/// Evaluate `run` at each K in order.
pub async fn topk_sweep<F, Fut, E>(ks: &[usize], mut run: F) -> Vec<SweepPoint>
where
    F: FnMut(usize) -> Fut,
    Fut: Future<Output = Result<EvalReport, E>>,
    E: std::fmt::Display,
{
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let report = match run(k).await {
            Ok(report) => Some(report),
            Err(e) => {
                log::warn!("sweep point k={k} failed: {e}");
                None
            }
        };
        points.push(SweepPoint { k, report });
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Scenario;

    fn catalog() -> Catalog {
        Catalog::from_records(
            ["A", "B", "C", "D"]
                .iter()
                .map(|t| (t.to_string(), BTreeMap::new(), Scenario::Other))
                .collect(),
        )
        .unwrap()
    }

    fn outcome(query: &str, finals: &[&str], invalid: &[&str]) -> QueryOutcome {
        QueryOutcome {
            query: query.to_string(),
            final_docs: finals.iter().map(|s| s.to_string()).collect(),
            invalid: invalid.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn eval_set() -> EvalSet {
        let cat = catalog();
        EvalSet::parse(
            concat!(
                "{\"query\": \"q1\", \"labels\": {\"A\": \"relevant\", \"B\": \"irrelevant\"}}\n",
                "{\"query\": \"q2\", \"labels\": {\"D\": \"relevant\"}}\n",
            ),
            &cat,
        )
        .unwrap()
    }

    #[test]
    fn micro_accuracy_matches_hand_count() {
        let outcomes = vec![
            // relevant 1 (A), judged 2 labeled + 1 invalid = 3, unjudged C.
            outcome("q1", &["A", "B", "C"], &["X"]),
            // relevant 1, judged 1.
            outcome("q2", &["D"], &[]),
        ];
        let report =
            evaluate("t", 3, false, AccMode::Micro, &outcomes, &eval_set(), 0).unwrap();
        assert_eq!(report.relevant, 2);
        assert_eq!(report.judged, 4);
        assert_eq!(report.unjudged, 1);
        assert_eq!(report.invalid_docids, 1);
        assert!((report.acc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn macro_accuracy_averages_per_query() {
        let outcomes = vec![
            outcome("q1", &["A", "B", "C"], &["X"]),
            outcome("q2", &["D"], &[]),
        ];
        let report =
            evaluate("t", 3, false, AccMode::Macro, &outcomes, &eval_set(), 0).unwrap();
        // (1/3 + 1/1) / 2
        assert!((report.acc - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn macro_skips_queries_with_nothing_judged() {
        let outcomes = vec![
            outcome("q1", &["C"], &[]),
            outcome("q2", &["D"], &[]),
        ];
        let report =
            evaluate("t", 1, false, AccMode::Macro, &outcomes, &eval_set(), 0).unwrap();
        assert!((report.acc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_docids_count_against_unlabeled_queries() {
        let outcomes = vec![outcome("unlabeled", &["A"], &["国泰基金封闭"])];
        let report =
            evaluate("t", 1, false, AccMode::Micro, &outcomes, &eval_set(), 0).unwrap();
        assert_eq!(report.judged, 1);
        assert_eq!(report.relevant, 0);
        assert_eq!(report.unjudged, 1);
        assert!((report.acc - 0.0).abs() < 1e-12);
    }

    #[test]
    fn agent_runs_report_invalid_without_charging_acc() {
        // The agent filtered the invalid string before the final output, so
        // it surfaces as a count but not in the denominator.
        let outcomes = vec![outcome("q2", &["D"], &["国泰基金封闭"])];
        let report =
            evaluate("t", 1, true, AccMode::Micro, &outcomes, &eval_set(), 0).unwrap();
        assert_eq!(report.judged, 1);
        assert_eq!(report.invalid_docids, 1);
        assert!((report.acc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nothing_judged_is_undefined() {
        let outcomes = vec![outcome("q1", &["C"], &[])];
        for mode in [AccMode::Micro, AccMode::Macro] {
            assert!(matches!(
                evaluate("t", 1, false, mode, &outcomes, &eval_set(), 0),
                Err(EvalError::UndefinedMetric)
            ));
        }
    }

    #[test]
    fn eval_set_validates_against_catalog() {
        let cat = catalog();
        match EvalSet::parse("{\"query\": \"q\", \"labels\": {\"nope\": \"relevant\"}}", &cat) {
            Err(EvalError::UnknownDocId { line, doc_id }) => {
                assert_eq!(line, 1);
                assert_eq!(doc_id, "nope");
            }
            other => panic!("expected UnknownDocId, got {other:?}"),
        }
        assert!(matches!(
            EvalSet::parse("{\"query\": \"q\", \"labels\": {\"A\": \"meh\"}}", &cat),
            Err(EvalError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn eval_set_normalizes_label_keys() {
        let cat = catalog();
        let set = EvalSet::parse("{\"query\": \"q\", \"labels\": {\" A \": \"relevant\"}}", &cat)
            .unwrap();
        assert_eq!(set.cases[0].labels.get("A"), Some(&Relevance::Relevant));
    }

    #[test]
    fn report_round_trips_through_json() {
        let outcomes = vec![outcome("q2", &["D"], &[])];
        let report =
            evaluate("full", 5, true, AccMode::Micro, &outcomes, &eval_set(), 2).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.queries_skipped, 2);
    }

    #[test]
    fn sweep_keeps_order_and_flags_failures() {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let eval = eval_set();
        let points = rt.block_on(topk_sweep(&[1, 3, 5], |k| {
            let eval = eval.clone();
            async move {
                if k == 3 {
                    return Err(EvalError::UndefinedMetric);
                }
                evaluate(
                    "sweep",
                    k,
                    false,
                    AccMode::Micro,
                    &[outcome("q2", &["D"], &[])],
                    &eval,
                    0,
                )
            }
        }));
        assert_eq!(points.iter().map(|p| p.k).collect::<Vec<_>>(), vec![1, 3, 5]);
        assert!(points[0].report.is_some());
        assert!(points[1].report.is_none());
        assert_eq!(points[2].report.as_ref().unwrap().k, 5);
    }
}
