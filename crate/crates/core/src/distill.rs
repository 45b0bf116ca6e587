//! Reasoning-distillation corpus construction: stratified query sampling,
//! judge-ensemble negative mining, rationale generation, and the assembled
//! training corpus (base records plus reasoning records).

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{normalize_docid, Catalog, Document, QueryLogEntry};
use crate::gateway::template::render;
use crate::gateway::{JudgeVerdict, LlmClient, PromptTemplate, TemplateError};
use crate::gr::{GenerationResult, GenerativeBackend};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: doc_id {doc_id:?} is not in the catalog")]
    UnknownDocId { line: usize, doc_id: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Human-annotated relevant pair from the positives file.
    AnnotatedPositive,
    /// Unanimously judged irrelevant by the judge ensemble.
    MinedNegative,
}

/// One labeled (query, document) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub query: String,
    pub doc_id: String,
    pub label: Label,
    pub provenance: Provenance,
}

/// A labeled pair with its generated rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningRecord {
    pub pair: LabeledPair,
    pub reasoning: String,
    /// Endpoint name that produced the rationale.
    pub generator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// Query to title supervision.
    QdPair,
    /// Title to attribute-summary memorization.
    DocKnowledge,
    /// Labeled pair to rationale.
    Reasoning,
}

/// One line of the emitted training corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub kind: RecordKind,
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

/// Counters accumulated across a distillation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub queries_processed: usize,
    pub queries_skipped: usize,
    /// Raw DocID strings produced by the backend after dedup.
    pub generations: usize,
    pub invalid_docids: usize,
    pub duplicates_dropped: usize,
    pub judge_calls: BTreeMap<String, usize>,
    pub unparseable_verdicts: usize,
    pub unanimity_negatives: usize,
    pub reasoning_failures: usize,
    pub records_qd_pair: usize,
    pub records_doc_knowledge: usize,
    pub records_reasoning: usize,
}

impl PipelineStats {
    pub fn count_records(&mut self, records: &[TrainingRecord]) {
        for record in records {
            match record.kind {
                RecordKind::QdPair => self.records_qd_pair += 1,
                RecordKind::DocKnowledge => self.records_doc_knowledge += 1,
                RecordKind::Reasoning => self.records_reasoning += 1,
            }
        }
    }
}

/// Stratified query sample: entries are sorted by frequency descending
/// (ties by query ascending), split into head/torso/tail tertiles, and up
/// to `n_per_stratum` queries are drawn from each without replacement.
/// Selections keep their within-stratum order, so output is deterministic
/// in `seed`.
pub fn sample_queries(log: &[QueryLogEntry], n_per_stratum: usize, seed: u64) -> Vec<String> {
    if log.is_empty() || n_per_stratum == 0 {
        return Vec::new();
    }
    let mut sorted: Vec<&QueryLogEntry> = log.iter().collect();
    sorted.sort_by(|a, b| {
        b.frequency
            .cmp(&a.frequency)
            .then_with(|| a.query.cmp(&b.query))
    });
    let n = sorted.len();
    let head = n.div_ceil(3);
    let torso = (n + 1) / 3;
    let strata = [
        &sorted[..head],
        &sorted[head..head + torso],
        &sorted[head + torso..],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for stratum in strata {
        let picks: Vec<usize> = if n_per_stratum >= stratum.len() {
            (0..stratum.len()).collect()
        } else {
            let mut idx = rand::seq::index::sample(&mut rng, stratum.len(), n_per_stratum).into_vec();
            idx.sort_unstable();
            idx
        };
        for i in picks {
            let query = stratum[i].query.as_str();
            if seen.insert(query) {
                out.push(query.to_string());
            }
        }
    }
    out
}

/// A pair is a mined negative only when every judge said irrelevant;
/// an unparseable verdict blocks the unanimity.
pub fn is_unanimous_negative(verdicts: &[JudgeVerdict]) -> bool {
    !verdicts.is_empty() && verdicts.iter().all(|v| *v == JudgeVerdict::Irrelevant)
}

#[derive(Debug, Clone)]
pub struct MiningConfig {
    /// DocIDs requested per query.
    pub k: usize,
    /// Most negatives kept per query, in generation order.
    pub per_query_cap: usize,
    /// Extra instruction text spliced into the judgement prompt.
    pub task_instruction: String,
    /// Concurrent judge calls in flight.
    pub workers: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            k: 5,
            per_query_cap: 3,
            task_instruction: String::new(),
            workers: 16,
        }
    }
}

/// Generate DocIDs per query, have every judge vote on each resolved
/// document, and keep the unanimous negatives. Invalid DocIDs are counted
/// but never judged: they resolve to nothing to train against. A failed
/// generation skips that query only.
pub async fn mine_negatives(
    backend: &dyn GenerativeBackend,
    judges: &[LlmClient],
    template: &PromptTemplate,
    queries: &[String],
    catalog: &Catalog,
    cfg: &MiningConfig,
    stats: &mut PipelineStats,
) -> Vec<LabeledPair> {
    use futures::StreamExt;

    let mut negatives = Vec::new();
    let mut emitted: HashSet<(String, String)> = HashSet::new();
    for query in queries {
        let raw = match backend.generate(query, cfg.k).await {
            Ok(raw) => raw,
            Err(e) => {
                log::warn!("generation failed for {query:?}: {e}");
                stats.queries_skipped += 1;
                continue;
            }
        };
        stats.queries_processed += 1;
        let result = GenerationResult::from_raw(catalog, query.clone(), raw);
        stats.generations += result.raw_outputs.len();
        stats.invalid_docids += result.invalid.len();
        stats.duplicates_dropped += result.duplicates_dropped;
        if judges.is_empty() || result.resolved.is_empty() {
            continue;
        }
        let mut tasks = Vec::new();
        for doc in &result.resolved {
            for judge in judges {
                let task_instruction = cfg.task_instruction.clone();
                tasks.push(async move {
                    judge
                        .judge_relevance(template, query, doc, &task_instruction)
                        .await
                });
            }
        }
        let verdicts: Vec<JudgeVerdict> = futures::stream::iter(tasks)
            .buffered(cfg.workers.max(1))
            .collect()
            .await;
        let mut kept_for_query = 0usize;
        for (doc, doc_verdicts) in result.resolved.iter().zip(verdicts.chunks(judges.len())) {
            for (judge, verdict) in judges.iter().zip(doc_verdicts) {
                *stats
                    .judge_calls
                    .entry(judge.endpoint().name.clone())
                    .or_default() += 1;
                if *verdict == JudgeVerdict::Unparseable {
                    stats.unparseable_verdicts += 1;
                }
            }
            if kept_for_query >= cfg.per_query_cap || !is_unanimous_negative(doc_verdicts) {
                continue;
            }
            if !emitted.insert((query.clone(), doc.doc_id.clone())) {
                continue;
            }
            negatives.push(LabeledPair {
                query: query.clone(),
                doc_id: doc.doc_id.clone(),
                label: Label::Negative,
                provenance: Provenance::MinedNegative,
            });
            stats.unanimity_negatives += 1;
            kept_for_query += 1;
        }
    }
    negatives
}

/// Load annotated positives, validating every doc_id against the catalog.
pub fn load_positives(path: &Path, catalog: &Catalog) -> Result<Vec<LabeledPair>, DistillError> {
    let text = std::fs::read_to_string(path)?;
    parse_positives(&text, catalog)
}

pub fn parse_positives(text: &str, catalog: &Catalog) -> Result<Vec<LabeledPair>, DistillError> {
    #[derive(Deserialize)]
    struct Line {
        query: String,
        doc_id: String,
    }
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(raw).map_err(|e| DistillError::Parse {
            line,
            message: e.to_string(),
        })?;
        let query = parsed.query.trim().to_string();
        if query.is_empty() {
            return Err(DistillError::Parse {
                line,
                message: "empty query".to_string(),
            });
        }
        let norm = normalize_docid(&parsed.doc_id);
        if catalog.resolve(&norm).is_none() {
            return Err(DistillError::UnknownDocId {
                line,
                doc_id: parsed.doc_id,
            });
        }
        pairs.push(LabeledPair {
            query,
            doc_id: norm,
            label: Label::Positive,
            provenance: Provenance::AnnotatedPositive,
        });
    }
    Ok(pairs)
}

/// The pair set rationales are generated for: a seeded sample of positives
/// (defaulting to one per mined negative) followed by every negative.
pub fn build_reasoning_source(
    positives: &[LabeledPair],
    negatives: &[LabeledPair],
    n_pos: Option<usize>,
    seed: u64,
) -> Vec<LabeledPair> {
    let target = n_pos.unwrap_or(negatives.len()).min(positives.len());
    let chosen: Vec<usize> = if target == positives.len() {
        (0..positives.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, positives.len(), target).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut out: Vec<LabeledPair> = chosen.into_iter().map(|i| positives[i].clone()).collect();
    out.extend(negatives.iter().cloned());
    out
}

/// Ask the reasoning endpoint for a rationale per pair. Failures are
/// logged, counted, and skipped; output keeps input order.
pub async fn generate_reasoning_batch(
    client: &LlmClient,
    template: &PromptTemplate,
    pairs: &[LabeledPair],
    catalog: &Catalog,
    workers: usize,
    stats: &mut PipelineStats,
) -> Vec<ReasoningRecord> {
    use futures::StreamExt;

    let tasks = pairs.iter().map(|pair| async move {
        let title = catalog
            .resolve(&pair.doc_id)
            .map(|d| d.title.clone())
            .unwrap_or_else(|| pair.doc_id.clone());
        let reply = client
            .generate_reasoning(template, &pair.query, &title, pair.label == Label::Positive)
            .await;
        (pair, reply)
    });
    let results: Vec<_> = futures::stream::iter(tasks)
        .buffered(workers.max(1))
        .collect()
        .await;
    let mut records = Vec::new();
    for (pair, reply) in results {
        match reply {
            Ok(reasoning) => records.push(ReasoningRecord {
                pair: pair.clone(),
                reasoning,
                generator: client.endpoint().name.clone(),
            }),
            Err(e) => {
                log::warn!("reasoning failed for ({:?}, {:?}): {e}", pair.query, pair.doc_id);
                stats.reasoning_failures += 1;
            }
        }
    }
    records
}

/// Instruction used for document-knowledge records.
pub const DOC_KNOWLEDGE_TEMPLATE: &str = "In search scenario, introduce the product: <d_i>.";

fn label_word(label: Label) -> &'static str {
    match label {
        Label::Positive => "relevant",
        Label::Negative => "irrelevant",
    }
}

fn doc_knowledge_output(catalog: &Catalog, doc: &Document) -> String {
    let mut parts = vec![format!("scenario: {}", doc.scenario)];
    for perspective in catalog.perspectives() {
        if let Some(value) = doc.attribute(perspective) {
            parts.push(format!("{perspective}: {value}"));
        }
    }
    parts.join("; ")
}

/// Base corpus: one query-to-title record per positive pair (the input is
/// the deployed generation prompt) and one knowledge record per catalog
/// document.
pub fn build_base_corpus(
    catalog: &Catalog,
    positives: &[LabeledPair],
    generation_template: &PromptTemplate,
) -> Result<Vec<TrainingRecord>, DistillError> {
    let mut records = Vec::new();
    for pair in positives {
        let bindings = [("q", pair.query.clone())].into_iter().collect();
        let input = generation_template.render(&bindings)?;
        let output = catalog
            .resolve(&pair.doc_id)
            .map(|d| d.title.clone())
            .unwrap_or_else(|| pair.doc_id.clone());
        records.push(TrainingRecord {
            kind: RecordKind::QdPair,
            input,
            output,
            meta: BTreeMap::new(),
        });
    }
    for doc in catalog.documents() {
        let bindings = [("d_i", doc.title.clone())].into_iter().collect();
        let input = render(DOC_KNOWLEDGE_TEMPLATE, &bindings)?;
        records.push(TrainingRecord {
            kind: RecordKind::DocKnowledge,
            input,
            output: doc_knowledge_output(catalog, doc),
            meta: BTreeMap::new(),
        });
    }
    Ok(records)
}

/// Reasoning records as training lines: the input replays the rationale
/// prompt, the output is the generated rationale.
pub fn reasoning_to_training(
    records: &[ReasoningRecord],
    template: &PromptTemplate,
    catalog: &Catalog,
) -> Result<Vec<TrainingRecord>, DistillError> {
    let mut out = Vec::new();
    for record in records {
        let title = catalog
            .resolve(&record.pair.doc_id)
            .map(|d| d.title.clone())
            .unwrap_or_else(|| record.pair.doc_id.clone());
        let bindings = [
            ("q", record.pair.query.clone()),
            ("d_i", title),
            ("label", label_word(record.pair.label).to_string()),
        ]
        .into_iter()
        .collect();
        let input = template.render(&bindings)?;
        let meta: BTreeMap<String, String> = [
            ("doc_id".to_string(), record.pair.doc_id.clone()),
            ("generator".to_string(), record.generator.clone()),
            ("label".to_string(), label_word(record.pair.label).to_string()),
            (
                "provenance".to_string(),
                match record.pair.provenance {
                    Provenance::AnnotatedPositive => "annotated_positive".to_string(),
                    Provenance::MinedNegative => "mined_negative".to_string(),
                },
            ),
            ("query".to_string(), record.pair.query.clone()),
        ]
        .into_iter()
        .collect();
        out.push(TrainingRecord {
            kind: RecordKind::Reasoning,
            input,
            output: record.reasoning.clone(),
            meta,
        });
    }
    Ok(out)
}

/// Write the corpus as JSONL, atomically: the file appears complete or not
/// at all. Byte output is deterministic for identical records.
pub fn emit_corpus(records: &[TrainingRecord], path: &Path) -> Result<(), DistillError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    for record in records {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        writeln!(tmp, "{line}")?;
    }
    tmp.flush()?;
    tmp.persist(path).map_err(|e| DistillError::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Scenario;
    use crate::gateway::PromptId;

    fn entry(query: &str, frequency: u64) -> QueryLogEntry {
        QueryLogEntry {
            query: query.to_string(),
            frequency,
        }
    }

    fn sorted_queries(log: &[QueryLogEntry]) -> Vec<String> {
        let mut sorted: Vec<&QueryLogEntry> = log.iter().collect();
        sorted.sort_by(|a, b| {
            b.frequency
                .cmp(&a.frequency)
                .then_with(|| a.query.cmp(&b.query))
        });
        sorted.iter().map(|e| e.query.clone()).collect()
    }

    #[test]
    fn sampling_with_large_budget_returns_strata_in_order() {
        let log: Vec<QueryLogEntry> = (0..9).map(|i| entry(&format!("q{i}"), 9 - i)).collect();
        let picked = sample_queries(&log, 10, 1);
        assert_eq!(picked, sorted_queries(&log));
    }

    #[test]
    fn sampling_draws_from_each_tertile() {
        let log: Vec<QueryLogEntry> = (0..30).map(|i| entry(&format!("q{i:02}"), 100 - i)).collect();
        let picked = sample_queries(&log, 2, 42);
        assert_eq!(picked.len(), 6);
        let sorted = sorted_queries(&log);
        let strata = [&sorted[..10], &sorted[10..20], &sorted[20..]];
        for (s, chunk) in strata.iter().zip(picked.chunks(2)) {
            let positions: Vec<usize> = chunk
                .iter()
                .map(|q| s.iter().position(|x| x == q).expect("pick stays in its stratum"))
                .collect();
            assert!(positions[0] < positions[1], "within-stratum order preserved");
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let log: Vec<QueryLogEntry> = (0..30).map(|i| entry(&format!("q{i:02}"), 100 - i)).collect();
        assert_eq!(sample_queries(&log, 3, 7), sample_queries(&log, 3, 7));
        assert_ne!(sample_queries(&log, 3, 7), sample_queries(&log, 3, 8));
    }

    #[test]
    fn sampling_breaks_frequency_ties_by_query() {
        let log = vec![entry("b", 5), entry("a", 5), entry("c", 5)];
        assert_eq!(sample_queries(&log, 5, 0), vec!["a", "b", "c"]);
    }

    #[test]
    fn sampling_drops_repeated_query_text() {
        let log = vec![entry("dup", 100), entry("x", 50), entry("dup", 1)];
        let picked = sample_queries(&log, 5, 0);
        assert_eq!(picked.iter().filter(|q| *q == "dup").count(), 1);
    }

    #[test]
    fn unanimity_requires_all_irrelevant() {
        use JudgeVerdict::*;
        assert!(!is_unanimous_negative(&[]));
        assert!(is_unanimous_negative(&[Irrelevant]));
        assert!(is_unanimous_negative(&[Irrelevant, Irrelevant, Irrelevant]));
        assert!(!is_unanimous_negative(&[Irrelevant, Relevant]));
        assert!(!is_unanimous_negative(&[Irrelevant, Unparseable]));
        assert!(!is_unanimous_negative(&[Relevant, Relevant]));
    }

    fn catalog() -> Catalog {
        let records = vec![
            (
                "华夏成长混合".to_string(),
                BTreeMap::from([("risk".to_string(), "中风险".to_string())]),
                Scenario::Fund,
            ),
            (
                "平安短期综合意外险".to_string(),
                BTreeMap::from([("duration".to_string(), "短期".to_string())]),
                Scenario::Insurance,
            ),
        ];
        Catalog::from_records(records).unwrap()
    }

    #[test]
    fn positives_load_and_validate() {
        let cat = catalog();
        let text = "{\"query\": \"成长基金\", \"doc_id\": \"华夏成长混合\"}\n\n{\"query\": \"意外险\", \"doc_id\": \" 平安短期综合意外险 \"}\n";
        let pairs = parse_positives(text, &cat).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].doc_id, "平安短期综合意外险");
        assert!(matches!(pairs[0].label, Label::Positive));
        assert!(matches!(pairs[0].provenance, Provenance::AnnotatedPositive));
    }

    #[test]
    fn positives_reject_unknown_doc_with_line() {
        let cat = catalog();
        let text = "{\"query\": \"q\", \"doc_id\": \"华夏成长混合\"}\n{\"query\": \"q\", \"doc_id\": \"不存在\"}\n";
        match parse_positives(text, &cat) {
            Err(DistillError::UnknownDocId { line, doc_id }) => {
                assert_eq!(line, 2);
                assert_eq!(doc_id, "不存在");
            }
            other => panic!("expected UnknownDocId, got {other:?}"),
        }
    }

    fn pair(query: &str, doc_id: &str, label: Label) -> LabeledPair {
        LabeledPair {
            query: query.to_string(),
            doc_id: doc_id.to_string(),
            label,
            provenance: match label {
                Label::Positive => Provenance::AnnotatedPositive,
                Label::Negative => Provenance::MinedNegative,
            },
        }
    }

    #[test]
    fn reasoning_source_balances_positives_against_negatives() {
        let positives: Vec<LabeledPair> =
            (0..10).map(|i| pair(&format!("p{i}"), "d", Label::Positive)).collect();
        let negatives: Vec<LabeledPair> =
            (0..3).map(|i| pair(&format!("n{i}"), "d", Label::Negative)).collect();
        let source = build_reasoning_source(&positives, &negatives, None, 5);
        assert_eq!(source.len(), 6);
        assert!(source[..3].iter().all(|p| p.label == Label::Positive));
        assert_eq!(
            source[3..].iter().map(|p| p.query.clone()).collect::<Vec<_>>(),
            vec!["n0", "n1", "n2"]
        );
        // Sampled positives keep their original relative order.
        let picked: Vec<usize> = source[..3]
            .iter()
            .map(|p| positives.iter().position(|x| x.query == p.query).unwrap())
            .collect();
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(source, build_reasoning_source(&positives, &negatives, None, 5));
    }

    #[test]
    fn reasoning_source_caps_at_available_positives() {
        let positives = vec![pair("p", "d", Label::Positive)];
        let negatives: Vec<LabeledPair> =
            (0..4).map(|i| pair(&format!("n{i}"), "d", Label::Negative)).collect();
        let source = build_reasoning_source(&positives, &negatives, Some(99), 0);
        assert_eq!(source.len(), 5);
    }

    #[test]
    fn base_corpus_covers_positives_and_documents() {
        let cat = catalog();
        let positives = vec![pair("成长基金", "华夏成长混合", Label::Positive)];
        let generation = PromptTemplate::default_for(PromptId::Generation);
        let records = build_base_corpus(&cat, &positives, &generation).unwrap();
        assert_eq!(records.len(), 1 + cat.len());
        assert_eq!(records[0].kind, RecordKind::QdPair);
        assert!(records[0].input.contains("成长基金"));
        assert_eq!(records[0].output, "华夏成长混合");
        assert_eq!(records[1].kind, RecordKind::DocKnowledge);
        assert_eq!(records[1].output, "scenario: fund; risk: 中风险");
    }

    #[test]
    fn reasoning_training_replays_the_prompt() {
        let cat = catalog();
        let record = ReasoningRecord {
            pair: pair("意外险", "平安短期综合意外险", Label::Negative),
            reasoning: "保障周期不符。".to_string(),
            generator: "teacher".to_string(),
        };
        let template = PromptTemplate::default_for(PromptId::ReasoningGeneration);
        let out = reasoning_to_training(&[record], &template, &cat).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].input.contains("irrelevant"));
        assert!(out[0].input.contains("平安短期综合意外险"));
        assert_eq!(out[0].output, "保障周期不符。");
        assert_eq!(out[0].meta["generator"], "teacher");
        assert_eq!(out[0].meta["provenance"], "mined_negative");
    }

    #[test]
    fn training_record_serializes_compactly() {
        let record = TrainingRecord {
            kind: RecordKind::QdPair,
            input: "I".to_string(),
            output: "O".to_string(),
            meta: BTreeMap::new(),
        };
        assert_eq!(
            serde_json::to_string(&record).unwrap(),
            "{\"kind\":\"qd_pair\",\"input\":\"I\",\"output\":\"O\"}"
        );
    }

    #[test]
    fn emitted_corpus_is_byte_deterministic() {
        let records = vec![
            TrainingRecord {
                kind: RecordKind::QdPair,
                input: "q".to_string(),
                output: "t".to_string(),
                meta: BTreeMap::new(),
            },
            TrainingRecord {
                kind: RecordKind::Reasoning,
                input: "p".to_string(),
                output: "r".to_string(),
                meta: BTreeMap::from([("generator".to_string(), "g".to_string())]),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("corpus_a.jsonl");
        let path_b = dir.path().join("corpus_b.jsonl");
        emit_corpus(&records, &path_a).unwrap();
        emit_corpus(&records, &path_b).unwrap();
        let a = std::fs::read(&path_a).unwrap();
        let b = std::fs::read(&path_b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 2);
        for line in text.lines() {
            let back: TrainingRecord = serde_json::from_str(line).unwrap();
            assert!(matches!(back.kind, RecordKind::QdPair | RecordKind::Reasoning));
        }
    }

    #[test]
    fn stats_count_records_by_kind() {
        let records = vec![
            TrainingRecord {
                kind: RecordKind::QdPair,
                input: String::new(),
                output: String::new(),
                meta: BTreeMap::new(),
            },
            TrainingRecord {
                kind: RecordKind::DocKnowledge,
                input: String::new(),
                output: String::new(),
                meta: BTreeMap::new(),
            },
            TrainingRecord {
                kind: RecordKind::Reasoning,
                input: String::new(),
                output: String::new(),
                meta: BTreeMap::new(),
            },
        ];
        let mut stats = PipelineStats::default();
        stats.count_records(&records);
        assert_eq!(stats.records_qd_pair, 1);
        assert_eq!(stats.records_doc_knowledge, 1);
        assert_eq!(stats.records_reasoning, 1);
    }
}
