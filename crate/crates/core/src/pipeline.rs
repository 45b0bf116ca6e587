//! End-to-end orchestration: wires config, catalog, index, prompts, and
//! endpoints into the distillation, retrieval, and evaluation runs the CLI
//! exposes. Kept free of terminal concerns so tests can drive it directly.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{filter_generation, AgentTrace, Bm25Rm, DecisionModel, GatewayDecision};
use crate::catalog::{load_query_log, Catalog, CatalogError};
use crate::config::{ConfigError, GrBackendConfig, PipelineConfig, PromptSet};
use crate::distill::{
    build_base_corpus, build_reasoning_source, emit_corpus, generate_reasoning_batch,
    load_positives, mine_negatives, reasoning_to_training, DistillError, LabeledPair,
    MiningConfig, PipelineStats, ReasoningRecord, TrainingRecord,
};
use crate::eval::{
    evaluate, topk_sweep, AccMode, EvalError, EvalReport, EvalSet, QueryOutcome, SweepPoint,
};
use crate::gateway::{GatewayError, LlmClient};
use crate::gr::{GenerationResult, GenerativeBackend, RemoteBackend, StubBackend};
use crate::sparse::{InvertedIndex, SparseError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Unsupported(String),
}

/// A validated, loaded pipeline ready to run.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub catalog: Catalog,
    pub index: InvertedIndex,
    pub prompts: PromptSet,
}

/// Everything a distillation run produced.
#[derive(Debug)]
pub struct DistillOutput {
    pub corpus_path: PathBuf,
    pub stats: PipelineStats,
    pub sampled_queries: Vec<String>,
    pub negatives: Vec<LabeledPair>,
    pub reasoning_records: Vec<ReasoningRecord>,
    /// Base records (query-doc supervision plus document knowledge).
    pub base_len: usize,
    /// Total emitted records; always `base_len + reasoning_records.len()`.
    pub corpus_len: usize,
}

/// One ablation variant's result; a variant that cannot run on this
/// configuration reports its error instead of aborting the others.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

impl Pipeline {
    /// Validate the config, load the catalog, build the index, resolve
    /// prompts. Every fail-fast check happens here.
    pub fn prepare(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        config.validate_paths()?;
        let catalog = Catalog::load(&config.paths.catalog)?;
        config.validate_against_catalog(&catalog)?;
        let index = InvertedIndex::build(&catalog, config.index_fields)?;
        let prompts = config.resolved_prompts()?;
        Ok(Pipeline {
            config,
            catalog,
            index,
            prompts,
        })
    }

    /// The configured generative backend. `preliminary` selects the
    /// pre-distillation variant ablations compare against.
    pub fn build_backend(&self, preliminary: bool) -> Result<Box<dyn GenerativeBackend>, PipelineError> {
        match &self.config.gr_backend {
            GrBackendConfig::Stub {
                hallucination_rate,
                preliminary_hallucination_rate,
                seed,
            } => {
                let rate = if preliminary {
                    preliminary_hallucination_rate.unwrap_or(*hallucination_rate)
                } else {
                    *hallucination_rate
                };
                Ok(Box::new(StubBackend::new(
                    self.catalog.clone(),
                    self.index.clone(),
                    self.config.bm25,
                    rate,
                    seed.unwrap_or(self.config.seed),
                )))
            }
            GrBackendConfig::Remote {
                endpoint,
                preliminary_endpoint,
            } => {
                let endpoint = if preliminary {
                    preliminary_endpoint.as_ref().ok_or_else(|| {
                        PipelineError::Unsupported(
                            "no preliminary_endpoint configured for this ablation".to_string(),
                        )
                    })?
                } else {
                    endpoint
                };
                Ok(Box::new(RemoteBackend::new(
                    LlmClient::new(endpoint.clone()),
                    self.prompts.generation.clone(),
                )))
            }
        }
    }

    /// The decision model behind the agent.
    pub fn build_decision_model(&self) -> GatewayDecision {
        GatewayDecision::new(
            LlmClient::new(self.config.endpoints.decision.clone()),
            self.prompts.decision.clone(),
        )
    }

    /// Mine negatives, generate rationales, and emit the training corpus
    /// to `corpus.jsonl` under the output directory.
    pub async fn distill_run(&self) -> Result<DistillOutput, PipelineError> {
        let log = load_query_log(&self.config.paths.query_log)?;
        let sampled_queries = crate::distill::sample_queries(
            &log,
            self.config.sampling.queries_per_stratum,
            self.config.seed,
        );
        let positives = load_positives(&self.config.paths.positives, &self.catalog)?;
        let backend = self.build_backend(false)?;
        let judges: Vec<LlmClient> = self
            .config
            .endpoints
            .judges
            .iter()
            .map(|e| LlmClient::new(e.clone()))
            .collect();
        let mining = MiningConfig {
            k: self.config.k,
            per_query_cap: self.config.sampling.negatives_per_query_cap,
            task_instruction: self.config.task_instruction.clone(),
            workers: self.config.workers,
        };
        let mut stats = PipelineStats::default();
        let negatives = mine_negatives(
            backend.as_ref(),
            &judges,
            &self.prompts.relevance_judgement,
            &sampled_queries,
            &self.catalog,
            &mining,
            &mut stats,
        )
        .await;
        let source = build_reasoning_source(
            &positives,
            &negatives,
            self.config.sampling.n_pos,
            self.config.seed,
        );
        let reasoning_client = LlmClient::new(self.config.endpoints.reasoning.clone());
        let reasoning_records = generate_reasoning_batch(
            &reasoning_client,
            &self.prompts.reasoning_generation,
            &source,
            &self.catalog,
            self.config.workers,
            &mut stats,
        )
        .await;
        let base = build_base_corpus(&self.catalog, &positives, &self.prompts.generation)?;
        let base_len = base.len();
        let reasoning_training =
            reasoning_to_training(&reasoning_records, &self.prompts.reasoning_generation, &self.catalog)?;
        let mut corpus: Vec<TrainingRecord> = base;
        corpus.extend(reasoning_training);
        stats.count_records(&corpus);
        std::fs::create_dir_all(&self.config.paths.output_dir)?;
        let corpus_path = self.config.paths.output_dir.join("corpus.jsonl");
        emit_corpus(&corpus, &corpus_path)?;
        Ok(DistillOutput {
            corpus_path,
            stats,
            sampled_queries,
            negatives,
            reasoning_records,
            base_len,
            corpus_len: corpus.len(),
        })
    }

    /// Generate, resolve, and (optionally) agent-filter each query.
    /// Queries whose generation fails are skipped and counted. Invalid
    /// DocID strings never reach the agent but stay in the outcome.
    pub async fn run_queries(
        &self,
        backend: &dyn GenerativeBackend,
        dm: &dyn DecisionModel,
        queries: &[String],
        k: usize,
        use_agent: bool,
    ) -> Result<(Vec<QueryOutcome>, Vec<AgentTrace>, usize), PipelineError> {
        let rm = Bm25Rm::new(&self.index, self.config.bm25)?;
        let mut outcomes = Vec::new();
        let mut traces = Vec::new();
        let mut skipped = 0usize;
        for query in queries {
            let raw = match backend.generate(query, k).await {
                Ok(raw) => raw,
                Err(e) => {
                    log::warn!("generation failed for {query:?}: {e}");
                    skipped += 1;
                    continue;
                }
            };
            let result = GenerationResult::from_raw(&self.catalog, query.clone(), raw);
            let final_docs: Vec<String> = if use_agent {
                let (docs, trace) = filter_generation(
                    query,
                    &result.resolved,
                    &rm,
                    dm,
                    &self.catalog,
                    &self.config.agent,
                )
                .await;
                traces.push(trace);
                docs.into_iter().map(|d| d.doc_id).collect()
            } else {
                result.resolved.iter().take(k).map(|d| d.doc_id.clone()).collect()
            };
            outcomes.push(QueryOutcome {
                query: query.clone(),
                final_docs,
                invalid: result.invalid,
            });
        }
        Ok((outcomes, traces, skipped))
    }

    /// Score one system variant over the eval set.
    pub async fn eval_run(
        &self,
        eval_set: &EvalSet,
        k: usize,
        use_agent: bool,
        mode: AccMode,
        system: &str,
        preliminary: bool,
    ) -> Result<EvalReport, PipelineError> {
        let backend = self.build_backend(preliminary)?;
        let dm = self.build_decision_model();
        let queries: Vec<String> = eval_set.cases.iter().map(|c| c.query.clone()).collect();
        let (outcomes, _, skipped) = self
            .run_queries(backend.as_ref(), &dm, &queries, k, use_agent)
            .await?;
        let mut report = evaluate(system, k, use_agent, mode, &outcomes, eval_set, skipped)?;
        report.reasoning_corpus_used = !preliminary;
        Ok(report)
    }

    /// ACC at each K in `ks`, varying only the agent's candidate cap;
    /// generation depth stays at the configured `k`. Failed points are
    /// flagged, not fatal.
    pub async fn run_sweep(
        &self,
        eval_set: &EvalSet,
        ks: &[usize],
        use_agent: bool,
        mode: AccMode,
    ) -> Vec<SweepPoint> {
        topk_sweep(ks, |cap| async move {
            let variant = self.with_top_k_cap(cap);
            variant
                .eval_run(
                    eval_set,
                    self.config.k,
                    use_agent,
                    mode,
                    &format!("top{cap}"),
                    false,
                )
                .await
        })
        .await
    }

    /// A pipeline sharing this one's loaded state under a different
    /// candidate cap.
    fn with_top_k_cap(&self, cap: usize) -> Pipeline {
        let mut config = self.config.clone();
        config.agent.top_k_cap = cap;
        Pipeline {
            config,
            catalog: self.catalog.clone(),
            index: self.index.clone(),
            prompts: self.prompts.clone(),
        }
    }

    /// The three ablation variants: the full system, the system on the
    /// preliminary backend (no reasoning distillation), and the system
    /// without the decision agent.
    pub async fn run_ablation(&self, eval_set: &EvalSet, k: usize, mode: AccMode) -> Vec<AblationVariant> {
        let runs: [(&str, bool, bool); 3] = [
            ("full", true, false),
            ("no_reasoning", true, true),
            ("no_agent", false, false),
        ];
        let mut variants = Vec::with_capacity(runs.len());
        for (name, use_agent, preliminary) in runs {
            let variant = match self.eval_run(eval_set, k, use_agent, mode, name, preliminary).await {
                Ok(report) => AblationVariant {
                    name: name.to_string(),
                    report: Some(report),
                    error: None,
                },
                Err(e) => AblationVariant {
                    name: name.to_string(),
                    report: None,
                    error: Some(e.to_string()),
                },
            };
            variants.push(variant);
        }
        variants
    }

    /// Serialize the BM25 index to `path`, atomically.
    pub fn write_index_dump(&self, path: &Path) -> Result<(), PipelineError> {
        let parent = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        if !parent.exists() {
            std::fs::create_dir_all(parent)?;
        }
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(self.index.to_dump().as_bytes())?;
        tmp.flush()?;
        tmp.persist(path).map_err(|e| PipelineError::Io(e.error))?;
        Ok(())
    }
}
