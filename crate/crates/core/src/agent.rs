//! Multi-perspective decision agent: expand each generated DocID through a
//! retrieval model, pool the candidates, and keep only documents every
//! perspective's decision call retains.

use std::collections::{BTreeSet, HashSet};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Document};
use crate::gateway::{DecideOutcome, LlmClient, PromptTemplate};
use crate::sparse::{Bm25Params, InvertedIndex, SparseError};

/// What to do with a candidate whose value for a perspective is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingFieldPolicy {
    /// Retain without asking: the model cannot judge a value it cannot see.
    #[default]
    PassThrough,
    /// Drop from that perspective's retained set.
    Exclude,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Expansions added per seed document.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Candidate pool cap after dedup.
    #[serde(default = "default_top_k_cap")]
    pub top_k_cap: usize,
    /// Attribute names the agent filters on, one decision call each.
    pub perspectives: Vec<String>,
    #[serde(default)]
    pub missing_field_policy: MissingFieldPolicy,
    /// Keep each seed itself in the candidate pool.
    #[serde(default = "default_include_seed")]
    pub include_seed: bool,
}

fn default_m() -> usize {
    3
}

fn default_top_k_cap() -> usize {
    5
}

fn default_include_seed() -> bool {
    true
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            m: default_m(),
            top_k_cap: default_top_k_cap(),
            perspectives: Vec::new(),
            missing_field_policy: MissingFieldPolicy::default(),
            include_seed: default_include_seed(),
        }
    }
}

/// Ranked retrieval over the catalog, used to expand seeds.
pub trait RetrievalModel: Send + Sync {
    /// Top `k` document indices for `query`, best first.
    fn retrieve(&self, query: &str, k: usize) -> Vec<usize>;
}

/// The default retrieval model: BM25 over the shared index.
pub struct Bm25Rm<'a> {
    index: &'a InvertedIndex,
    params: Bm25Params,
}

impl<'a> Bm25Rm<'a> {
    pub fn new(index: &'a InvertedIndex, params: Bm25Params) -> Result<Self, SparseError> {
        params.validate()?;
        Ok(Bm25Rm { index, params })
    }
}

impl RetrievalModel for Bm25Rm<'_> {
    fn retrieve(&self, query: &str, k: usize) -> Vec<usize> {
        if k == 0 {
            return Vec::new();
        }
        self.index
            .retrieve(&self.params, query, k)
            .expect("params validated at construction")
            .into_iter()
            .map(|(doc, _)| doc)
            .collect()
    }
}

/// One decision call: which candidates survive one perspective.
/// `candidates` pairs each title with its value for that perspective.
#[async_trait]
pub trait DecisionModel: Send + Sync {
    async fn decide(
        &self,
        query: &str,
        candidates: &[(String, String)],
        perspective: &str,
    ) -> DecideOutcome;
}

/// Decision model backed by a live endpoint.
pub struct GatewayDecision {
    client: LlmClient,
    template: PromptTemplate,
}

impl GatewayDecision {
    pub fn new(client: LlmClient, template: PromptTemplate) -> Self {
        GatewayDecision { client, template }
    }
}

#[async_trait]
impl DecisionModel for GatewayDecision {
    async fn decide(
        &self,
        query: &str,
        candidates: &[(String, String)],
        perspective: &str,
    ) -> DecideOutcome {
        self.client
            .decide(&self.template, query, candidates, perspective)
            .await
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum DropReason {
    /// Already in the pool under an earlier seed.
    Duplicate,
    /// Pool was full.
    CapExceeded,
    /// Unknown value under the exclude policy.
    MissingField { perspective: String },
    /// The perspective's model did not retain it.
    FilteredOut { perspective: String },
    /// The perspective's decision call failed, retaining nothing.
    Degraded { perspective: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub doc_id: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedExpansion {
    pub seed: String,
    /// Expansion doc_ids in rank order, the seed itself excluded.
    pub expansions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerspectiveTrace {
    pub perspective: String,
    /// Candidates sent to the decision model.
    pub asked: Vec<String>,
    /// Unknown-valued candidates retained without asking.
    pub auto_retained: Vec<String>,
    /// Candidates the model retained.
    pub retained: Vec<String>,
    pub hallucinated: usize,
    pub degraded: bool,
}

/// Full provenance of one agent run; every document that fell out of the
/// pipeline carries at least one drop record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub query: String,
    pub seeds: Vec<SeedExpansion>,
    /// The deduplicated, capped candidate pool.
    pub candidates: Vec<String>,
    pub dropped_in_assembly: Vec<DropRecord>,
    pub perspectives: Vec<PerspectiveTrace>,
    pub final_docs: Vec<String>,
    pub dropped_in_decision: Vec<DropRecord>,
}

/// Expand one seed: retrieve `m + 1`, drop the seed itself wherever it
/// ranks, keep the first `m` distinct others.
fn expand_seed(rm: &dyn RetrievalModel, catalog: &Catalog, seed: &Document, m: usize) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    rm.retrieve(&seed.title, m + 1)
        .into_iter()
        .filter(|&doc| catalog.documents()[doc].doc_id != seed.doc_id)
        .take(m)
        .collect()
}

/// Order-preserving intersection: candidates retained by every perspective.
pub fn intersect_retained(candidates: &[String], retained: &[BTreeSet<String>]) -> Vec<String> {
    candidates
        .iter()
        .filter(|c| retained.iter().all(|set| set.contains(*c)))
        .cloned()
        .collect()
}

/// Run the agent for one query's resolved seeds. Returns the surviving
/// documents in candidate-pool order plus the full trace.
pub async fn filter_generation(
    query: &str,
    seeds: &[Document],
    rm: &dyn RetrievalModel,
    dm: &dyn DecisionModel,
    catalog: &Catalog,
    cfg: &AgentConfig,
) -> (Vec<Document>, AgentTrace) {
    // Stage 1: expansion.
    let mut seed_traces = Vec::with_capacity(seeds.len());
    let mut pool_ids: Vec<String> = Vec::new();
    let mut dropped_in_assembly = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let push_candidate = |doc_id: &str,
                              pool_ids: &mut Vec<String>,
                              dropped: &mut Vec<DropRecord>,
                              seen: &mut HashSet<String>| {
        if !seen.insert(doc_id.to_string()) {
            dropped.push(DropRecord {
                doc_id: doc_id.to_string(),
                reason: DropReason::Duplicate,
            });
        } else if pool_ids.len() >= cfg.top_k_cap {
            dropped.push(DropRecord {
                doc_id: doc_id.to_string(),
                reason: DropReason::CapExceeded,
            });
        } else {
            pool_ids.push(doc_id.to_string());
        }
    };
    for seed in seeds {
        let expansions = expand_seed(rm, catalog, seed, cfg.m);
        let expansion_ids: Vec<String> = expansions
            .iter()
            .map(|&doc| catalog.documents()[doc].doc_id.clone())
            .collect();
        if cfg.include_seed {
            push_candidate(&seed.doc_id, &mut pool_ids, &mut dropped_in_assembly, &mut seen);
        }
        for id in &expansion_ids {
            push_candidate(id, &mut pool_ids, &mut dropped_in_assembly, &mut seen);
        }
        seed_traces.push(SeedExpansion {
            seed: seed.doc_id.clone(),
            expansions: expansion_ids,
        });
    }
    let candidates: Vec<&Document> = pool_ids
        .iter()
        .map(|id| catalog.resolve(id).expect("pool ids come from the catalog"))
        .collect();

    // Stage 2: one decision per perspective, concurrently.
    let perspective_runs = cfg.perspectives.iter().map(|perspective| {
        let candidates = &candidates;
        async move {
            let mut asked: Vec<(String, String)> = Vec::new();
            let mut auto_retained: Vec<String> = Vec::new();
            for doc in candidates {
                match doc.attribute(perspective) {
                    Some(value) => asked.push((doc.title.clone(), value.to_string())),
                    // Under the exclude policy an unknown value is simply
                    // never retained; stage 4 records the drop.
                    None => {
                        if cfg.missing_field_policy == MissingFieldPolicy::PassThrough {
                            auto_retained.push(doc.doc_id.clone());
                        }
                    }
                }
            }
            let outcome = if asked.is_empty() {
                DecideOutcome::default()
            } else {
                dm.decide(query, &asked, perspective).await
            };
            (perspective.clone(), asked, auto_retained, outcome)
        }
    });
    let outcomes = futures::future::join_all(perspective_runs).await;

    // Stage 3: intersect.
    let mut perspective_traces = Vec::with_capacity(outcomes.len());
    let mut retained_sets: Vec<BTreeSet<String>> = Vec::with_capacity(outcomes.len());
    for (perspective, asked, auto_retained, outcome) in outcomes {
        let mut retained_ids: Vec<String> = Vec::new();
        let mut set = BTreeSet::new();
        if !outcome.degraded {
            for title in &outcome.retained {
                let doc = catalog.resolve(title).expect("retained titles are candidates");
                retained_ids.push(doc.doc_id.clone());
                set.insert(doc.doc_id.clone());
            }
            for id in &auto_retained {
                set.insert(id.clone());
            }
        }
        perspective_traces.push(PerspectiveTrace {
            perspective,
            asked: asked.iter().map(|(t, _)| crate::catalog::normalize_docid(t)).collect(),
            auto_retained: if outcome.degraded { Vec::new() } else { auto_retained },
            retained: retained_ids,
            hallucinated: outcome.hallucinated,
            degraded: outcome.degraded,
        });
        retained_sets.push(set);
    }
    let final_ids = intersect_retained(&pool_ids, &retained_sets);
    let final_set: HashSet<&String> = final_ids.iter().collect();

    // Stage 4: drop records for everything the decision stage removed.
    let mut dropped_in_decision = Vec::new();
    for id in &pool_ids {
        if final_set.contains(id) {
            continue;
        }
        for trace in &perspective_traces {
            if trace.degraded {
                dropped_in_decision.push(DropRecord {
                    doc_id: id.clone(),
                    reason: DropReason::Degraded {
                        perspective: trace.perspective.clone(),
                    },
                });
            } else if !trace.retained.contains(id) && !trace.auto_retained.contains(id) {
                let doc = catalog.resolve(id).expect("pool ids come from the catalog");
                let reason = if doc.attribute(&trace.perspective).is_none() {
                    DropReason::MissingField {
                        perspective: trace.perspective.clone(),
                    }
                } else {
                    DropReason::FilteredOut {
                        perspective: trace.perspective.clone(),
                    }
                };
                dropped_in_decision.push(DropRecord {
                    doc_id: id.clone(),
                    reason,
                });
            }
        }
    }

    let final_docs: Vec<Document> = final_ids
        .iter()
        .map(|id| catalog.resolve(id).expect("pool ids come from the catalog").clone())
        .collect();
    let trace = AgentTrace {
        query: query.to_string(),
        seeds: seed_traces,
        candidates: pool_ids,
        dropped_in_assembly,
        perspectives: perspective_traces,
        final_docs: final_ids,
        dropped_in_decision,
    };
    (final_docs, trace)
}
