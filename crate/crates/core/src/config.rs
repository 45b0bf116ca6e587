//! Pipeline configuration: one JSON file declares data paths, endpoints,
//! backend choice, and every tunable. Validation is fail-fast so a bad
//! config dies before any model call is made.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::catalog::Catalog;
use crate::gateway::{ModelEndpoint, PromptId, PromptTemplate};
use crate::sparse::{Bm25Params, IndexFields};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {io}")]
    Io { path: PathBuf, io: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataPaths {
    pub catalog: PathBuf,
    pub query_log: PathBuf,
    pub positives: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Endpoints {
    /// The judge ensemble; a pair is negative only on unanimity.
    pub judges: Vec<ModelEndpoint>,
    /// Teacher that writes rationales.
    pub reasoning: ModelEndpoint,
    /// Model behind the decision agent.
    pub decision: ModelEndpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrBackendConfig {
    /// Seeded BM25-plus-perturbation stand-in; no network.
    Stub {
        /// Per-slot hallucination probability in [0, 1].
        hallucination_rate: f64,
        /// Rate for the preliminary (pre-distillation) variant used by
        /// ablations; defaults to `hallucination_rate`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        preliminary_hallucination_rate: Option<f64>,
        /// Defaults to the pipeline seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// A live fine-tuned model.
    Remote {
        endpoint: ModelEndpoint,
        /// Pre-distillation model for ablations, if any.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        preliminary_endpoint: Option<ModelEndpoint>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Queries drawn from each frequency tertile.
    #[serde(default = "default_queries_per_stratum")]
    pub queries_per_stratum: usize,
    /// Most mined negatives kept per query.
    #[serde(default = "default_negatives_cap")]
    pub negatives_per_query_cap: usize,
    /// Positives given rationales; defaults to the mined negative count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pos: Option<usize>,
}

fn default_queries_per_stratum() -> usize {
    10
}

fn default_negatives_cap() -> usize {
    3
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            queries_per_stratum: default_queries_per_stratum(),
            negatives_per_query_cap: default_negatives_cap(),
            n_pos: None,
        }
    }
}

/// Optional replacement files for the shipped prompt wording.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PromptPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance_judgement: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_generation: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<PathBuf>,
}

/// The four prompts a run actually uses.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub relevance_judgement: PromptTemplate,
    pub reasoning_generation: PromptTemplate,
    pub decision: PromptTemplate,
    pub generation: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            relevance_judgement: PromptTemplate::default_for(PromptId::RelevanceJudgement),
            reasoning_generation: PromptTemplate::default_for(PromptId::ReasoningGeneration),
            decision: PromptTemplate::default_for(PromptId::Decision),
            generation: PromptTemplate::default_for(PromptId::Generation),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Master seed; every sampled choice in a run derives from it.
    pub seed: u64,
    pub paths: DataPaths,
    pub endpoints: Endpoints,
    pub gr_backend: GrBackendConfig,
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default)]
    pub index_fields: IndexFields,
    /// DocIDs generated per query.
    #[serde(default = "default_k")]
    pub k: usize,
    pub agent: AgentConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub prompts: PromptPaths,
    /// Extra instruction text for the judgement prompt.
    #[serde(default)]
    pub task_instruction: String,
    /// Concurrent model calls in flight per stage.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_k() -> usize {
    5
}

fn default_workers() -> usize {
    16
}

fn check(ok: bool, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(message.to_string()))
    }
}

fn rate_in_unit(value: f64, field: &str) -> Result<(), ConfigError> {
    check(
        (0.0..=1.0).contains(&value),
        &format!("{field} must be in [0, 1], got {value}"),
    )
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|io| ConfigError::Io {
            path: path.to_path_buf(),
            io,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Structural and numeric checks; no file system access.
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(!self.endpoints.judges.is_empty(), "endpoints.judges must not be empty")?;
        for judge in &self.endpoints.judges {
            judge.validate().map_err(ConfigError::Invalid)?;
        }
        self.endpoints.reasoning.validate().map_err(ConfigError::Invalid)?;
        self.endpoints.decision.validate().map_err(ConfigError::Invalid)?;
        match &self.gr_backend {
            GrBackendConfig::Stub {
                hallucination_rate,
                preliminary_hallucination_rate,
                ..
            } => {
                rate_in_unit(*hallucination_rate, "gr_backend.hallucination_rate")?;
                if let Some(rate) = preliminary_hallucination_rate {
                    rate_in_unit(*rate, "gr_backend.preliminary_hallucination_rate")?;
                }
            }
            GrBackendConfig::Remote {
                endpoint,
                preliminary_endpoint,
            } => {
                endpoint.validate().map_err(ConfigError::Invalid)?;
                if let Some(preliminary) = preliminary_endpoint {
                    preliminary.validate().map_err(ConfigError::Invalid)?;
                }
            }
        }
        self.bm25
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        check(self.k >= 1, "k must be at least 1")?;
        check(self.workers >= 1, "workers must be at least 1")?;
        check(
            !self.agent.perspectives.is_empty(),
            "agent.perspectives must not be empty",
        )?;
        check(
            self.agent.top_k_cap >= 1,
            "agent.top_k_cap must be at least 1",
        )?;
        check(
            self.sampling.queries_per_stratum >= 1,
            "sampling.queries_per_stratum must be at least 1",
        )?;
        check(
            self.sampling.negatives_per_query_cap >= 1,
            "sampling.negatives_per_query_cap must be at least 1",
        )?;
        Ok(())
    }

    /// Input files must exist before a run starts.
    pub fn validate_paths(&self) -> Result<(), ConfigError> {
        let mut required: Vec<(&str, &Path)> = vec![
            ("paths.catalog", &self.paths.catalog),
            ("paths.query_log", &self.paths.query_log),
            ("paths.positives", &self.paths.positives),
        ];
        for (field, path) in [
            ("prompts.relevance_judgement", &self.prompts.relevance_judgement),
            ("prompts.reasoning_generation", &self.prompts.reasoning_generation),
            ("prompts.decision", &self.prompts.decision),
            ("prompts.generation", &self.prompts.generation),
        ] {
            if let Some(path) = path {
                required.push((field, path));
            }
        }
        for (field, path) in required {
            check(
                path.is_file(),
                &format!("{field}: no such file: {}", path.display()),
            )?;
        }
        Ok(())
    }

    /// Checks that need the loaded catalog: a perspective the catalog never
    /// mentions can only be a typo.
    pub fn validate_against_catalog(&self, catalog: &Catalog) -> Result<(), ConfigError> {
        for perspective in &self.agent.perspectives {
            check(
                catalog.perspectives().iter().any(|p| p == perspective),
                &format!("agent.perspectives: {perspective:?} appears on no catalog document"),
            )?;
        }
        Ok(())
    }

    /// Load prompt overrides where configured, shipped defaults otherwise.
    pub fn resolved_prompts(&self) -> Result<PromptSet, ConfigError> {
        let load = |id: PromptId, path: &Option<PathBuf>| -> Result<PromptTemplate, ConfigError> {
            match path {
                Some(path) => PromptTemplate::from_file(id, path).map_err(|io| ConfigError::Io {
                    path: path.clone(),
                    io,
                }),
                None => Ok(PromptTemplate::default_for(id)),
            }
        };
        Ok(PromptSet {
            relevance_judgement: load(PromptId::RelevanceJudgement, &self.prompts.relevance_judgement)?,
            reasoning_generation: load(
                PromptId::ReasoningGeneration,
                &self.prompts.reasoning_generation,
            )?,
            decision: load(PromptId::Decision, &self.prompts.decision)?,
            generation: load(PromptId::Generation, &self.prompts.generation)?,
        })
    }
}
