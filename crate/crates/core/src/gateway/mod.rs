//! Uniform client for every LLM role in the pipeline (relevance judges,
//! reasoning generator, decision model) over an OpenAI-compatible chat wire
//! protocol, plus prompt templating and a scripted mock server for hermetic
//! testing.

pub mod client;
pub mod endpoint;
pub mod mock;
pub mod template;

pub use client::{parse_verdict, DecideOutcome, JudgeVerdict, LlmClient};
pub use endpoint::ModelEndpoint;
pub use mock::{serve_mock, MatchType, MockError, MockRule, MockScript, MockServerHandle};
pub use template::{render, PromptId, PromptTemplate, TemplateError};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model returned an empty response")]
    EmptyResponse,
    #[error(transparent)]
    Template(#[from] TemplateError),
}
