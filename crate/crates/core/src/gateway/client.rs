//! Chat-completions client with retries, bounded concurrency, and the
//! response parsing conventions for each model role.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use tokio::sync::Semaphore;

use super::endpoint::ModelEndpoint;
use super::template::PromptTemplate;
use super::GatewayError;
use crate::catalog::{normalize_docid, Document};

/// Outcome of one relevance judgement call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JudgeVerdict {
    Relevant,
    Irrelevant,
    /// The reply named neither canonical token, or the call failed. Treated
    /// downstream as "not confirmed irrelevant".
    Unparseable,
}

/// Outcome of one decision call for a single perspective.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DecideOutcome {
    /// Input titles the model retained, in input order.
    pub retained: Vec<String>,
    /// Titles in the reply that matched no input candidate.
    pub hallucinated: usize,
    /// Transport or protocol failure: nothing was confirmed.
    pub degraded: bool,
}

const BACKOFF_BASE_SECS: f64 = 0.5;

async fn backoff_sleep(completed_attempt: u32) {
    let cap = BACKOFF_BASE_SECS * 2f64.powi(completed_attempt as i32);
    let jittered = rand::rng().random::<f64>() * cap;
    tokio::time::sleep(Duration::from_secs_f64(jittered)).await;
}

/// Client for one endpoint. Cheap to clone; clones share the in-flight
/// limiter.
#[derive(Debug, Clone)]
pub struct LlmClient {
    endpoint: ModelEndpoint,
    http: reqwest::Client,
    limiter: Arc<Semaphore>,
    api_key: Option<String>,
}

impl LlmClient {
    pub fn new(endpoint: ModelEndpoint) -> Self {
        Self::with_http_client(endpoint, reqwest::Client::new())
    }

    /// Build on a shared `reqwest::Client` (connection pools are per-client).
    pub fn with_http_client(endpoint: ModelEndpoint, http: reqwest::Client) -> Self {
        let api_key = endpoint.api_key();
        let limiter = Arc::new(Semaphore::new(endpoint.max_in_flight));
        LlmClient {
            endpoint,
            http,
            limiter,
            api_key,
        }
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    /// One chat completion: returns the first choice's message content.
    /// Transport failures, timeouts, and 5xx responses are retried up to
    /// `max_retries` times with exponential backoff (base 0.5 s, factor 2,
    /// full jitter); other failures are immediate.
    pub async fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let _permit = self
            .limiter
            .acquire()
            .await
            .expect("in-flight limiter never closes");
        let url = format!(
            "{}/v1/chat/completions",
            self.endpoint.base_url.trim_end_matches('/')
        );
        let body = serde_json::json!({
            "model": self.endpoint.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.endpoint.temperature,
            "max_tokens": self.endpoint.max_output_tokens,
        });
        let attempts = self.endpoint.max_retries + 1;
        let mut timed_out = false;
        let mut last_message = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                backoff_sleep(attempt - 1).await;
            }
            let mut request = self
                .http
                .post(&url)
                .json(&body)
                .timeout(Duration::from_secs_f64(self.endpoint.timeout_secs));
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            match request.send().await {
                Ok(response) => {
                    let status = response.status();
                    if status.is_server_error() {
                        timed_out = false;
                        last_message = format!("HTTP {status}");
                        continue;
                    }
                    if !status.is_success() {
                        return Err(GatewayError::Protocol(format!("HTTP {status}")));
                    }
                    let value: serde_json::Value = response
                        .json()
                        .await
                        .map_err(|e| GatewayError::Protocol(e.to_string()))?;
                    return extract_content(&value);
                }
                Err(e) => {
                    timed_out = e.is_timeout();
                    last_message = e.to_string();
                }
            }
        }
        if timed_out {
            Err(GatewayError::Timeout { attempts })
        } else {
            Err(GatewayError::Transport {
                attempts,
                message: last_message,
            })
        }
    }

    /// Ask this judge whether `doc` is relevant to `q`. Never fails: any
    /// transport or template problem degrades to `Unparseable` after
    /// logging, so one flaky call cannot kill a mining run.
    pub async fn judge_relevance(
        &self,
        template: &PromptTemplate,
        q: &str,
        doc: &Document,
        task_instruction: &str,
    ) -> JudgeVerdict {
        let bindings: BTreeMap<&str, String> = [
            ("q", q.to_string()),
            ("d_i", doc.title.clone()),
            ("task_instruction", task_instruction.to_string()),
        ]
        .into_iter()
        .collect();
        let prompt = match template.render(&bindings) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("judge {}: template error: {e}", self.endpoint.name);
                return JudgeVerdict::Unparseable;
            }
        };
        match self.complete(&prompt).await {
            Ok(reply) => parse_verdict(&reply),
            Err(e) => {
                log::warn!("judge {}: {e}", self.endpoint.name);
                JudgeVerdict::Unparseable
            }
        }
    }

    /// Generate the rationale for a labeled pair. `relevant` selects the
    /// label wording in the prompt.
    pub async fn generate_reasoning(
        &self,
        template: &PromptTemplate,
        q: &str,
        doc_title: &str,
        relevant: bool,
    ) -> Result<String, GatewayError> {
        let bindings: BTreeMap<&str, String> = [
            ("q", q.to_string()),
            ("d_i", doc_title.to_string()),
            (
                "label",
                if relevant { "relevant" } else { "irrelevant" }.to_string(),
            ),
        ]
        .into_iter()
        .collect();
        let prompt = template.render(&bindings)?;
        let reply = self.complete(&prompt).await?;
        let trimmed = reply.trim();
        if trimmed.is_empty() {
            return Err(GatewayError::EmptyResponse);
        }
        Ok(trimmed.to_string())
    }

    /// One decision call: which of `candidates` (title, perspective value)
    /// does the model keep for `perspective`? Replied titles are normalized
    /// and intersected with the input; anything else is counted as
    /// hallucinated and dropped. Transport failure confirms nothing.
    pub async fn decide(
        &self,
        template: &PromptTemplate,
        q: &str,
        candidates: &[(String, String)],
        perspective: &str,
    ) -> DecideOutcome {
        if candidates.is_empty() {
            return DecideOutcome::default();
        }
        let serialized = candidates
            .iter()
            .map(|(title, value)| format!("{{title: {title}, {perspective}: {value}}}"))
            .collect::<Vec<_>>()
            .join("; ");
        let bindings: BTreeMap<&str, String> = [
            ("q", q.to_string()),
            ("candidates", serialized),
            ("persp_name", perspective.to_string()),
        ]
        .into_iter()
        .collect();
        let prompt = match template.render(&bindings) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("decision {}: template error: {e}", self.endpoint.name);
                return DecideOutcome {
                    degraded: true,
                    ..DecideOutcome::default()
                };
            }
        };
        let reply = match self.complete(&prompt).await {
            Ok(reply) => reply,
            Err(GatewayError::EmptyResponse) => String::new(),
            Err(e) => {
                log::warn!("decision {} ({perspective}): {e}", self.endpoint.name);
                return DecideOutcome {
                    degraded: true,
                    ..DecideOutcome::default()
                };
            }
        };
        let mut named: Vec<String> = Vec::new();
        let mut hallucinated = 0usize;
        let by_norm: BTreeMap<String, &str> = candidates
            .iter()
            .map(|(title, _)| (normalize_docid(title), title.as_str()))
            .collect();
        for piece in split_title_list(&reply) {
            let norm = normalize_docid(&piece);
            if norm.is_empty() {
                continue;
            }
            match by_norm.get(&norm) {
                Some(title) => {
                    if !named.iter().any(|t| t == title) {
                        named.push(title.to_string());
                    }
                }
                None => hallucinated += 1,
            }
        }
        // Report in input order so downstream traces are stable no matter
        // how the model ordered its reply.
        let retained = candidates
            .iter()
            .filter(|(title, _)| named.iter().any(|t| t == title))
            .map(|(title, _)| title.clone())
            .collect();
        DecideOutcome {
            retained,
            hallucinated,
            degraded: false,
        }
    }
}

fn extract_content(value: &serde_json::Value) -> Result<String, GatewayError> {
    let choices = value
        .get("choices")
        .and_then(|c| c.as_array())
        .ok_or_else(|| GatewayError::Protocol("missing choices array".to_string()))?;
    let Some(first) = choices.first() else {
        return Err(GatewayError::EmptyResponse);
    };
    first
        .pointer("/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Protocol("missing message content".to_string()))
}

/// Split a model reply into title candidates: one per line or separated by
/// ASCII/full-width semicolons, with list bullets stripped.
pub fn split_title_list(reply: &str) -> Vec<String> {
    reply
        .split(['\n', ';', '；'])
        .map(|piece| {
            piece
                .trim()
                .trim_start_matches(['-', '*', '•'])
                .trim()
                .to_string()
        })
        .filter(|piece| !piece.is_empty())
        .collect()
}

fn contains_word_ci(haystack: &str, needle_lower: &str) -> bool {
    let hay: Vec<char> = haystack.to_lowercase().chars().collect();
    let needle: Vec<char> = needle_lower.chars().collect();
    if needle.is_empty() || hay.len() < needle.len() {
        return false;
    }
    for start in 0..=(hay.len() - needle.len()) {
        if hay[start..start + needle.len()] != needle[..] {
            continue;
        }
        let before_ok = start == 0 || !hay[start - 1].is_ascii_alphanumeric();
        let end = start + needle.len();
        let after_ok = end == hay.len() || !hay[end].is_ascii_alphanumeric();
        if before_ok && after_ok {
            return true;
        }
    }
    false
}

/// Map a judge reply onto a verdict. The irrelevant tokens are checked
/// first: every "irrelevant" contains "relevant" as a substring, and
/// "不相关" contains "相关", so order plus word-boundary matching keeps the
/// negative form from being misread.
pub fn parse_verdict(reply: &str) -> JudgeVerdict {
    if contains_word_ci(reply, "irrelevant") || reply.contains("不相关") {
        JudgeVerdict::Irrelevant
    } else if contains_word_ci(reply, "relevant") || reply.contains("相关") {
        JudgeVerdict::Relevant
    } else {
        JudgeVerdict::Unparseable
    }
}
