//! Serving configuration for one model role.

use serde::{Deserialize, Serialize};

/// One chat-completions endpoint: a judge, the reasoning generator, the
/// decision model, or a remote generative retriever. The bearer token, when
/// needed, comes from the environment variable named by
/// [`ModelEndpoint::api_key_var`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub name: String,
    pub base_url: String,
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_max_output_tokens() -> u32 {
    512
}

fn default_timeout_secs() -> f64 {
    30.0
}

fn default_max_retries() -> u32 {
    3
}

fn default_max_in_flight() -> usize {
    8
}

impl ModelEndpoint {
    /// Minimal endpoint with all defaults, handy for tests and mocks.
    pub fn new(name: &str, base_url: &str, model_id: &str) -> Self {
        ModelEndpoint {
            name: name.to_string(),
            base_url: base_url.to_string(),
            model_id: model_id.to_string(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("endpoint name is empty".to_string());
        }
        if self.base_url.trim().is_empty() {
            return Err(format!("endpoint {}: base_url is empty", self.name));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("endpoint {}: temperature must be >= 0", self.name));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(format!("endpoint {}: timeout_secs must be > 0", self.name));
        }
        if self.max_in_flight < 1 {
            return Err(format!("endpoint {}: max_in_flight must be >= 1", self.name));
        }
        Ok(())
    }

    /// Environment variable consulted for this endpoint's bearer token:
    /// `GRS_API_KEY_<NAME>` with the name uppercased and `-` mapped to `_`.
    pub fn api_key_var(&self) -> String {
        let mut suffix = String::with_capacity(self.name.len());
        for ch in self.name.chars() {
            if ch.is_ascii_alphanumeric() {
                suffix.push(ch.to_ascii_uppercase());
            } else {
                suffix.push('_');
            }
        }
        format!("GRS_API_KEY_{suffix}")
    }

    pub fn api_key(&self) -> Option<String> {
        std::env::var(self.api_key_var()).ok().filter(|k| !k.is_empty())
    }
}
