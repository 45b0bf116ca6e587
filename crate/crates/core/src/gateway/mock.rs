//! Scripted chat-completions server for hermetic tests and local runs.
//! Every reply is decided by ordered match rules against the last user
//! message, so a whole pipeline run is reproducible from a script file.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

#[derive(Debug, Error)]
pub enum MockError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("script rule {rule}: {message}")]
    Script { rule: usize, message: String },
    #[error("cannot parse script: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchType {
    Substring,
    Regex,
}

/// One reply rule. Rules are tried in order; the first match wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub match_type: MatchType,
    pub pattern: String,
    pub reply: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    pub default_reply: String,
}

impl MockScript {
    /// Script with no rules: every request gets `default_reply`.
    pub fn constant(reply: impl Into<String>) -> Self {
        MockScript {
            rules: Vec::new(),
            default_reply: reply.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, MockError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MockError::Parse(e.to_string()))
    }

    fn compile(&self) -> Result<Vec<CompiledRule>, MockError> {
        self.rules
            .iter()
            .enumerate()
            .map(|(i, rule)| {
                let matcher = match rule.match_type {
                    MatchType::Substring => Matcher::Substring(rule.pattern.clone()),
                    MatchType::Regex => Matcher::Regex(
                        regex::Regex::new(&rule.pattern).map_err(|e| MockError::Script {
                            rule: i,
                            message: e.to_string(),
                        })?,
                    ),
                };
                Ok(CompiledRule {
                    matcher,
                    reply: rule.reply.clone(),
                })
            })
            .collect()
    }
}

enum Matcher {
    Substring(String),
    Regex(regex::Regex),
}

struct CompiledRule {
    matcher: Matcher,
    reply: String,
}

impl CompiledRule {
    fn matches(&self, content: &str) -> bool {
        match &self.matcher {
            Matcher::Substring(needle) => content.contains(needle),
            Matcher::Regex(re) => re.is_match(content),
        }
    }
}

struct Compiled {
    rules: Vec<CompiledRule>,
    default_reply: String,
}

/// Running mock server. Dropping the handle shuts the server down.
#[derive(Debug)]
pub struct MockServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl MockServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL clients should point at (no trailing slash).
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stop accepting and wait for in-flight requests to finish.
    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

impl Drop for MockServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Serve `script` on 127.0.0.1:`port` (0 picks an ephemeral port).
pub async fn serve_mock(port: u16, script: MockScript) -> Result<MockServerHandle, MockError> {
    let compiled = Arc::new(Compiled {
        rules: script.compile()?,
        default_reply: script.default_reply,
    });
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
        .await
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::AddrInUse {
                MockError::PortInUse(port)
            } else {
                MockError::Io(e)
            }
        })?;
    let addr = listener.local_addr()?;
    let app = Router::new()
        .route("/v1/chat/completions", post(handle_completion))
        .with_state(compiled);
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(MockServerHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}

async fn handle_completion(
    State(state): State<Arc<Compiled>>,
    Json(body): Json<serde_json::Value>,
) -> impl IntoResponse {
    let content = last_message_content(&body).unwrap_or_default();
    let reply = state
        .rules
        .iter()
        .find(|rule| rule.matches(content))
        .map(|rule| rule.reply.as_str())
        .unwrap_or(state.default_reply.as_str());
    let model = body.get("model").and_then(|m| m.as_str()).unwrap_or("mock");
    Json(serde_json::json!({
        "id": "mock-completion",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": reply},
            "finish_reason": "stop"
        }]
    }))
}

fn last_message_content(body: &serde_json::Value) -> Option<&str> {
    body.get("messages")?
        .as_array()?
        .last()?
        .get("content")?
        .as_str()
}
