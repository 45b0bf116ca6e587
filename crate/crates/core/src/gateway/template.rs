//! Prompt templates with `<name>` placeholders.
//!
//! The pipeline prompts (relevance judgement, reasoning generation,
//! decision, generation) ship as editable text files compiled in as
//! defaults; a config may point at replacement files. Bindings are
//! substituted verbatim in a single pass, so bound values are never
//! re-scanned for markers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("no binding for placeholder {0:?}")]
    MissingPlaceholder(String),
}

/// Which pipeline prompt a template is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    RelevanceJudgement,
    ReasoningGeneration,
    Decision,
    /// Prompt a remote generative backend answers with DocIDs.
    Generation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: PromptId,
    pub text: String,
}

const DEFAULT_RELEVANCE_JUDGEMENT: &str = include_str!("../../prompts/relevance_judgement.txt");
const DEFAULT_REASONING_GENERATION: &str = include_str!("../../prompts/reasoning_generation.txt");
const DEFAULT_DECISION: &str = include_str!("../../prompts/decision.txt");

const DEFAULT_GENERATION: &str = include_str!("../../prompts/generation.txt");

impl PromptTemplate {
    /// The shipped default wording for a prompt.
    pub fn default_for(id: PromptId) -> Self {
        let text = match id {
            PromptId::RelevanceJudgement => DEFAULT_RELEVANCE_JUDGEMENT,
            PromptId::ReasoningGeneration => DEFAULT_REASONING_GENERATION,
            PromptId::Decision => DEFAULT_DECISION,
            PromptId::Generation => DEFAULT_GENERATION,
        };
        PromptTemplate {
            id,
            text: text.trim_end().to_string(),
        }
    }

    pub fn from_file(id: PromptId, path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(PromptTemplate {
            id,
            text: std::fs::read_to_string(path)?.trim_end().to_string(),
        })
    }

    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        render(&self.text, bindings)
    }
}

fn placeholder_at(chars: &[char], start: usize) -> Option<(String, usize)> {
    // chars[start] == '<'; a placeholder is <ident> with ident over
    // [A-Za-z_][A-Za-z0-9_]*.
    let mut i = start + 1;
    let mut name = String::new();
    while i < chars.len() {
        let ch = chars[i];
        if ch == '>' {
            return if name.is_empty() { None } else { Some((name, i)) };
        }
        let ok = if name.is_empty() {
            ch.is_ascii_alphabetic() || ch == '_'
        } else {
            ch.is_ascii_alphanumeric() || ch == '_'
        };
        if !ok {
            return None;
        }
        name.push(ch);
        i += 1;
    }
    None
}

/// Substitute every `<name>` placeholder from `bindings`. Text that merely
/// looks bracket-ish but is not a well-formed placeholder passes through
/// untouched.
pub fn render(template: &str, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
    let chars: Vec<char> = template.chars().collect();
    let mut out = String::with_capacity(template.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '<' {
            if let Some((name, close)) = placeholder_at(&chars, i) {
                let value = bindings
                    .get(name.as_str())
                    .ok_or(TemplateError::MissingPlaceholder(name))?;
                out.push_str(value);
                i = close + 1;
                continue;
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    Ok(out)
}

/// Placeholder names appearing in a template, in order of first appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let chars: Vec<char> = template.chars().collect();
    let mut names: Vec<String> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '<' {
            if let Some((name, close)) = placeholder_at(&chars, i) {
                if !names.contains(&name) {
                    names.push(name);
                }
                i = close + 1;
                continue;
            }
        }
        i += 1;
    }
    names
}
