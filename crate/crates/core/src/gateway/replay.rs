//! Scripted backend: pre-authored completions consumed strictly in order.

use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};
use similar::TextDiff;

use super::{BackendReply, GatewayError, LlmBackend, LlmRequest};

/// Characters of the received prompt shown in mismatch diagnostics.
pub const PROMPT_HEAD_CHARS: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    /// Substring of the newest request message, or `re:<regex>`. Empty
    /// matches anything.
    #[serde(rename = "match", default)]
    pub matcher: String,
    pub completion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
}

impl ReplayEntry {
    pub fn new(
        matcher: impl Into<String>,
        completion: impl Into<String>,
        output_tokens: u64,
    ) -> Self {
        ReplayEntry {
            matcher: matcher.into(),
            completion: completion.into(),
            output_tokens: Some(output_tokens),
            input_tokens: None,
        }
    }

    fn matches(&self, prompt: &str) -> Result<bool, GatewayError> {
        if let Some(pattern) = self.matcher.strip_prefix("re:") {
            let re = Regex::new(pattern).map_err(|e| {
                GatewayError::BackendUnavailable(format!("bad replay pattern `{pattern}`: {e}"))
            })?;
            Ok(re.is_match(prompt))
        } else {
            Ok(prompt.contains(&self.matcher))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayScript {
    pub entries: Vec<ReplayEntry>,
}

impl ReplayScript {
    pub fn new(entries: Vec<ReplayEntry>) -> Self {
        ReplayScript { entries }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let bytes = std::fs::read(path).map_err(|e| {
            GatewayError::BackendUnavailable(format!("replay script {}: {e}", path.display()))
        })?;
        serde_json::from_slice(&bytes).map_err(|e| {
            GatewayError::BackendUnavailable(format!("replay script {}: {e}", path.display()))
        })
    }

    /// Sum of the scripted output token counts.
    pub fn total_output_tokens(&self) -> u64 {
        self.entries.iter().filter_map(|e| e.output_tokens).sum()
    }
}

#[derive(Debug)]
pub struct ReplayBackend {
    script: ReplayScript,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(script: ReplayScript) -> Self {
        ReplayBackend {
            script,
            cursor: Mutex::new(0),
        }
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().unwrap()
    }

    pub fn remaining(&self) -> usize {
        self.script.entries.len() - self.consumed()
    }
}

impl LlmBackend for ReplayBackend {
    fn complete(&self, request: &LlmRequest) -> Result<BackendReply, GatewayError> {
        let mut cursor = self.cursor.lock().unwrap();
        let entry = self
            .script
            .entries
            .get(*cursor)
            .ok_or(GatewayError::ReplayExhausted { consumed: *cursor })?;
        let prompt = request
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        if !entry.matches(prompt)? {
            let head: String = prompt.chars().take(PROMPT_HEAD_CHARS).collect();
            let diff = TextDiff::from_lines(entry.matcher.as_str(), head.as_str())
                .unified_diff()
                .header("expected matcher", "received prompt")
                .to_string();
            return Err(GatewayError::ReplayMismatch {
                index: *cursor,
                expected: entry.matcher.clone(),
                received_head: head,
                diff,
            });
        }
        *cursor += 1;
        Ok(BackendReply {
            completion: entry.completion.clone(),
            input_tokens: entry.input_tokens,
            output_tokens: entry.output_tokens,
        })
    }
}
