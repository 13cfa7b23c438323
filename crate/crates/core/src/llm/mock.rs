//! Offline stand-ins for the model endpoint.
//!
//! [`ScriptedClient`] replays a fixed list of replies, optionally guarded
//! by a substring match on the latest input message, and fails loudly when
//! the script and the pipeline drift apart. [`FnClient`] wraps a closure
//! for oracle-style mocks computed from the request.

use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{ChatMessage, LlmClient, LlmError, Role, ToolCall, ToolSpec};

/// One scripted exchange: if `match` is present, the most recent user or
/// tool message must contain it; `reply` is returned as the assistant turn.
#[derive(Debug, Clone, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default)]
    pub match_substring: Option<String>,
    pub reply: ScriptReply,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScriptReply {
    #[serde(default)]
    pub content: String,
    #[serde(default)]
    pub tool_calls: Vec<ScriptToolCall>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScriptToolCall {
    #[serde(default)]
    pub id: Option<String>,
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Value,
}

impl ScriptEntry {
    fn to_message(&self, call_index: usize) -> ChatMessage {
        let tool_calls = self
            .reply
            .tool_calls
            .iter()
            .enumerate()
            .map(|(i, tc)| ToolCall {
                id: tc
                    .id
                    .clone()
                    .unwrap_or_else(|| format!("scripted-{call_index}-{i}")),
                name: tc.name.clone(),
                arguments: normalize_arguments(&tc.arguments),
            })
            .collect();
        ChatMessage {
            role: Role::Assistant,
            content: self.reply.content.clone(),
            tool_calls,
            tool_call_id: None,
        }
    }
}

/// Accept arguments either as a JSON object or as a string-encoded object,
/// which is how OpenAI-style endpoints transmit them.
fn normalize_arguments(v: &serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::String(s) => {
            serde_json::from_str(s).unwrap_or_else(|_| v.clone())
        }
        _ => v.clone(),
    }
}

/// Replays scripted replies strictly in order. Intended for single-threaded
/// use: concurrent callers would race for script position, so mock-driven
/// runs pin concurrency to 1.
pub struct ScriptedClient {
    entries: Vec<ScriptEntry>,
    cursor: Mutex<usize>,
}

impl ScriptedClient {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedClient {
            entries,
            cursor: Mutex::new(0),
        }
    }

    /// Load a script file: a JSON list of `{match?, reply}` objects.
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| LlmError::ModelError(format!("cannot read script {}: {e}", path.display())))?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&raw)
            .map_err(|e| LlmError::ModelError(format!("bad script {}: {e}", path.display())))?;
        Ok(ScriptedClient::new(entries))
    }

    /// Shorthand for plain-text replies with no match guards.
    pub fn replies<S: Into<String>>(texts: Vec<S>) -> Self {
        ScriptedClient::new(
            texts
                .into_iter()
                .map(|t| ScriptEntry {
                    match_substring: None,
                    reply: ScriptReply {
                        content: t.into(),
                        tool_calls: Vec::new(),
                    },
                })
                .collect(),
        )
    }

    /// How many scripted replies have been consumed.
    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.consumed()
    }
}

impl LlmClient for ScriptedClient {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _tools: &[ToolSpec],
    ) -> Result<ChatMessage, LlmError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let call = *cursor;
        let Some(entry) = self.entries.get(call) else {
            return Err(LlmError::ScriptExhausted { call });
        };
        if let Some(expected) = &entry.match_substring {
            let input = messages
                .iter()
                .rev()
                .find(|m| matches!(m.role, Role::User | Role::Tool))
                .map(|m| m.content.as_str())
                .unwrap_or("");
            if !input.contains(expected.as_str()) {
                return Err(LlmError::ScriptMismatch {
                    call,
                    expected: expected.clone(),
                });
            }
        }
        *cursor += 1;
        Ok(entry.to_message(call))
    }
}

/// Computes each reply from the request. The closure sees the full message
/// list, so label-aware oracles can parse whatever the prompt contains.
pub struct FnClient<F>(pub F);

impl<F> LlmClient for FnClient<F>
where
    F: Fn(&[ChatMessage]) -> Result<ChatMessage, LlmError> + Send + Sync,
{
    fn complete(
        &self,
        messages: &[ChatMessage],
        _tools: &[ToolSpec],
    ) -> Result<ChatMessage, LlmError> {
        (self.0)(messages)
    }
}
