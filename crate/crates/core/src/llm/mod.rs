//! Chat-completion client contract.
//!
//! Everything that talks to a model goes through [`LlmClient`], so every
//! pipeline runs identically against the HTTP backend or a scripted mock.

mod http;
mod mock;

pub use http::HttpClient;
pub use mock::{FnClient, ScriptEntry, ScriptedClient};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("model call failed: {0}")]
    ModelError(String),
    #[error("scripted mock has no reply left (call {call})")]
    ScriptExhausted { call: usize },
    #[error("scripted reply {call} expected input containing {expected:?}")]
    ScriptMismatch { call: usize, expected: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// A tool invocation requested by the model. `arguments` is kept as a JSON
/// value; schema validation happens where the call is dispatched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn tool_reply(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }

    fn plain(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    /// Total content bytes, tool-call payloads included; the basis of the
    /// token estimate.
    pub fn byte_len(&self) -> usize {
        let mut n = self.content.len();
        for call in &self.tool_calls {
            n += call.name.len();
            n += call.arguments.to_string().len();
        }
        n
    }
}

/// Declared tool surface sent along with a completion request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    /// JSON schema of the arguments object.
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 1.0,
            max_tokens: None,
        }
    }
}

/// One completion round-trip. Implementations must be shareable across
/// threads; batch pipelines call `complete` concurrently.
pub trait LlmClient: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        tools: &[ToolSpec],
    ) -> Result<ChatMessage, LlmError>;
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn complete(
        &self,
        messages: &[ChatMessage],
        tools: &[ToolSpec],
    ) -> Result<ChatMessage, LlmError> {
        (**self).complete(messages, tools)
    }
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn complete(
        &self,
        messages: &[ChatMessage],
        tools: &[ToolSpec],
    ) -> Result<ChatMessage, LlmError> {
        (**self).complete(messages, tools)
    }
}
