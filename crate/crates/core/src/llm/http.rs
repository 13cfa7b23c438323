//! OpenAI-compatible chat-completions backend.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ChatMessage, LlmClient, LlmError, Role, SamplingParams, ToolCall, ToolSpec};

/// Blocking HTTP client for a `/chat/completions`-shaped endpoint.
/// Transient failures (transport errors, 408/429/5xx) are retried with
/// exponential backoff before surfacing as `ModelError`.
pub struct HttpClient {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    params: SamplingParams,
    max_retries: u32,
    base_backoff: Duration,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpClient {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            params: SamplingParams::default(),
            max_retries: 3,
            base_backoff: Duration::from_millis(500),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(600))
                .build()
                .expect("reqwest client builds with static config"),
        }
    }

    /// Bearer credential, typically read from an environment variable by
    /// the caller; never log or echo it.
    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_params(mut self, params: SamplingParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_retries(mut self, max_retries: u32, base_backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.base_backoff = base_backoff;
        self
    }

    fn request_body(&self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": messages.iter().map(wire_message).collect::<Vec<_>>(),
            "temperature": self.params.temperature,
        });
        if let Some(max) = self.params.max_tokens {
            body["max_tokens"] = json!(max);
        }
        if !tools.is_empty() {
            body["tools"] = Value::Array(tools.iter().map(wire_tool).collect());
        }
        body
    }
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut out = json!({"role": role, "content": m.content});
    if !m.tool_calls.is_empty() {
        out["tool_calls"] = Value::Array(
            m.tool_calls
                .iter()
                .map(|tc| {
                    json!({
                        "id": tc.id,
                        "type": "function",
                        "function": {
                            "name": tc.name,
                            "arguments": tc.arguments.to_string(),
                        },
                    })
                })
                .collect(),
        );
    }
    if let Some(id) = &m.tool_call_id {
        out["tool_call_id"] = json!(id);
    }
    out
}

fn wire_tool(t: &ToolSpec) -> Value {
    json!({
        "type": "function",
        "function": {
            "name": t.name,
            "description": t.description,
            "parameters": t.parameters,
        },
    })
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Vec<WireToolCall>,
}

#[derive(Deserialize)]
struct WireToolCall {
    #[serde(default)]
    id: Option<String>,
    function: WireFunction,
}

#[derive(Deserialize)]
struct WireFunction {
    name: String,
    #[serde(default)]
    arguments: String,
}

/// Decode a chat-completions response body into an assistant message.
fn parse_response(body: &str) -> Result<ChatMessage, LlmError> {
    let resp: WireResponse = serde_json::from_str(body)
        .map_err(|e| LlmError::ModelError(format!("undecodable response: {e}")))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::ModelError("response carried no choices".into()))?;
    let tool_calls = choice
        .message
        .tool_calls
        .into_iter()
        .enumerate()
        .map(|(i, tc)| ToolCall {
            id: tc.id.unwrap_or_else(|| format!("call-{i}")),
            name: tc.function.name,
            arguments: serde_json::from_str(&tc.function.arguments)
                .unwrap_or(Value::Null),
        })
        .collect();
    Ok(ChatMessage {
        role: Role::Assistant,
        content: choice.message.content.unwrap_or_default(),
        tool_calls,
        tool_call_id: None,
    })
}

fn retryable_status(status: reqwest::StatusCode) -> bool {
    status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error()
}

impl LlmClient for HttpClient {
    fn complete(
        &self,
        messages: &[ChatMessage],
        tools: &[ToolSpec],
    ) -> Result<ChatMessage, LlmError> {
        let body = self.request_body(messages, tools);
        let mut last_error = String::new();

        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.base_backoff * 2u32.pow(attempt - 1));
            }
            let mut req = self.http.post(&self.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        return parse_response(&text);
                    }
                    last_error = format!("status {status}: {}", text.chars().take(400).collect::<String>());
                    if !retryable_status(status) {
                        break;
                    }
                }
                Err(e) => last_error = format!("transport: {e}"),
            }
        }
        Err(LlmError::ModelError(format!(
            "request to {} failed after {} attempt(s): {last_error}",
            self.endpoint,
            self.max_retries + 1,
        )))
    }
}
