//! The rollout loop: drives a chat-completion model through search, edit,
//! and submit tool calls against one issue's workspace, under round and
//! token limits, and records the whole exchange as a [`Trajectory`].
//!
//! Search answers come from the immutable code graph of the pristine
//! snapshot; edits land in the workspace copy; the final patch is whatever
//! the workspace diff says at termination, whatever the reason.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegraph::{render_hits, CodeGraph, CodeGraphError, DEFAULT_RENDER_CAP};
use crate::data::Issue;
use crate::diff::UnifiedDiff;
use crate::llm::{ChatMessage, LlmClient, ToolCall, ToolSpec};
use crate::python::EntityKind;
use crate::workspace::{EditOutcome, SnapshotSource, Workspace, WorkspaceError};

pub const AGENT_SYSTEM_PROMPT: &str = "You are an expert AI software engineering agent. Your primary goal is to resolve a GitHub issue given in the user message. Following this workflow methodically:

1.  Understand the problem:
    - Thoroughly comprehend the issue description, identifying core components and expected behavior
    - Determine reproduction steps and failure conditions
2.  Explore and Locate:
    - Use `search_tool` to explore the relevant files, entities, and test cases related to the bug report
    - Locate the exact root cause of the bug
3.  Develop and Fix:
    - Develop minimal, targeted code modifications to address the root cause
    - Use `edit_tool` to apply surgical patch. Aim for minimal, clean changes
4.  Review and Revise:
    - Review the original reproduction steps to ensure the fix effectiveness
    - Review the relevant regression tests to avoid introducing any new bugs
    - Iterate using `search_tool` for review and `edit_tool` for revise until you confirm no edge cases are overlooked
5.  Submit the patch:
    - Call `patch_submission` tool to generate a unix diff patch and submit it to the user when confirming full resolution
    - Ensure the final patch is non-empty before finishing this conversation
    - All code changes persist throughout the conversation and will be included in the final patch";

/// Sent when an assistant turn carries no tool call; the round still counts.
pub const NO_TOOL_CALL_NUDGE: &str =
    "No tool call received. Use search_tool, edit_tool, or patch_submission to make progress.";

pub const DEFAULT_ROUND_LIMIT: usize = 50;
pub const DEFAULT_TOKEN_LIMIT: usize = 28_000;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Graph(#[from] CodeGraphError),
    #[error("cannot persist trajectory at {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trajectory file {path}")]
    Malformed {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutLimits {
    pub round_limit: usize,
    pub token_limit: usize,
}

impl Default for RolloutLimits {
    fn default() -> Self {
        RolloutLimits {
            round_limit: DEFAULT_ROUND_LIMIT,
            token_limit: DEFAULT_TOKEN_LIMIT,
        }
    }
}

/// Default budget estimator: total message bytes at four bytes per token,
/// rounded up. Swap in a real tokenizer via [`run_rollout_with`].
pub fn estimate_tokens(messages: &[ChatMessage]) -> usize {
    let bytes: usize = messages.iter().map(ChatMessage::byte_len).sum();
    bytes.div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Submitted,
    RoundLimit,
    TokenLimit,
    ModelError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub issue_id: String,
    pub turns: Vec<ChatMessage>,
    /// Number of assistant turns consumed.
    pub rounds_used: usize,
    /// Estimate over the full transcript at termination.
    pub prompt_token_estimate: usize,
    pub final_patch: UnifiedDiff,
    pub termination: Termination,
}

impl Trajectory {
    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let text = serde_json::to_string_pretty(self).expect("trajectory serializes");
        std::fs::write(path, text).map_err(|source| AgentError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let raw = std::fs::read_to_string(path).map_err(|source| AgentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|source| AgentError::Malformed {
            path: path.display().to_string(),
            source,
        })
    }
}

/// The three tools the agent may call, schemas included.
pub fn tool_specs() -> Vec<ToolSpec> {
    vec![
        ToolSpec {
            name: "edit_tool".to_string(),
            description: "A file edit tool that replaces an old string of text with a new string.\nNotes:\n1.  The `old_str` parameter must match a segment of the file's content **exactly**. Pay close attention to whitespace, indentation, and newlines.\nThe edit will fail if `old_str` is not found, or if it is found multiple times in the file. Ensure `old_str` is unique enough to target the specific code block.\n3. `edit_tool` **permanently modifies the actual repository** (changes persist to the final outcome).".to_string(),
            parameters: serde_json::json!({
                "type": "object",
                "properties": {
                    "path": {
                        "type": "string",
                        "description": "Relative file path e.g. `dir/file.py`."
                    },
                    "old_str": {
                        "type": "string",
                        "description": "The exact string/content to be replaced in the file. This must be a unique match within the entire file."
                    },
                    "new_str": {
                        "type": "string",
                        "description": "The new string that will replace `old_str`. Use an empty string to perform a deletion."
                    }
                },
                "required": ["path", "old_str", "new_str"]
            }),
        },
        ToolSpec {
            name: "search_tool".to_string(),
            description: "A code graph tool to show the source code of a function/class/class_method by its name.\nNotes:\n1. This tool is designed for Python code; it cannot find entities in other languages.\n2. If the `entity` name is not unique across the repository, the source code for all matching items will be displayed.\n3. This tool operates on a static, **initial snapshot of the repository**. Changes made with `edit_tool` will **not** be visible in the search results.".to_string(),
            parameters: serde_json::json!({
                "type": "object",
                "properties": {
                    "construct": {
                        "type": "string",
                        "description": "Type of program construct to search for.",
                        "enum": ["function", "class", "class_method"]
                    },
                    "entity": {
                        "type": "string",
                        "description": "The simple name of the entity to find (e.g., `my_function`, `MyClass`, `my_class_method`)."
                    }
                },
                "required": ["construct", "entity"]
            }),
        },
        ToolSpec {
            name: "patch_submission".to_string(),
            description: "Automatically generate a diff patch for existing code changes and submit it to the user."
                .to_string(),
            parameters: serde_json::json!({
                "type": "object",
                "properties": {},
                "required": []
            }),
        },
    ]
}

/// Result of executing one tool call: the tool message to append, and
/// whether the call was an accepted submission that ends the rollout.
#[derive(Debug)]
pub struct ToolResponse {
    pub message: ChatMessage,
    pub submit: bool,
}

fn str_arg<'a>(call: &'a ToolCall, key: &str) -> Result<&'a str, String> {
    match call.arguments.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s),
        Some(other) => Err(format!(
            "argument `{key}` must be a string, got {other}"
        )),
        None => Err(format!("missing required argument `{key}`")),
    }
}

/// Execute one tool call against the issue's graph and workspace. Every
/// failure mode becomes readable tool-message text; nothing escapes, so the
/// model always gets a turn to self-correct.
pub fn dispatch_tool(call: &ToolCall, graph: &CodeGraph, ws: &mut Workspace) -> ToolResponse {
    let (content, submit) = match call.name.as_str() {
        "search_tool" => (run_search(call, graph), false),
        "edit_tool" => (run_edit(call, ws), false),
        "patch_submission" => run_submission(ws),
        other => (
            format!(
                "Unknown tool `{other}`. Available tools: search_tool, edit_tool, patch_submission."
            ),
            false,
        ),
    };
    ToolResponse {
        message: ChatMessage::tool_reply(call.id.clone(), content),
        submit,
    }
}

fn run_search(call: &ToolCall, graph: &CodeGraph) -> String {
    let construct = match str_arg(call, "construct") {
        Ok(s) => s,
        Err(e) => return format!("search_tool error: {e}"),
    };
    let entity = match str_arg(call, "entity") {
        Ok(s) => s,
        Err(e) => return format!("search_tool error: {e}"),
    };
    let kind: EntityKind = match construct.parse() {
        Ok(k) => k,
        Err(e) => return format!("search_tool error: {e}"),
    };
    let hits = graph.search(kind, entity);
    render_hits(&hits, DEFAULT_RENDER_CAP)
}

fn run_edit(call: &ToolCall, ws: &mut Workspace) -> String {
    let path = match str_arg(call, "path") {
        Ok(s) => s.to_string(),
        Err(e) => return format!("edit_tool error: {e}"),
    };
    let old_str = match str_arg(call, "old_str") {
        Ok(s) => s.to_string(),
        Err(e) => return format!("edit_tool error: {e}"),
    };
    let new_str = match str_arg(call, "new_str") {
        Ok(s) => s.to_string(),
        Err(e) => return format!("edit_tool error: {e}"),
    };
    let record = ws.apply_edit(&path, &old_str, &new_str);
    match &record.outcome {
        EditOutcome::Applied => format!("Edit applied: `{path}` updated."),
        EditOutcome::NotFound => format!(
            "Edit failed (NotFound): `old_str` does not appear in `{path}`. \
             The file is unchanged; check whitespace and indentation."
        ),
        EditOutcome::AmbiguousMatch { occurrences } => format!(
            "Edit failed (AmbiguousMatch): `old_str` occurs {occurrences} times in `{path}`. \
             The file is unchanged; extend `old_str` until it is unique."
        ),
        EditOutcome::SyntaxRejected { issues } => {
            let detail: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
            format!(
                "Edit failed (SyntaxRejected): the change would leave `{path}` with invalid \
                 Python syntax: {}. The file is unchanged.",
                detail.join("; ")
            )
        }
        EditOutcome::BadPath { reason } => format!(
            "Edit failed (BadPath): {reason}. The file is unchanged."
        ),
    }
}

fn run_submission(ws: &Workspace) -> (String, bool) {
    match ws.generate_patch() {
        Ok(patch) if patch.is_empty() => (
            "Submission rejected: the patch is empty. Apply at least one code change with \
             edit_tool before submitting."
                .to_string(),
            false,
        ),
        Ok(patch) => (
            format!("Patch submitted:\n{}", patch.text()),
            true,
        ),
        Err(e) => (format!("patch_submission error: {e}"), false),
    }
}

/// Run one issue end to end with the default byte-based token estimator.
pub fn run_rollout(
    issue: &Issue,
    source: &SnapshotSource,
    client: &dyn LlmClient,
    limits: &RolloutLimits,
) -> Result<Trajectory, AgentError> {
    run_rollout_with(issue, source, client, limits, &estimate_tokens)
}

/// Run one issue end to end with a caller-supplied token estimator.
///
/// The loop requests a completion only while both limits hold, executes any
/// tool calls in order, and stops on an accepted submission, an exhausted
/// budget, or a model failure (which yields the partial trajectory instead
/// of an error). The final patch is generated from the workspace at
/// termination regardless of how the rollout ended.
pub fn run_rollout_with(
    issue: &Issue,
    source: &SnapshotSource,
    client: &dyn LlmClient,
    limits: &RolloutLimits,
    estimate: &(dyn Fn(&[ChatMessage]) -> usize + Sync),
) -> Result<Trajectory, AgentError> {
    let mut ws = Workspace::create(source, &issue.base_commit)?;
    let graph = CodeGraph::build(ws.base_root(), &issue.base_commit)?;
    let specs = tool_specs();

    let mut turns = vec![
        ChatMessage::system(AGENT_SYSTEM_PROMPT),
        ChatMessage::user(issue.problem_statement.clone()),
    ];
    let mut rounds_used = 0;
    let termination = loop {
        if rounds_used >= limits.round_limit {
            break Termination::RoundLimit;
        }
        if estimate(&turns) > limits.token_limit {
            break Termination::TokenLimit;
        }
        let reply = match client.complete(&turns, &specs) {
            Ok(reply) => reply,
            Err(_) => break Termination::ModelError,
        };
        rounds_used += 1;
        let calls = reply.tool_calls.clone();
        turns.push(reply);

        if calls.is_empty() {
            turns.push(ChatMessage::user(NO_TOOL_CALL_NUDGE));
            continue;
        }
        let mut submitted = false;
        for call in &calls {
            let response = dispatch_tool(call, &graph, &mut ws);
            turns.push(response.message);
            submitted |= response.submit;
        }
        if submitted {
            break Termination::Submitted;
        }
    };

    let final_patch = ws.generate_patch()?;
    let prompt_token_estimate = estimate(&turns);
    Ok(Trajectory {
        issue_id: issue.issue_id.clone(),
        turns,
        rounds_used,
        prompt_token_estimate,
        final_patch,
        termination,
    })
}
