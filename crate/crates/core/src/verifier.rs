//! Group-wise patch verification: group formation, prompt rendering,
//! boxed-verdict parsing, reward scoring, and batch judgment.
//!
//! Patches are judged in fixed-size groups so candidates give each other
//! context. The model answers with `\boxed{ids}`; an unboxed answer scores
//! zero, and per-slot agreement with ground truth gives the reward.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{Issue, Label, Patch};
use crate::llm::{ChatMessage, LlmClient, LlmError};
use crate::parallel::parallel_map;

pub const DEFAULT_GROUP_SIZE: usize = 4;

/// Rendered in place of a diff for padded slots and empty diffs.
pub const EMPTY_PATCH_PLACEHOLDER: &str = "(empty patch)";

pub const VERIFY_SYSTEM_PROMPT: &str = r"You are a software expert. You will be given a software issue and some patch candidates in user query. You need to judge which patch(es) can resolve the issue. Carefully review, critic, and compare the given candidates. You need to first think about the reasoning process in the mind until you get the final answer. Finally, put the ID(s) of correct patch candidates within \boxed{}, e.g., \boxed{1}, \boxed{2, 4}, \boxed{1, 2, 3, 4} (all correct), \boxed{} (all wrong).";

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("no patches to verify")]
    EmptyInput,
    #[error("slot {slot} of issue {issue_id} has no label")]
    MissingLabels { issue_id: String, slot: usize },
    #[error("model call for group {group_id} failed")]
    Model {
        group_id: usize,
        #[source]
        source: LlmError,
    },
}

/// A fixed-size verification unit. Slots hold the input patches in order;
/// the tail of the last group may be padding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchGroup {
    pub issue: Issue,
    /// Exactly the group size. Padded slots hold an empty-diff patch.
    pub patches: Vec<Patch>,
    /// True where the slot is padding rather than a real candidate.
    pub pad_mask: Vec<bool>,
}

impl PatchGroup {
    pub fn size(&self) -> usize {
        self.patches.len()
    }

    pub fn real_count(&self) -> usize {
        self.pad_mask.iter().filter(|p| !**p).count()
    }

    /// Real patches in slot order.
    pub fn real_patches(&self) -> impl Iterator<Item = &Patch> {
        self.patches
            .iter()
            .zip(&self.pad_mask)
            .filter(|(_, pad)| !**pad)
            .map(|(p, _)| p)
    }
}

/// Partition `patches` into ceil(len / group_size) groups, preserving
/// order. Only the last group may be padded.
pub fn form_groups(
    issue: &Issue,
    patches: &[Patch],
    group_size: usize,
) -> Result<Vec<PatchGroup>, VerifierError> {
    assert!(group_size >= 1, "group size must be positive");
    if patches.is_empty() {
        return Err(VerifierError::EmptyInput);
    }
    let mut groups = Vec::with_capacity(patches.len().div_ceil(group_size));
    for chunk in patches.chunks(group_size) {
        let mut slot_patches: Vec<Patch> = chunk.to_vec();
        let mut pad_mask = vec![false; chunk.len()];
        while slot_patches.len() < group_size {
            slot_patches.push(Patch {
                issue_id: issue.issue_id.clone(),
                diff: crate::diff::UnifiedDiff::empty(),
                label: None,
                source_tag: "padding".to_string(),
            });
            pad_mask.push(true);
        }
        groups.push(PatchGroup {
            issue: issue.clone(),
            patches: slot_patches,
            pad_mask,
        });
    }
    Ok(groups)
}

/// Render the verification prompt for one group: the fixed system text and
/// a user message wrapping the problem statement in `<issue>` tags and
/// each slot's diff in `<patch-i>` tags, 1-based, in slot order.
pub fn render_verify_prompt(group: &PatchGroup) -> (String, String) {
    let mut user = String::new();
    user.push_str("<issue>\n");
    user.push_str(group.issue.problem_statement.trim_end_matches('\n'));
    user.push_str("\n</issue>\n");
    for (i, patch) in group.patches.iter().enumerate() {
        let id = i + 1;
        let body = if patch.diff.text().is_empty() {
            EMPTY_PATCH_PLACEHOLDER
        } else {
            patch.diff.text().trim_end_matches('\n')
        };
        user.push_str(&format!("<patch-{id}>\n{body}\n</patch-{id}>\n"));
    }
    (VERIFY_SYSTEM_PROMPT.to_string(), user)
}

/// The model's parsed answer for one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub raw_text: String,
    pub boxed: bool,
    /// Slot ids claimed correct, already filtered to 1..=group_size.
    pub predicted_ids: BTreeSet<usize>,
}

/// Extract the verdict from free-form model output. The last complete
/// `\boxed{...}` wins; its contents are split on commas, non-integers and
/// out-of-range ids are dropped, duplicates collapse. Absence of any box
/// yields `boxed = false` and an empty set.
pub fn parse_verdict(raw_text: &str, group_size: usize) -> Verdict {
    let mut last_contents: Option<&str> = None;
    let mut search_from = 0;
    while let Some(found) = raw_text[search_from..].find("\\boxed{") {
        let open = search_from + found + "\\boxed{".len();
        match raw_text[open..].find('}') {
            Some(close) => {
                last_contents = Some(&raw_text[open..open + close]);
                search_from = open + close + 1;
            }
            None => break,
        }
    }

    let Some(contents) = last_contents else {
        return Verdict {
            raw_text: raw_text.to_string(),
            boxed: false,
            predicted_ids: BTreeSet::new(),
        };
    };

    let predicted_ids = contents
        .split(',')
        .filter_map(|piece| piece.trim().parse::<usize>().ok())
        .filter(|id| (1..=group_size).contains(id))
        .collect();
    Verdict {
        raw_text: raw_text.to_string(),
        boxed: true,
        predicted_ids,
    }
}

/// The scalar training signal for one verification call, in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
}

/// Fraction of slots whose predicted status matches the label; 0 when the
/// answer is unboxed. Padded slots count with label = incorrect, so a
/// verdict naming a padded slot loses that slot's credit.
pub fn score_reward(verdict: &Verdict, group: &PatchGroup) -> Result<Reward, VerifierError> {
    if !verdict.boxed {
        return Ok(Reward { value: 0.0 });
    }
    let n = group.size();
    let mut matches = 0usize;
    for (i, (patch, padded)) in group.patches.iter().zip(&group.pad_mask).enumerate() {
        let slot = i + 1;
        let label = if *padded {
            Label::Incorrect
        } else {
            patch.label.ok_or_else(|| VerifierError::MissingLabels {
                issue_id: group.issue.issue_id.clone(),
                slot,
            })?
        };
        let predicted = if verdict.predicted_ids.contains(&slot) {
            Label::Correct
        } else {
            Label::Incorrect
        };
        if predicted == label {
            matches += 1;
        }
    }
    Ok(Reward {
        value: matches as f64 / n as f64,
    })
}

/// One verified patch: what the model said, what the truth is, and where
/// the verdict came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub issue_id: String,
    /// Index of the patch in the input list handed to `verify_patches`.
    pub patch_index: usize,
    pub predicted: Label,
    pub label: Option<Label>,
    pub group_id: usize,
    /// SHA-256 of the raw verdict text, for replay auditing without
    /// storing whole transcripts.
    pub raw_verdict_digest: String,
}

pub(crate) fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Verify all patches of one issue: group, prompt, parse, and emit one
/// judgment per real patch in input order. Padded slots emit nothing.
/// Groups run concurrently up to `concurrency`.
pub fn verify_patches(
    issue: &Issue,
    patches: &[Patch],
    client: &dyn LlmClient,
    group_size: usize,
    concurrency: usize,
) -> Result<Vec<Judgment>, VerifierError> {
    let groups = form_groups(issue, patches, group_size)?;

    let verdicts: Vec<Result<Verdict, LlmError>> =
        parallel_map(groups.iter().collect(), concurrency, |group| {
            let (system, user) = render_verify_prompt(group);
            let messages = [ChatMessage::system(system), ChatMessage::user(user)];
            client
                .complete(&messages, &[])
                .map(|reply| parse_verdict(&reply.content, group.size()))
        });

    let mut judgments = Vec::with_capacity(patches.len());
    for (group_id, (group, verdict)) in groups.iter().zip(verdicts).enumerate() {
        let verdict = verdict.map_err(|source| VerifierError::Model { group_id, source })?;
        let digest = sha256_hex(&verdict.raw_text);
        for (slot_idx, padded) in group.pad_mask.iter().enumerate() {
            if *padded {
                continue;
            }
            let slot = slot_idx + 1;
            let patch_index = group_id * group_size + slot_idx;
            judgments.push(Judgment {
                issue_id: issue.issue_id.clone(),
                patch_index,
                predicted: if verdict.predicted_ids.contains(&slot) {
                    Label::Correct
                } else {
                    Label::Incorrect
                },
                label: group.patches[slot_idx].label,
                group_id,
                raw_verdict_digest: digest.clone(),
            });
        }
    }
    Ok(judgments)
}
