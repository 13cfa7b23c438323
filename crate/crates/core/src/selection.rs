//! Test-time selection: filter sampled patches with group verification,
//! then pick a single winner in a second round. Also similarity-aware
//! group assembly and verdict-consistency profiling across repeated runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Issue, Label, Patch};
use crate::llm::{ChatMessage, LlmClient, LlmError};
use crate::parallel::parallel_map;
use crate::verifier::{
    form_groups, parse_verdict, render_verify_prompt, sha256_hex, verify_patches, PatchGroup,
    VerifierError,
};

/// Appended to the verification system prompt in selection rounds, where
/// the answer must name exactly one candidate.
pub const SINGLE_CHOICE_AMENDMENT: &str = r"For this task you must choose exactly one candidate: put the ID of the single most likely correct patch within \boxed{}, e.g., \boxed{2}.";

/// Survivor counts above this run elimination sub-rounds before the final
/// single prompt.
pub const ROUND2_CONTEXT_CAP: usize = 16;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no patches to select from")]
    EmptyInput,
    #[error("similarity is undefined for an empty patch")]
    EmptyPatch,
    #[error(transparent)]
    Verify(#[from] VerifierError),
    #[error("model call in {stage} failed")]
    Model {
        stage: String,
        #[source]
        source: LlmError,
    },
}

/// Pairwise diff similarity in [0, 1]: 1 minus the character-level edit
/// distance between the diff texts, normalized by the longer text.
pub fn diff_similarity(p1: &Patch, p2: &Patch) -> Result<f64, SelectionError> {
    if p1.diff.is_empty() || p2.diff.is_empty() {
        return Err(SelectionError::EmptyPatch);
    }
    let a: Vec<char> = p1.diff.text().chars().collect();
    let b: Vec<char> = p2.diff.text().chars().collect();
    let dist = levenshtein(&a, &b);
    let max_len = a.len().max(b.len());
    Ok(1.0 - dist as f64 / max_len as f64)
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            curr[j + 1] = substitution.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Symmetric pairwise similarity over one issue's patches; diagonal is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub n: usize,
    /// Row-major n*n values.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn compute(patches: &[Patch]) -> Result<Self, SelectionError> {
        if patches.is_empty() {
            return Err(SelectionError::EmptyInput);
        }
        let n = patches.len();
        let mut values = vec![1.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let s = diff_similarity(&patches[i], &patches[j])?;
                values[i * n + j] = s;
                values[j * n + i] = s;
            }
        }
        Ok(SimilarityMatrix { n, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupPolicy {
    /// Input order, chunked; the default used everywhere else.
    Sequential,
    /// Greedy clusters of mutually similar patches.
    Homogeneous,
    /// Greedy clusters of mutually dissimilar patches.
    Heterogeneous,
}

/// Partition patches into verification groups under the given policy.
/// Every patch lands in exactly one group; only the last (sequential) or
/// shortest (similarity policies) group is padded.
pub fn assemble_groups(
    issue: &Issue,
    patches: &[Patch],
    policy: GroupPolicy,
    group_size: usize,
) -> Result<Vec<PatchGroup>, SelectionError> {
    if patches.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    if policy == GroupPolicy::Sequential {
        return Ok(form_groups(issue, patches, group_size)?);
    }

    let matrix = SimilarityMatrix::compute(patches)?;
    let maximize = policy == GroupPolicy::Homogeneous;
    let mut remaining: Vec<usize> = (0..patches.len()).collect();
    let mut index_groups: Vec<Vec<usize>> = Vec::new();

    while !remaining.is_empty() {
        let mut group = vec![seed_pairless(&mut remaining, &matrix, maximize)];
        while group.len() < group_size && !remaining.is_empty() {
            let (pos, _) = remaining
                .iter()
                .enumerate()
                .map(|(pos, &cand)| {
                    let mean: f64 = group.iter().map(|&g| matrix.get(g, cand)).sum::<f64>()
                        / group.len() as f64;
                    (pos, mean)
                })
                .reduce(|best, cur| {
                    let better = if maximize {
                        cur.1 > best.1
                    } else {
                        cur.1 < best.1
                    };
                    if better { cur } else { best }
                })
                .expect("remaining is non-empty");
            group.push(remaining.remove(pos));
        }
        index_groups.push(group);
    }

    let mut groups = Vec::with_capacity(index_groups.len());
    for indices in index_groups {
        let members: Vec<Patch> = indices.iter().map(|&i| patches[i].clone()).collect();
        let mut built = form_groups(issue, &members, group_size)?;
        groups.append(&mut built);
    }
    Ok(groups)
}

/// Pop the seed of the next group: the member of the extreme remaining
/// pair (highest or lowest similarity), or the sole leftover.
fn seed_pairless(remaining: &mut Vec<usize>, matrix: &SimilarityMatrix, maximize: bool) -> usize {
    if remaining.len() == 1 {
        return remaining.pop().expect("checked non-empty");
    }
    let mut best = (0usize, 1usize, matrix.get(remaining[0], remaining[1]));
    for a in 0..remaining.len() {
        for b in a + 1..remaining.len() {
            let s = matrix.get(remaining[a], remaining[b]);
            let better = if maximize { s > best.2 } else { s < best.2 };
            if better {
                best = (a, b, s);
            }
        }
    }
    // Seed with the first member of the pair; the loop in the caller pulls
    // its partner right back in via the mean-similarity rule.
    remaining.remove(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Round1,
    Tournament,
    Round2,
}

/// One model call in a selection run, stored for replay auditing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: Stage,
    /// Original patch indices shown, in slot order.
    pub candidates: Vec<usize>,
    pub raw_verdict_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Original indices of patches judged correct in round 1, ascending.
    pub survivors: Vec<usize>,
    /// Original index of the selected patch.
    pub chosen: usize,
    #[serde(rename = "calls")]
    pub rounds: Vec<CallRecord>,
    pub fallback_used: bool,
}

/// Two-round selection: round 1 filters with group verification; round 2
/// shows the survivors, renumbered 1..k, in one prompt that must name a
/// single winner. One survivor skips round 2; zero survivors rerun round 2
/// over all original patches with `fallback_used` set. Survivor sets past
/// [`ROUND2_CONTEXT_CAP`] are first thinned by sub-round eliminations.
pub fn select_best(
    issue: &Issue,
    patches: &[Patch],
    client: &dyn LlmClient,
    group_size: usize,
    concurrency: usize,
) -> Result<SelectionResult, SelectionError> {
    if patches.is_empty() {
        return Err(SelectionError::EmptyInput);
    }

    let judgments = verify_patches(issue, patches, client, group_size, concurrency)?;
    let mut rounds = round_one_records(&judgments);
    let survivors: Vec<usize> = judgments
        .iter()
        .filter(|j| j.predicted == Label::Correct)
        .map(|j| j.patch_index)
        .collect();

    let fallback_used = survivors.is_empty();
    let mut candidates: Vec<usize> = if fallback_used {
        (0..patches.len()).collect()
    } else {
        survivors.clone()
    };

    while candidates.len() > ROUND2_CONTEXT_CAP {
        let mut winners = Vec::new();
        for chunk in candidates.chunks(group_size) {
            if chunk.len() == 1 {
                winners.push(chunk[0]);
                continue;
            }
            let (winner, record) =
                single_choice(issue, patches, chunk, client, Stage::Tournament)?;
            winners.push(winner);
            rounds.push(record);
        }
        candidates = winners;
    }

    let chosen = if candidates.len() == 1 {
        candidates[0]
    } else {
        let (winner, record) = single_choice(issue, patches, &candidates, client, Stage::Round2)?;
        rounds.push(record);
        winner
    };

    Ok(SelectionResult {
        survivors,
        chosen,
        rounds,
        fallback_used,
    })
}

fn round_one_records(judgments: &[crate::verifier::Judgment]) -> Vec<CallRecord> {
    let mut by_group: BTreeMap<usize, (Vec<usize>, String)> = BTreeMap::new();
    for j in judgments {
        let entry = by_group
            .entry(j.group_id)
            .or_insert_with(|| (Vec::new(), j.raw_verdict_digest.clone()));
        entry.0.push(j.patch_index);
    }
    by_group
        .into_values()
        .map(|(candidates, raw_verdict_digest)| CallRecord {
            stage: Stage::Round1,
            candidates,
            raw_verdict_digest,
            note: None,
        })
        .collect()
}

/// One elimination prompt over `candidate_indices`, renumbered 1..k.
/// A verdict naming several ids takes the smallest; an unboxed or empty
/// verdict falls back to the lowest-index candidate, noted in the record.
fn single_choice(
    issue: &Issue,
    patches: &[Patch],
    candidate_indices: &[usize],
    client: &dyn LlmClient,
    stage: Stage,
) -> Result<(usize, CallRecord), SelectionError> {
    let members: Vec<Patch> = candidate_indices.iter().map(|&i| patches[i].clone()).collect();
    let group = PatchGroup {
        issue: issue.clone(),
        pad_mask: vec![false; members.len()],
        patches: members,
    };
    let (system, user) = render_verify_prompt(&group);
    let system = format!("{system}\n{SINGLE_CHOICE_AMENDMENT}");
    let stage_name = match stage {
        Stage::Round1 => "round1",
        Stage::Tournament => "tournament",
        Stage::Round2 => "round2",
    };
    let reply = client
        .complete(&[ChatMessage::system(system), ChatMessage::user(user)], &[])
        .map_err(|source| SelectionError::Model {
            stage: stage_name.to_string(),
            source,
        })?;
    let verdict = parse_verdict(&reply.content, group.size());

    let (slot, note) = match verdict.predicted_ids.iter().next() {
        Some(&first) if verdict.boxed => {
            let note = (verdict.predicted_ids.len() > 1)
                .then(|| "multiple ids named; smallest taken".to_string());
            (first, note)
        }
        _ => (
            1,
            Some("unparseable verdict; lowest-index candidate taken".to_string()),
        ),
    };
    let winner = candidate_indices[slot - 1];
    let record = CallRecord {
        stage,
        candidates: candidate_indices.to_vec(),
        raw_verdict_digest: sha256_hex(&verdict.raw_text),
        note,
    };
    Ok((winner, record))
}

/// Stability of verdicts across repeated verification runs of the same
/// patches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyProfile {
    pub samples: usize,
    /// Per patch: how many samples disagreed with that patch's majority.
    pub deviations: Vec<usize>,
    /// deviation count -> number of patches with it.
    pub histogram: BTreeMap<usize, usize>,
    /// Per patch: the verdict most samples gave; ties count as incorrect.
    pub majority: Vec<Label>,
}

/// Verify the same patches `samples` times and measure how often each
/// patch's verdict deviates from its own majority.
pub fn consistency_profile(
    issue: &Issue,
    patches: &[Patch],
    client: &dyn LlmClient,
    samples: usize,
    group_size: usize,
    concurrency: usize,
) -> Result<ConsistencyProfile, SelectionError> {
    assert!(samples >= 1, "at least one sample required");
    if patches.is_empty() {
        return Err(SelectionError::EmptyInput);
    }

    let runs: Vec<Result<Vec<crate::verifier::Judgment>, VerifierError>> =
        parallel_map((0..samples).collect(), concurrency, |_| {
            verify_patches(issue, patches, client, group_size, 1)
        });

    let mut correct_counts = vec![0usize; patches.len()];
    for run in runs {
        for judgment in run? {
            if judgment.predicted == Label::Correct {
                correct_counts[judgment.patch_index] += 1;
            }
        }
    }

    let majority: Vec<Label> = correct_counts
        .iter()
        .map(|&c| {
            if c * 2 > samples {
                Label::Correct
            } else {
                Label::Incorrect
            }
        })
        .collect();
    let deviations: Vec<usize> = correct_counts
        .iter()
        .zip(&majority)
        .map(|(&c, m)| match m {
            Label::Correct => samples - c,
            Label::Incorrect => c,
        })
        .collect();
    let mut histogram = BTreeMap::new();
    for &d in &deviations {
        *histogram.entry(d).or_insert(0) += 1;
    }
    Ok(ConsistencyProfile {
        samples,
        deviations,
        histogram,
        majority,
    })
}
