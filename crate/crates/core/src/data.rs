//! Corpus handling: labeled instance loading, training-group combination
//! balancing, and the pull-request quality filters.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use itertools::Itertools;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::UnifiedDiff;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed record at line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },
    #[error("patch {index} of issue {issue_id} has no label")]
    UnlabeledPatch { issue_id: String, index: usize },
    #[error("input contains no records")]
    EmptyInput,
    #[error("io failure on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Incorrect,
}

impl Label {
    pub fn is_correct(self) -> bool {
        self == Label::Correct
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Correct => "correct",
            Label::Incorrect => "incorrect",
        })
    }
}

/// A repository-level problem statement pinned to a snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub issue_id: String,
    pub repo: String,
    pub base_commit: String,
    pub problem_statement: String,
}

/// One candidate resolution for an issue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub issue_id: String,
    pub diff: UnifiedDiff,
    pub label: Option<Label>,
    pub source_tag: String,
}

/// A loaded instance file: issues in first-appearance order, patches in
/// file order, non-fatal findings in `warnings`.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub issues: Vec<Issue>,
    pub patches: Vec<Patch>,
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn issue(&self, issue_id: &str) -> Option<&Issue> {
        self.issues.iter().find(|i| i.issue_id == issue_id)
    }

    /// Patches of one issue, preserving file order.
    pub fn patches_for(&self, issue_id: &str) -> Vec<&Patch> {
        self.patches
            .iter()
            .filter(|p| p.issue_id == issue_id)
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    instance_id: String,
    repo: String,
    base_commit: String,
    problem_statement: String,
    patch: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resolved: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_tag: Option<String>,
}

/// Load a JSON Lines instance file: one record per patch, issues
/// deduplicated by id. A record whose issue id was already seen must agree
/// on the issue fields; disagreement and duplicate patch texts are
/// reported as warnings, not errors.
pub fn load_instances(path: &Path) -> Result<Corpus, DataError> {
    let raw = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_instances(&raw)
}

pub fn parse_instances(raw: &str) -> Result<Corpus, DataError> {
    let mut corpus = Corpus::default();
    let mut seen_issue: BTreeMap<String, usize> = BTreeMap::new();

    for (lineno, line) in raw.lines().enumerate() {
        let line_num = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord =
            serde_json::from_str(line).map_err(|e| DataError::MalformedRecord {
                line: line_num,
                detail: e.to_string(),
            })?;
        if rec.problem_statement.is_empty() {
            return Err(DataError::MalformedRecord {
                line: line_num,
                detail: "problem_statement is empty".into(),
            });
        }
        if rec.instance_id.is_empty() {
            return Err(DataError::MalformedRecord {
                line: line_num,
                detail: "instance_id is empty".into(),
            });
        }
        let diff = UnifiedDiff::parse(rec.patch).map_err(|e| DataError::MalformedRecord {
            line: line_num,
            detail: format!("patch does not parse: {e}"),
        })?;

        match seen_issue.get(&rec.instance_id) {
            None => {
                seen_issue.insert(rec.instance_id.clone(), corpus.issues.len());
                corpus.issues.push(Issue {
                    issue_id: rec.instance_id.clone(),
                    repo: rec.repo,
                    base_commit: rec.base_commit,
                    problem_statement: rec.problem_statement,
                });
            }
            Some(&idx) => {
                let known = &corpus.issues[idx];
                if known.repo != rec.repo
                    || known.base_commit != rec.base_commit
                    || known.problem_statement != rec.problem_statement
                {
                    corpus.warnings.push(format!(
                        "line {line_num}: issue fields of {} disagree with line of first appearance; keeping the first",
                        rec.instance_id
                    ));
                }
            }
        }

        if corpus
            .patches
            .iter()
            .any(|p| p.issue_id == rec.instance_id && p.diff.text() == diff.text())
        {
            corpus.warnings.push(format!(
                "line {line_num}: duplicate patch text for issue {}",
                rec.instance_id
            ));
        }
        corpus.patches.push(Patch {
            issue_id: rec.instance_id,
            diff,
            label: rec.resolved.map(|r| if r { Label::Correct } else { Label::Incorrect }),
            source_tag: rec.source_tag.unwrap_or_default(),
        });
    }
    Ok(corpus)
}

/// Write a corpus back to the JSON Lines instance format, one record per
/// patch. Loading the output reproduces the corpus.
pub fn save_instances(corpus: &Corpus, path: &Path) -> Result<(), DataError> {
    let mut out = std::fs::File::create(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    for patch in &corpus.patches {
        let issue = corpus
            .issue(&patch.issue_id)
            .expect("every patch references a loaded issue");
        let rec = InstanceRecord {
            instance_id: issue.issue_id.clone(),
            repo: issue.repo.clone(),
            base_commit: issue.base_commit.clone(),
            problem_statement: issue.problem_statement.clone(),
            patch: patch.diff.text().to_string(),
            resolved: patch.label.map(|l| l.is_correct()),
            source_tag: if patch.source_tag.is_empty() {
                None
            } else {
                Some(patch.source_tag.clone())
            },
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

/// True for patches whose every change is cosmetic: the diff touches only
/// test files, or every added/removed line is blank or a `#` comment.
/// Empty diffs count as meaningless too.
pub fn is_meaningless_patch(diff: &UnifiedDiff) -> bool {
    if diff.is_empty() {
        return true;
    }
    let only_tests = diff
        .changed_paths()
        .iter()
        .all(|p| path_is_test_file(p));
    if only_tests {
        return true;
    }
    let mut saw_change = false;
    for fd in diff.files() {
        for hunk in &fd.hunks {
            for line in &hunk.lines {
                if matches!(line.kind, crate::diff::LineKind::Context) {
                    continue;
                }
                saw_change = true;
                let t = line.text.trim_start();
                if !(t.is_empty() || t.starts_with('#')) {
                    return false;
                }
            }
        }
    }
    saw_change
}

/// Drop patches that carry no usable signal for verification: empty diffs
/// and flagged-meaningless ones. Returns survivors and the drop count.
pub fn clean_for_evaluation(patches: Vec<Patch>) -> (Vec<Patch>, usize) {
    let before = patches.len();
    let kept: Vec<Patch> = patches
        .into_iter()
        .filter(|p| !is_meaningless_patch(&p.diff))
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// A fully labeled training group: exactly the group size, no padding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingGroup {
    pub issue_id: String,
    pub patches: Vec<Patch>,
}

impl TrainingGroup {
    pub fn correct_count(&self) -> usize {
        self.patches
            .iter()
            .filter(|p| p.label == Some(Label::Correct))
            .count()
    }
}

#[derive(Debug, Clone, Default)]
pub struct BalanceOutcome {
    pub groups: Vec<TrainingGroup>,
    /// Retained group count per correct-count class, index = class.
    pub class_histogram: Vec<usize>,
    /// Raw (pre-balancing) group count per class.
    pub raw_histogram: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Enumerate every `group_size`-combination of each issue's patches and
/// downsample the correct-count classes to a near-uniform histogram.
///
/// Combinations are enumerated in lexicographic slot order per issue, so
/// the raw stream is deterministic; downsampling keeps a seeded random
/// subset of each over-represented class, preserving stream order. After
/// balancing, every non-empty class count lies within `tolerance` of the
/// smallest: max <= floor((1 + tolerance) * min).
pub fn build_balanced_groups(
    corpus: &Corpus,
    group_size: usize,
    tolerance: f64,
    seed: u64,
) -> Result<BalanceOutcome, DataError> {
    assert!(group_size >= 1, "group size must be positive");
    let mut outcome = BalanceOutcome {
        class_histogram: vec![0; group_size + 1],
        raw_histogram: vec![0; group_size + 1],
        ..Default::default()
    };

    let mut raw: Vec<TrainingGroup> = Vec::new();
    for issue in &corpus.issues {
        let patches = corpus.patches_for(&issue.issue_id);
        if patches.len() < group_size {
            outcome.warnings.push(format!(
                "issue {} has {} patches, need {group_size}; skipped",
                issue.issue_id,
                patches.len()
            ));
            continue;
        }
        for (index, patch) in patches.iter().enumerate() {
            if patch.label.is_none() {
                return Err(DataError::UnlabeledPatch {
                    issue_id: issue.issue_id.clone(),
                    index,
                });
            }
        }
        for combo in patches.iter().combinations(group_size) {
            let group = TrainingGroup {
                issue_id: issue.issue_id.clone(),
                patches: combo.into_iter().map(|p| (*p).clone()).collect(),
            };
            outcome.raw_histogram[group.correct_count()] += 1;
            raw.push(group);
        }
    }

    if raw.is_empty() {
        outcome.class_histogram = outcome.raw_histogram.clone();
        return Ok(outcome);
    }

    let min_nonempty = outcome
        .raw_histogram
        .iter()
        .copied()
        .filter(|&c| c > 0)
        .min()
        .expect("raw is non-empty");
    let cap = ((min_nonempty as f64) * (1.0 + tolerance)).floor() as usize;

    // Choose, per over-represented class, which stream positions survive.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; raw.len()];
    for class in 0..=group_size {
        let members: Vec<usize> = raw
            .iter()
            .enumerate()
            .filter(|(_, g)| g.correct_count() == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() <= cap {
            continue;
        }
        let chosen = rand::seq::index::sample(&mut rng, members.len(), cap);
        let mut chosen: Vec<usize> = chosen.into_iter().collect();
        chosen.sort_unstable();
        let keep_set: std::collections::BTreeSet<usize> =
            chosen.into_iter().map(|k| members[k]).collect();
        for &i in &members {
            keep[i] = keep_set.contains(&i);
        }
    }

    for (i, group) in raw.into_iter().enumerate() {
        if keep[i] {
            outcome.class_histogram[group.correct_count()] += 1;
            outcome.groups.push(group);
        }
    }
    Ok(outcome)
}

/// A pull-request record as fed to the quality filters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrRecord {
    pub repo: String,
    pub description: String,
    pub diff: UnifiedDiff,
    pub linked_images: bool,
    /// Character count of the description, computed, never trusted from
    /// input.
    pub char_count: usize,
}

impl PrRecord {
    pub fn new(
        repo: impl Into<String>,
        description: impl Into<String>,
        diff: UnifiedDiff,
        linked_images: bool,
    ) -> Self {
        let description = description.into();
        let char_count = description.chars().count();
        PrRecord {
            repo: repo.into(),
            description,
            diff,
            linked_images,
            char_count,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawPrRecord {
    repo: String,
    description: String,
    diff: String,
    #[serde(default)]
    linked_images: bool,
}

/// Parse one JSON PR record, failing on an unparseable diff.
pub fn parse_pr_record(json_line: &str, line: usize) -> Result<PrRecord, DataError> {
    let raw: RawPrRecord =
        serde_json::from_str(json_line).map_err(|e| DataError::MalformedRecord {
            line,
            detail: e.to_string(),
        })?;
    let diff = UnifiedDiff::parse(raw.diff).map_err(|e| DataError::MalformedRecord {
        line,
        detail: format!("diff does not parse: {e}"),
    })?;
    Ok(PrRecord::new(
        raw.repo,
        raw.description,
        diff,
        raw.linked_images,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FilterReason {
    Length,
    NonAscii,
    NonPythonFiles,
    FileCount,
    HasImages,
    NoTests,
}

impl std::fmt::Display for FilterReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FilterReason::Length => "LENGTH",
            FilterReason::NonAscii => "NON_ASCII",
            FilterReason::NonPythonFiles => "NON_PYTHON_FILES",
            FilterReason::FileCount => "FILE_COUNT",
            FilterReason::HasImages => "HAS_IMAGES",
            FilterReason::NoTests => "NO_TESTS",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub keep: bool,
    pub reasons: Vec<FilterReason>,
}

fn path_is_test_file(path: &str) -> bool {
    let segments: Vec<&str> = path.split('/').collect();
    if segments
        .iter()
        .take(segments.len().saturating_sub(1))
        .any(|s| *s == "test" || *s == "tests")
    {
        return true;
    }
    let Some(filename) = segments.last() else {
        return false;
    };
    let Some(stem) = filename.strip_suffix(".py") else {
        return false;
    };
    stem.starts_with("test_") || stem.ends_with("_test")
}

/// True iff the diff touches anything the test heuristics recognize: a
/// whole path segment `test`/`tests`, or a Python file named `test_*` or
/// `*_test`.
pub fn has_test_changes(diff: &UnifiedDiff) -> bool {
    diff.changed_paths().iter().any(|p| path_is_test_file(p))
}

/// Apply every quality rule and report all violations at once:
/// description length within 100..=4000 characters, ASCII-only
/// description, Python-only changed files, 1..=5 changed files, no linked
/// images, and the presence of a test change.
pub fn filter_pr_record(rec: &PrRecord) -> FilterDecision {
    let mut reasons = Vec::new();

    if !(100..=4000).contains(&rec.char_count) {
        reasons.push(FilterReason::Length);
    }
    if rec.description.bytes().any(|b| b >= 0x80) {
        reasons.push(FilterReason::NonAscii);
    }
    if rec
        .diff
        .changed_paths()
        .iter()
        .any(|p| !p.ends_with(".py"))
    {
        reasons.push(FilterReason::NonPythonFiles);
    }
    if !(1..=5).contains(&rec.diff.file_count()) {
        reasons.push(FilterReason::FileCount);
    }
    if rec.linked_images {
        reasons.push(FilterReason::HasImages);
    }
    if !has_test_changes(&rec.diff) {
        reasons.push(FilterReason::NoTests);
    }

    FilterDecision {
        keep: reasons.is_empty(),
        reasons,
    }
}
