//! Verification-quality measurement over judgment sets: confusion counts,
//! accuracy, precision/recall/F1, group exact-match, false-positive and
//! false-negative rates, plus stratified breakdowns.
//!
//! The positive class is "patch is correct" throughout. F1 is micro over
//! patches, not macro over groups. Every rate with a zero denominator is
//! reported as 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Issue, Label, Patch};
use crate::selection::diff_similarity;
use crate::verifier::Judgment;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no judgments to score")]
    EmptyInput,
    #[error("judgment for patch {patch_index} of issue {issue_id} has no label")]
    MissingLabel {
        issue_id: String,
        patch_index: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.r#fn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction of groups whose every judged slot matches its label.
    pub exact_match: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub group_count: usize,
    pub patch_count: usize,
    pub confusion: ConfusionCounts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Score a judgment set. Groups are identified by (issue, group id), which
/// every judgment already carries; padding never reaches here because the
/// verifier only emits judgments for real slots.
pub fn compute_metrics(judgments: &[Judgment]) -> Result<MetricsReport, MetricsError> {
    if judgments.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut confusion = ConfusionCounts::default();
    let mut group_clean: BTreeMap<(String, usize), bool> = BTreeMap::new();
    for j in judgments {
        let label = j.label.ok_or_else(|| MetricsError::MissingLabel {
            issue_id: j.issue_id.clone(),
            patch_index: j.patch_index,
        })?;
        match (j.predicted, label) {
            (Label::Correct, Label::Correct) => confusion.tp += 1,
            (Label::Correct, Label::Incorrect) => confusion.fp += 1,
            (Label::Incorrect, Label::Correct) => confusion.r#fn += 1,
            (Label::Incorrect, Label::Incorrect) => confusion.tn += 1,
        }
        let clean = group_clean
            .entry((j.issue_id.clone(), j.group_id))
            .or_insert(true);
        *clean &= j.predicted == label;
    }

    let precision = ratio(confusion.tp, confusion.tp + confusion.fp);
    let recall = ratio(confusion.tp, confusion.tp + confusion.r#fn);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let exact_groups = group_clean.values().filter(|c| **c).count();
    Ok(MetricsReport {
        accuracy: ratio(confusion.tp + confusion.tn, confusion.total()),
        precision,
        recall,
        f1,
        exact_match: ratio(exact_groups, group_clean.len()),
        fpr: ratio(confusion.fp, confusion.fp + confusion.tn),
        fnr: ratio(confusion.r#fn, confusion.r#fn + confusion.tp),
        group_count: group_clean.len(),
        patch_count: confusion.total(),
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratifier {
    EditedLinesBin,
    SimilarityBin,
    Repo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub bucket: String,
    pub accuracy: f64,
    pub n: usize,
}

const LINE_BINS: [&str; 5] = ["0", "1-5", "6-20", "21-100", ">100"];

fn edited_lines_bin(lines: usize) -> &'static str {
    match lines {
        0 => LINE_BINS[0],
        1..=5 => LINE_BINS[1],
        6..=20 => LINE_BINS[2],
        21..=100 => LINE_BINS[3],
        _ => LINE_BINS[4],
    }
}

fn similarity_bin(mean: f64) -> String {
    let decile = ((mean * 10.0).floor() as i64).clamp(0, 9) as usize;
    format!(
        "0.{decile}-{}",
        if decile == 9 {
            "1.0".to_string()
        } else {
            format!("0.{}", decile + 1)
        }
    )
}

/// Mean pairwise similarity of one group's real patches. Singleton groups
/// count as 1.0 (a lone patch is trivially self-consistent); pairs with an
/// empty diff count as 0.
fn mean_group_similarity(members: &[&Patch]) -> f64 {
    if members.len() < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            total += diff_similarity(members[i], members[j]).unwrap_or(0.0);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Per-bucket accuracy table. Buckets with no members are omitted; the
/// remaining rows, weighted by `n`, recompose to the overall accuracy.
///
/// `patches` must list each issue's patches in the order they were judged,
/// so `patch_index` resolves; `issues` supplies the repo for each issue.
pub fn stratify(
    judgments: &[Judgment],
    issues: &[Issue],
    patches: &[Patch],
    by: Stratifier,
) -> Result<Vec<StratumRow>, MetricsError> {
    if judgments.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut per_issue: BTreeMap<&str, Vec<&Patch>> = BTreeMap::new();
    for p in patches {
        per_issue.entry(&p.issue_id).or_default().push(p);
    }
    let repos: BTreeMap<&str, &str> = issues
        .iter()
        .map(|i| (i.issue_id.as_str(), i.repo.as_str()))
        .collect();

    // Group mean similarities, resolved once per (issue, group).
    let mut group_similarity: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    if by == Stratifier::SimilarityBin {
        let mut group_members: BTreeMap<(&str, usize), Vec<&Patch>> = BTreeMap::new();
        for j in judgments {
            let patch = per_issue
                .get(j.issue_id.as_str())
                .and_then(|v| v.get(j.patch_index))
                .copied();
            if let Some(p) = patch {
                group_members
                    .entry((j.issue_id.as_str(), j.group_id))
                    .or_default()
                    .push(p);
            }
        }
        for (key, members) in group_members {
            group_similarity.insert(key, mean_group_similarity(&members));
        }
    }

    let mut hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for j in judgments {
        let label = j.label.ok_or_else(|| MetricsError::MissingLabel {
            issue_id: j.issue_id.clone(),
            patch_index: j.patch_index,
        })?;
        let bucket = match by {
            Stratifier::EditedLinesBin => {
                let lines = per_issue
                    .get(j.issue_id.as_str())
                    .and_then(|v| v.get(j.patch_index))
                    .map(|p| p.diff.edited_lines())
                    .unwrap_or(0);
                edited_lines_bin(lines).to_string()
            }
            Stratifier::SimilarityBin => {
                let mean = group_similarity
                    .get(&(j.issue_id.as_str(), j.group_id))
                    .copied()
                    .unwrap_or(1.0);
                similarity_bin(mean)
            }
            Stratifier::Repo => repos
                .get(j.issue_id.as_str())
                .copied()
                .unwrap_or("(unknown)")
                .to_string(),
        };
        let entry = hits.entry(bucket).or_insert((0, 0));
        entry.1 += 1;
        if j.predicted == label {
            entry.0 += 1;
        }
    }

    let ordered: Vec<(String, (usize, usize))> = match by {
        Stratifier::EditedLinesBin => LINE_BINS
            .iter()
            .filter_map(|b| hits.get(*b).map(|v| (b.to_string(), *v)))
            .collect(),
        _ => hits.into_iter().collect(),
    };
    Ok(ordered
        .into_iter()
        .map(|(bucket, (correct, n))| StratumRow {
            bucket,
            accuracy: correct as f64 / n as f64,
            n,
        })
        .collect())
}

/// Aligned two-column text rendering of the headline report.
pub fn render_report_text(report: &MetricsReport) -> String {
    let rows = [
        ("accuracy", format!("{:.4}", report.accuracy)),
        ("precision", format!("{:.4}", report.precision)),
        ("recall", format!("{:.4}", report.recall)),
        ("f1", format!("{:.4}", report.f1)),
        ("exact_match", format!("{:.4}", report.exact_match)),
        ("fpr", format!("{:.4}", report.fpr)),
        ("fnr", format!("{:.4}", report.fnr)),
        ("groups", report.group_count.to_string()),
        ("patches", report.patch_count.to_string()),
        (
            "tp/fp/tn/fn",
            format!(
                "{}/{}/{}/{}",
                report.confusion.tp, report.confusion.fp, report.confusion.tn, report.confusion.r#fn
            ),
        ),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (key, value) in rows {
        out.push_str(&format!("{key:<width$}  {value}\n"));
    }
    out
}

/// Aligned text rendering of a stratified table.
pub fn render_strata_text(rows: &[StratumRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.bucket.len())
        .max()
        .unwrap_or(0)
        .max("bucket".len());
    let mut out = format!("{:<width$}  accuracy      n\n", "bucket");
    for row in rows {
        out.push_str(&format!(
            "{:<width$}  {:.4}    {:>5}\n",
            row.bucket, row.accuracy, row.n
        ));
    }
    out
}

/// CSV rendering of a stratified table (`bucket,accuracy,n`).
pub fn strata_to_csv(rows: &[StratumRow]) -> String {
    let mut out = String::from("bucket,accuracy,n\n");
    for row in rows {
        let bucket = if row.bucket.contains(',') || row.bucket.contains('"') {
            format!("\"{}\"", row.bucket.replace('"', "\"\""))
        } else {
            row.bucket.clone()
        };
        out.push_str(&format!("{bucket},{},{}\n", row.accuracy, row.n));
    }
    out
}
