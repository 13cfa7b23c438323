//! Acceptance gate for the whole pipeline. Each criterion runs offline,
//! checks its behavior against an independently coded oracle where one is
//! meaningful, and prints a single `[cNN] ... PASS/FAIL` line (visible
//! with `cargo test --test acceptance -- --nocapture`). Every criterion
//! also enforces a wall-clock budget.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use patchjury::agent::{run_rollout, RolloutLimits, Termination};
use patchjury::data::{
    build_balanced_groups, filter_pr_record, parse_pr_record, Corpus, FilterReason, Issue, Label,
    Patch,
};
use patchjury::diff::{diff_trees, UnifiedDiff};
use patchjury::llm::{ChatMessage, FnClient, LlmError, Role, ScriptedClient, ToolCall};
use patchjury::metrics::{compute_metrics, stratify, Stratifier};
use patchjury::selection::select_best;
use patchjury::verifier::{form_groups, parse_verdict, score_reward, Judgment};
use patchjury::workspace::{apply_patch, syntax_check, EditOutcome, SnapshotSource, Workspace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion<F>(id: &str, label: &str, budget: Duration, body: F)
where
    F: FnOnce() -> Result<(), String>,
{
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed();
    match &outcome {
        Ok(()) if elapsed <= budget => println!("[{id}] {label}: PASS ({elapsed:.2?})"),
        Ok(()) => println!("[{id}] {label}: FAIL (took {elapsed:.2?}, budget {budget:.2?})"),
        Err(reason) => println!("[{id}] {label}: FAIL ({reason})"),
    }
    if let Err(reason) = outcome {
        panic!("{id} {label}: {reason}");
    }
    assert!(
        elapsed <= budget,
        "{id} exceeded its {budget:.2?} budget: {elapsed:.2?}"
    );
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn sample_issue(id: &str) -> Issue {
    Issue {
        issue_id: id.to_string(),
        repo: "octo/acceptproj".to_string(),
        base_commit: "c0ffee".to_string(),
        problem_statement: format!("Synthetic issue {id} used by the acceptance gate."),
    }
}

/// A parseable single-file diff whose body is derived from `seed` so
/// distinct seeds give distinct patch texts.
fn synthetic_diff(seed: usize, correct: bool) -> UnifiedDiff {
    let marker = if correct { "MARKER_OK" } else { "plain" };
    let text = format!(
        "diff --git a/m.py b/m.py\n--- a/m.py\n+++ b/m.py\n@@ -1 +1 @@\n-x = 0\n+x = {seed}  # {marker}\n"
    );
    UnifiedDiff::parse(text).expect("synthetic diff parses")
}

fn labeled_patch(issue_id: &str, seed: usize, correct: bool) -> Patch {
    Patch {
        issue_id: issue_id.to_string(),
        diff: synthetic_diff(seed, correct),
        label: Some(if correct { Label::Correct } else { Label::Incorrect }),
        source_tag: format!("cand-{seed}"),
    }
}

fn boxed_list(ids: &[usize]) -> String {
    let inner: Vec<String> = ids.iter().map(ToString::to_string).collect();
    format!("\\boxed{{{}}}", inner.join(", "))
}

// --- c01 -----------------------------------------------------------------

#[test]
fn c01_reward_oracle_equivalence() {
    criterion(
        "c01",
        "reward matches brute-force match fraction on all 256 cases",
        Duration::from_secs(1),
        || {
            let issue = sample_issue("c01");
            for label_bits in 0u32..16 {
                let patches: Vec<Patch> = (0..4)
                    .map(|slot| labeled_patch("c01", slot, label_bits >> slot & 1 == 1))
                    .collect();
                let group = form_groups(&issue, &patches, 4)
                    .map_err(|e| e.to_string())?
                    .remove(0);

                for pred_bits in 0u32..16 {
                    let ids: Vec<usize> = (0..4)
                        .filter(|slot| pred_bits >> slot & 1 == 1)
                        .map(|slot| slot + 1)
                        .collect();
                    let raw = format!("after deliberation, {}", boxed_list(&ids));
                    let verdict = parse_verdict(&raw, 4);
                    check(verdict.boxed, || format!("{raw:?} should parse as boxed"))?;
                    let got = score_reward(&verdict, &group)
                        .map_err(|e| e.to_string())?
                        .value;

                    let matches = (0..4)
                        .filter(|slot| (label_bits >> slot & 1) == (pred_bits >> slot & 1))
                        .count();
                    let want = matches as f64 / 4.0;
                    check((got - want).abs() < 1e-15, || {
                        format!("labels {label_bits:04b} preds {pred_bits:04b}: {got} != {want}")
                    })?;
                }

                let unboxed = parse_verdict("no decision reached", 4);
                let got = score_reward(&unboxed, &group)
                    .map_err(|e| e.to_string())?
                    .value;
                check(got == 0.0, || {
                    format!("unboxed verdict must score 0, got {got}")
                })?;
            }
            Ok(())
        },
    );
}

// --- c02 -----------------------------------------------------------------

#[test]
fn c02_partition_law() {
    criterion(
        "c02",
        "grouping emits ceil(n/k) groups, pads only the tail",
        Duration::from_secs(1),
        || {
            let issue = sample_issue("c02");
            for n_v in 1usize..=64 {
                let patches: Vec<Patch> = (0..n_v)
                    .map(|i| labeled_patch("c02", i, i % 3 == 0))
                    .collect();
                for n_t in [1usize, 2, 4, 8] {
                    let groups =
                        form_groups(&issue, &patches, n_t).map_err(|e| e.to_string())?;
                    let want_groups = n_v.div_ceil(n_t);
                    check(groups.len() == want_groups, || {
                        format!("n_v={n_v} n_t={n_t}: {} groups != {want_groups}", groups.len())
                    })?;

                    for (gi, group) in groups.iter().enumerate() {
                        check(group.size() == n_t, || {
                            format!("n_v={n_v} n_t={n_t} group {gi} has size {}", group.size())
                        })?;
                        let pad_count = group.pad_mask.iter().filter(|p| **p).count();
                        if gi + 1 < groups.len() {
                            check(pad_count == 0, || {
                                format!("n_v={n_v} n_t={n_t}: non-final group {gi} padded")
                            })?;
                        }
                        let real = group.size() - pad_count;
                        check(group.pad_mask[..real].iter().all(|p| !p), || {
                            format!("n_v={n_v} n_t={n_t}: padding not at the tail")
                        })?;
                        for (patch, padded) in group.patches.iter().zip(&group.pad_mask) {
                            if *padded {
                                check(patch.diff.is_empty() && patch.label.is_none(), || {
                                    format!("n_v={n_v} n_t={n_t}: pad slot carries content")
                                })?;
                            }
                        }
                    }

                    let rejoined: Vec<Patch> = groups
                        .iter()
                        .flat_map(|g| g.real_patches().cloned())
                        .collect();
                    check(rejoined == patches, || {
                        format!("n_v={n_v} n_t={n_t}: real slots do not reproduce the input")
                    })?;
                }
            }
            Ok(())
        },
    );
}

// --- c03 -----------------------------------------------------------------

#[test]
fn c03_verdict_parse_table() {
    criterion(
        "c03",
        "verdict parsing matches the 20-case table",
        Duration::from_secs(1),
        || {
            struct Case {
                raw: &'static str,
                group_size: usize,
                boxed: bool,
                ids: &'static [usize],
            }
            let cases = [
                Case { raw: "\\boxed{1}", group_size: 4, boxed: true, ids: &[1] },
                Case { raw: "\\boxed{2, 4}", group_size: 4, boxed: true, ids: &[2, 4] },
                Case { raw: "\\boxed{1, 2, 3, 4}", group_size: 4, boxed: true, ids: &[1, 2, 3, 4] },
                // The empty box is the explicit all-wrong answer, distinct
                // from not answering at all.
                Case { raw: "all candidates fail: \\boxed{}", group_size: 4, boxed: true, ids: &[] },
                Case { raw: "no box at all", group_size: 4, boxed: false, ids: &[] },
                Case { raw: "", group_size: 4, boxed: false, ids: &[] },
                Case { raw: "\\boxed{5}", group_size: 4, boxed: true, ids: &[] },
                Case { raw: "\\boxed{0}", group_size: 4, boxed: true, ids: &[] },
                Case { raw: "\\boxed{2, 2, 2}", group_size: 4, boxed: true, ids: &[2] },
                Case { raw: "\\boxed{1, 5, 3}", group_size: 4, boxed: true, ids: &[1, 3] },
                Case { raw: "\\boxed{1} wait, \\boxed{3}", group_size: 4, boxed: true, ids: &[3] },
                Case { raw: "\\boxed{a, b}", group_size: 4, boxed: true, ids: &[] },
                Case { raw: "\\boxed{ 2 , 3 }", group_size: 4, boxed: true, ids: &[2, 3] },
                Case { raw: "\\boxed{1", group_size: 4, boxed: false, ids: &[] },
                Case { raw: "\\boxed{2} and then \\boxed{1", group_size: 4, boxed: true, ids: &[2] },
                Case { raw: "the answer is \\boxed{1,2} as shown", group_size: 4, boxed: true, ids: &[1, 2] },
                Case { raw: "\\boxed{3}", group_size: 2, boxed: true, ids: &[] },
                Case { raw: "\\boxed{1, 2}", group_size: 2, boxed: true, ids: &[1, 2] },
                Case { raw: "\\boxed{-1, 2}", group_size: 4, boxed: true, ids: &[2] },
                Case {
                    raw: "Step 1: patch 4 guards None.\nStep 2: others regress.\nFinal: \\boxed{4}",
                    group_size: 4,
                    boxed: true,
                    ids: &[4],
                },
            ];
            check(cases.len() == 20, || "table must hold 20 cases".to_string())?;

            for (i, case) in cases.iter().enumerate() {
                let verdict = parse_verdict(case.raw, case.group_size);
                let want: BTreeSet<usize> = case.ids.iter().copied().collect();
                check(verdict.boxed == case.boxed, || {
                    format!("case {i} {:?}: boxed {} != {}", case.raw, verdict.boxed, case.boxed)
                })?;
                check(verdict.predicted_ids == want, || {
                    format!(
                        "case {i} {:?}: ids {:?} != {:?}",
                        case.raw, verdict.predicted_ids, want
                    )
                })?;
                check(verdict.raw_text == case.raw, || {
                    format!("case {i}: raw text not preserved")
                })?;
            }
            Ok(())
        },
    );
}

// --- c04 -----------------------------------------------------------------

/// Non-overlapping occurrence count by direct byte comparison, independent
/// of the string-search machinery inside the gate.
fn oracle_occurrences(hay: &str, needle: &str) -> usize {
    if needle.is_empty() || needle.len() > hay.len() {
        return 0;
    }
    let (h, n) = (hay.as_bytes(), needle.as_bytes());
    let mut count = 0;
    let mut i = 0;
    while i + n.len() <= h.len() {
        if &h[i..i + n.len()] == n {
            count += 1;
            i += n.len();
        } else {
            i += 1;
        }
    }
    count
}

#[test]
fn c04_edit_gate_property() {
    criterion(
        "c04",
        "1000 random edits succeed iff unique and parseable, failures change nothing",
        Duration::from_secs(30),
        || {
            const NAMES: [&str; 8] = ["alpha", "beta", "gamma", "count", "total", "x", "y", "zz"];
            const REPLACEMENTS: [&str; 8] =
                ["0", "value + 1", ")", "", "# note", "(", "pass", "total = total"];
            let mut rng = ChaCha8Rng::seed_from_u64(4);

            for case in 0..1000 {
                let line_count = rng.gen_range(1..=24);
                let mut lines = Vec::with_capacity(line_count);
                for _ in 0..line_count {
                    let name = NAMES[rng.gen_range(0..NAMES.len())];
                    lines.push(match rng.gen_range(0..4) {
                        0 => format!("{name} = {}", rng.gen_range(0..100)),
                        1 => format!("# {name}"),
                        2 => "pass".to_string(),
                        _ => String::new(),
                    });
                }
                let mut content = lines.join("\n");
                if rng.gen_bool(0.5) {
                    content.push('\n');
                }

                let old = match rng.gen_range(0..6) {
                    0..=2 if !content.is_empty() => {
                        let start = rng.gen_range(0..content.len());
                        let end = (start + 1 + rng.gen_range(0..12)).min(content.len());
                        content[start..end].to_string()
                    }
                    3 | 4 => NAMES[rng.gen_range(0..NAMES.len())].to_string(),
                    _ => String::new(),
                };
                let new = REPLACEMENTS[rng.gen_range(0..REPLACEMENTS.len())].to_string();

                let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
                std::fs::write(dir.path().join("mod.py"), &content).map_err(|e| e.to_string())?;
                let mut ws =
                    Workspace::create(&SnapshotSource::Tree(dir.path().to_path_buf()), "t")
                        .map_err(|e| e.to_string())?;
                let outcome = ws.apply_edit("mod.py", &old, &new).outcome.clone();
                let after = std::fs::read_to_string(ws.work_root().join("mod.py"))
                    .map_err(|e| e.to_string())?;

                let detail = || format!("case {case}: old {old:?} new {new:?} in {content:?}");
                match oracle_occurrences(&content, &old) {
                    0 => {
                        check(outcome == EditOutcome::NotFound, || {
                            format!("{}: expected NotFound, got {outcome:?}", detail())
                        })?;
                        check(after == content, || format!("{}: bytes changed", detail()))?;
                    }
                    1 => {
                        let at = content.find(&old).expect("oracle found one");
                        let spliced =
                            format!("{}{new}{}", &content[..at], &content[at + old.len()..]);
                        if syntax_check(&spliced).is_empty() {
                            check(outcome == EditOutcome::Applied, || {
                                format!("{}: expected Applied, got {outcome:?}", detail())
                            })?;
                            check(after == spliced, || {
                                format!("{}: applied bytes wrong", detail())
                            })?;
                        } else {
                            check(matches!(outcome, EditOutcome::SyntaxRejected { .. }), || {
                                format!("{}: expected SyntaxRejected, got {outcome:?}", detail())
                            })?;
                            check(after == content, || format!("{}: bytes changed", detail()))?;
                        }
                    }
                    n => {
                        check(
                            outcome == EditOutcome::AmbiguousMatch { occurrences: n },
                            || format!("{}: expected {n} ambiguous, got {outcome:?}", detail()),
                        )?;
                        check(after == content, || format!("{}: bytes changed", detail()))?;
                    }
                }
            }
            Ok(())
        },
    );
}

// --- c05 -----------------------------------------------------------------

/// Reference unified-diff oracle, written from the emission rules without
/// reusing the library's line, script, or hunk machinery: common prefix
/// kept, memoized longest-common-subsequence walk that prefers deletion on
/// ties, three context lines, hunks merged across gaps of at most seven
/// unchanged lines, git-style headers.
mod refdiff {
    use std::collections::BTreeSet;

    #[derive(Clone, PartialEq)]
    pub struct RLine {
        text: String,
        newline: bool,
    }

    pub fn split(s: &str) -> Vec<RLine> {
        if s.is_empty() {
            return Vec::new();
        }
        let ends_with_newline = s.ends_with('\n');
        let mut parts: Vec<&str> = s.split('\n').collect();
        if ends_with_newline {
            parts.pop();
        }
        let last = parts.len().saturating_sub(1);
        parts
            .iter()
            .enumerate()
            .map(|(i, text)| RLine {
                text: (*text).to_string(),
                newline: ends_with_newline || i < last,
            })
            .collect()
    }

    #[derive(Clone, Copy, PartialEq)]
    enum ROp {
        Keep,
        Del,
        Ins,
    }

    struct Lcs<'a> {
        a: &'a [RLine],
        b: &'a [RLine],
        memo: Vec<Option<u32>>,
    }

    impl<'a> Lcs<'a> {
        fn new(a: &'a [RLine], b: &'a [RLine]) -> Self {
            Lcs { a, b, memo: vec![None; (a.len() + 1) * (b.len() + 1)] }
        }

        fn len(&mut self, i: usize, j: usize) -> u32 {
            if i >= self.a.len() || j >= self.b.len() {
                return 0;
            }
            let at = i * (self.b.len() + 1) + j;
            if let Some(v) = self.memo[at] {
                return v;
            }
            let v = if self.a[i] == self.b[j] {
                self.len(i + 1, j + 1) + 1
            } else {
                self.len(i + 1, j).max(self.len(i, j + 1))
            };
            self.memo[at] = Some(v);
            v
        }
    }

    fn script(a: &[RLine], b: &[RLine]) -> Vec<ROp> {
        let mut ops = Vec::new();
        let mut p = 0;
        while p < a.len() && p < b.len() && a[p] == b[p] {
            ops.push(ROp::Keep);
            p += 1;
        }
        let (a, b) = (&a[p..], &b[p..]);
        let mut lcs = Lcs::new(a, b);
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            if i < a.len() && j < b.len() && a[i] == b[j] {
                ops.push(ROp::Keep);
                i += 1;
                j += 1;
            } else if i < a.len() && (j >= b.len() || lcs.len(i + 1, j) >= lcs.len(i, j + 1)) {
                ops.push(ROp::Del);
                i += 1;
            } else {
                ops.push(ROp::Ins);
                j += 1;
            }
        }
        ops
    }

    fn body_line(out: &mut String, prefix: char, line: &RLine) {
        out.push(prefix);
        out.push_str(&line.text);
        out.push('\n');
        if !line.newline {
            out.push_str("\\ No newline at end of file\n");
        }
    }

    fn range(start: usize, len: usize) -> String {
        if len == 1 {
            start.to_string()
        } else {
            format!("{start},{len}")
        }
    }

    fn hunks(a: &[RLine], b: &[RLine]) -> Option<String> {
        let ops = script(a, b);
        let changes: Vec<usize> = ops
            .iter()
            .enumerate()
            .filter(|(_, op)| **op != ROp::Keep)
            .map(|(k, _)| k)
            .collect();
        if changes.is_empty() {
            return None;
        }

        let mut spans: Vec<(usize, usize)> = Vec::new();
        for &k in &changes {
            match spans.last_mut() {
                Some((_, last)) if k - *last <= 7 => *last = k,
                _ => spans.push((k, k)),
            }
        }

        let mut out = String::new();
        for (first, last) in spans {
            let s = first.saturating_sub(3);
            let e = (last + 3).min(ops.len() - 1);
            let olds_before = ops[..s].iter().filter(|op| **op != ROp::Ins).count();
            let news_before = ops[..s].iter().filter(|op| **op != ROp::Del).count();
            let old_len = ops[s..=e].iter().filter(|op| **op != ROp::Ins).count();
            let new_len = ops[s..=e].iter().filter(|op| **op != ROp::Del).count();
            let old_start = olds_before + usize::from(old_len > 0);
            let new_start = news_before + usize::from(new_len > 0);
            out.push_str(&format!(
                "@@ -{} +{} @@\n",
                range(old_start, old_len),
                range(new_start, new_len)
            ));

            let (mut i, mut j) = (olds_before, news_before);
            for op in &ops[s..=e] {
                match op {
                    ROp::Keep => {
                        body_line(&mut out, ' ', &a[i]);
                        i += 1;
                        j += 1;
                    }
                    ROp::Del => {
                        body_line(&mut out, '-', &a[i]);
                        i += 1;
                    }
                    ROp::Ins => {
                        body_line(&mut out, '+', &b[j]);
                        j += 1;
                    }
                }
            }
        }
        Some(out)
    }

    pub fn diff_trees(
        base: &std::collections::BTreeMap<String, String>,
        changed: &std::collections::BTreeMap<String, String>,
    ) -> String {
        let paths: BTreeSet<&String> = base.keys().chain(changed.keys()).collect();
        let mut out = String::new();
        for path in paths {
            match (base.get(path), changed.get(path)) {
                (Some(o), Some(n)) if o == n => {}
                (Some(o), Some(n)) => {
                    if let Some(h) = hunks(&split(o), &split(n)) {
                        out.push_str(&format!("diff --git a/{path} b/{path}\n"));
                        out.push_str(&format!("--- a/{path}\n+++ b/{path}\n"));
                        out.push_str(&h);
                    }
                }
                (None, Some(n)) => {
                    out.push_str(&format!("diff --git a/{path} b/{path}\n"));
                    out.push_str("new file mode 100644\n");
                    out.push_str(&format!("--- /dev/null\n+++ b/{path}\n"));
                    if let Some(h) = hunks(&[], &split(n)) {
                        out.push_str(&h);
                    }
                }
                (Some(o), None) => {
                    out.push_str(&format!("diff --git a/{path} b/{path}\n"));
                    out.push_str("deleted file mode 100644\n");
                    out.push_str(&format!("--- a/{path}\n+++ /dev/null\n"));
                    if let Some(h) = hunks(&split(o), &[]) {
                        out.push_str(&h);
                    }
                }
                (None, None) => {}
            }
        }
        out
    }
}

fn write_tree(root: &Path, tree: &BTreeMap<String, String>) -> Result<(), String> {
    for (rel, content) in tree {
        let full = root.join(rel);
        std::fs::create_dir_all(full.parent().expect("file path has a parent"))
            .map_err(|e| e.to_string())?;
        std::fs::write(full, content).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn read_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("walk stays under root")
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, std::fs::read_to_string(&path).unwrap_or_default());
            }
        }
    }
    out
}

#[test]
fn c05_diff_round_trip_and_reference_equality() {
    criterion(
        "c05",
        "120 random edit sequences round-trip and byte-match the reference diff",
        Duration::from_secs(60),
        || {
            const PATHS: [&str; 5] = ["a.py", "pkg/b.py", "pkg/deep/c.py", "d.txt", "e.py"];
            const LINES: [&str; 8] =
                ["x = 1", "y = 2", "# c", "pass", "print(1)", "", "total = x + y", "del x"];
            let mut rng = ChaCha8Rng::seed_from_u64(5);

            let gen_file = |rng: &mut ChaCha8Rng| {
                let count = rng.gen_range(0..=10);
                let mut body = (0..count)
                    .map(|_| LINES[rng.gen_range(0..LINES.len())])
                    .collect::<Vec<_>>()
                    .join("\n");
                if !body.is_empty() && rng.gen_bool(0.8) {
                    body.push('\n');
                }
                body
            };

            for case in 0..120 {
                let mut base: BTreeMap<String, String> = BTreeMap::new();
                for _ in 0..rng.gen_range(1..=3) {
                    let path = PATHS[rng.gen_range(0..PATHS.len())].to_string();
                    let content = gen_file(&mut rng);
                    base.insert(path, content);
                }

                let mut mutated = base.clone();
                for _ in 0..rng.gen_range(1..=5) {
                    let keys: Vec<String> = mutated.keys().cloned().collect();
                    match rng.gen_range(0..5) {
                        0 if !keys.is_empty() => {
                            let key = keys[rng.gen_range(0..keys.len())].clone();
                            let content = gen_file(&mut rng);
                            mutated.insert(key, content);
                        }
                        1 if !keys.is_empty() => {
                            let key = &keys[rng.gen_range(0..keys.len())];
                            let line = LINES[rng.gen_range(0..LINES.len())];
                            let entry = mutated.get_mut(key).expect("key listed");
                            if !entry.is_empty() && !entry.ends_with('\n') {
                                entry.push('\n');
                            }
                            entry.push_str(line);
                            entry.push('\n');
                        }
                        2 if !keys.is_empty() => {
                            let key = &keys[rng.gen_range(0..keys.len())];
                            let entry = mutated.get_mut(key).expect("key listed");
                            entry.truncate(entry.len() / 2);
                        }
                        3 => {
                            let path = PATHS[rng.gen_range(0..PATHS.len())].to_string();
                            let content = gen_file(&mut rng);
                            mutated.insert(path, content);
                        }
                        4 if !keys.is_empty() => {
                            mutated.remove(&keys[rng.gen_range(0..keys.len())]);
                        }
                        _ => {}
                    }
                }

                let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
                let base_root = scratch.path().join("base");
                let work_root = scratch.path().join("work");
                std::fs::create_dir_all(&base_root).map_err(|e| e.to_string())?;
                std::fs::create_dir_all(&work_root).map_err(|e| e.to_string())?;
                write_tree(&base_root, &base)?;
                write_tree(&work_root, &mutated)?;

                let patch = diff_trees(&base_root, &work_root).map_err(|e| e.to_string())?;

                let reference = refdiff::diff_trees(&base, &mutated);
                check(patch.text() == reference, || {
                    format!(
                        "case {case}: emitted diff differs from reference\n--- emitted\n{}\n--- reference\n{reference}",
                        patch.text()
                    )
                })?;

                let dest = scratch.path().join("dest");
                apply_patch(&base_root, &patch, &dest).map_err(|e| {
                    format!("case {case}: patch failed to apply: {e}\n{}", patch.text())
                })?;
                let rebuilt = read_tree(&dest);
                check(rebuilt == mutated, || {
                    format!("case {case}: rebuilt tree differs\n{}", patch.text())
                })?;
            }
            Ok(())
        },
    );
}

// --- c06 -----------------------------------------------------------------

fn searching_client(calls: &AtomicUsize) -> FnClient<impl Fn(&[ChatMessage]) -> Result<ChatMessage, LlmError> + '_> {
    FnClient(move |_messages: &[ChatMessage]| {
        let n = calls.fetch_add(1, Ordering::SeqCst);
        Ok(ChatMessage {
            role: Role::Assistant,
            content: "Still looking.".to_string(),
            tool_calls: vec![ToolCall {
                id: format!("call-{n}"),
                name: "search_tool".to_string(),
                arguments: serde_json::json!({"construct": "function", "entity": "run"}),
            }],
            tool_call_id: None,
        })
    })
}

#[test]
fn c06_rollout_limits() {
    criterion(
        "c06",
        "round cap stops at exactly 50, token cap precedes the over-budget call",
        Duration::from_secs(5),
        || {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            std::fs::write(dir.path().join("app.py"), "def run():\n    return 1\n")
                .map_err(|e| e.to_string())?;
            let source = SnapshotSource::Tree(dir.path().to_path_buf());
            let issue = sample_issue("c06");

            let calls = AtomicUsize::new(0);
            let trajectory = run_rollout(
                &issue,
                &source,
                &searching_client(&calls),
                &RolloutLimits { round_limit: 50, token_limit: usize::MAX },
            )
            .map_err(|e| e.to_string())?;
            check(trajectory.termination == Termination::RoundLimit, || {
                format!("expected RoundLimit, got {:?}", trajectory.termination)
            })?;
            check(trajectory.rounds_used == 50, || {
                format!("rounds_used {} != 50", trajectory.rounds_used)
            })?;
            let assistant_turns = trajectory
                .turns
                .iter()
                .filter(|t| t.role == Role::Assistant)
                .count();
            check(assistant_turns == 50, || {
                format!("{assistant_turns} assistant turns != 50")
            })?;
            check(calls.load(Ordering::SeqCst) == 50, || {
                format!("{} completions != 50", calls.load(Ordering::SeqCst))
            })?;

            // Budget that admits exactly the first request: the transcript
            // then grows past it, and no second completion may be issued.
            let initial = patchjury::agent::estimate_tokens(&[
                ChatMessage::system(patchjury::agent::AGENT_SYSTEM_PROMPT),
                ChatMessage::user(issue.problem_statement.clone()),
            ]);
            let calls = AtomicUsize::new(0);
            let trajectory = run_rollout(
                &issue,
                &source,
                &searching_client(&calls),
                &RolloutLimits { round_limit: 50, token_limit: initial + 1 },
            )
            .map_err(|e| e.to_string())?;
            check(trajectory.termination == Termination::TokenLimit, || {
                format!("expected TokenLimit, got {:?}", trajectory.termination)
            })?;
            check(calls.load(Ordering::SeqCst) == 1, || {
                format!("{} completions issued past the budget", calls.load(Ordering::SeqCst))
            })?;
            check(trajectory.prompt_token_estimate > initial + 1, || {
                "terminating transcript should exceed the budget".to_string()
            })?;

            // Budget below the opening transcript: no completion at all.
            let calls = AtomicUsize::new(0);
            let trajectory = run_rollout(
                &issue,
                &source,
                &searching_client(&calls),
                &RolloutLimits { round_limit: 50, token_limit: 1 },
            )
            .map_err(|e| e.to_string())?;
            check(trajectory.termination == Termination::TokenLimit, || {
                format!("expected TokenLimit, got {:?}", trajectory.termination)
            })?;
            check(calls.load(Ordering::SeqCst) == 0, || {
                format!("{} completions despite exhausted budget", calls.load(Ordering::SeqCst))
            })?;
            Ok(())
        },
    );
}

// --- c07 -----------------------------------------------------------------

#[test]
fn c07_scripted_scaffold_end_to_end() {
    criterion(
        "c07",
        "scripted search-edit-submit patch rebuilds the intended tree",
        Duration::from_secs(5),
        || {
            let fixtures = fixtures_dir();
            let script = ScriptedClient::from_file(&fixtures.join("mock_rollout.json"))
                .map_err(|e| e.to_string())?;
            let issue = Issue {
                issue_id: "demo-1".to_string(),
                repo: "octo/miniproj".to_string(),
                base_commit: "c0ffee".to_string(),
                problem_statement:
                    "Svc.run() counts blank trailing lines; reports are inflated.".to_string(),
            };
            let source = SnapshotSource::Store(fixtures.join("snapshots"));

            let trajectory = run_rollout(&issue, &source, &script, &RolloutLimits::default())
                .map_err(|e| e.to_string())?;
            check(trajectory.termination == Termination::Submitted, || {
                format!("expected Submitted, got {:?}", trajectory.termination)
            })?;
            check(!trajectory.final_patch.is_empty(), || {
                "submitted patch is empty".to_string()
            })?;

            let snapshot = fixtures.join("snapshots/c0ffee");
            let dest = tempfile::tempdir().map_err(|e| e.to_string())?;
            let dest_root = dest.path().join("rebuilt");
            apply_patch(&snapshot, &trajectory.final_patch, &dest_root)
                .map_err(|e| e.to_string())?;

            let mut intended = read_tree(&snapshot);
            let svc = intended.get_mut("pkg/svc.py").expect("fixture has pkg/svc.py");
            check(svc.contains("        return len(lines)"), || {
                "fixture drifted: expected pre-edit line missing".to_string()
            })?;
            *svc = svc.replace(
                "        return len(lines)",
                "        return len([line for line in lines if line.strip()])",
            );
            check(read_tree(&dest_root) == intended, || {
                format!(
                    "rebuilt tree does not match the intended post-edit tree\n{}",
                    trajectory.final_patch.text()
                )
            })?;
            Ok(())
        },
    );
}

// --- c08 -----------------------------------------------------------------

/// Slot ids (1-based) whose rendered patch body carries the given marker.
fn marked_slots(prompt: &str, marker: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for segment in prompt.split("<patch-").skip(1) {
        let Some(close) = segment.find('>') else { continue };
        let Ok(id) = segment[..close].parse::<usize>() else { continue };
        let body_end = segment.find("</patch-").unwrap_or(segment.len());
        if segment[close + 1..body_end].contains(marker) {
            out.push(id);
        }
    }
    out
}

/// A verifier that reads the ground truth straight out of the patch
/// bodies: group verdicts name every marked slot, single-choice prompts
/// get the first marked slot (or candidate 1 when none qualifies).
fn oracle_client() -> FnClient<impl Fn(&[ChatMessage]) -> Result<ChatMessage, LlmError>> {
    FnClient(|messages: &[ChatMessage]| {
        let system = &messages[0].content;
        let user = &messages[messages.len() - 1].content;
        let ok = marked_slots(user, "MARKER_OK");
        let reply = if system.contains("exactly one candidate") {
            match ok.first() {
                Some(id) => format!("\\boxed{{{id}}}"),
                None => "\\boxed{1}".to_string(),
            }
        } else {
            boxed_list(&ok)
        };
        Ok(ChatMessage::assistant(reply))
    })
}

#[test]
fn c08_oracle_selection_matches_pass_rate() {
    criterion(
        "c08",
        "perfect-oracle Best@16 equals Pass@16 and is non-decreasing in m",
        Duration::from_secs(10),
        || {
            let first_correct: [Option<usize>; 10] = [
                Some(0),
                Some(3),
                Some(7),
                Some(15),
                Some(5),
                Some(1),
                Some(2),
                Some(10),
                Some(12),
                None,
            ];
            let is_correct = |issue_ix: usize, patch_ix: usize| match first_correct[issue_ix] {
                Some(f) => patch_ix == f || (f + 5 < 16 && patch_ix == f + 5),
                None => false,
            };

            let issues: Vec<Issue> =
                (0..10).map(|i| sample_issue(&format!("tts-{i}"))).collect();
            let fixture: Vec<Vec<Patch>> = (0..10)
                .map(|i| {
                    (0..16)
                        .map(|p| labeled_patch(&format!("tts-{i}"), i * 16 + p, is_correct(i, p)))
                        .collect()
                })
                .collect();

            let client = oracle_client();
            let mut best_curve = Vec::with_capacity(16);
            for m in 1..=16 {
                let mut best_hits = 0;
                let mut pass_hits = 0;
                for (i, issue) in issues.iter().enumerate() {
                    let window = &fixture[i][..m];
                    let pass = (0..m).any(|p| is_correct(i, p));
                    pass_hits += usize::from(pass);

                    let result = select_best(issue, window, &client, 4, 1)
                        .map_err(|e| format!("m={m} issue {i}: {e}"))?;
                    let best = is_correct(i, result.chosen);
                    best_hits += usize::from(best);
                    check(best == pass, || {
                        format!(
                            "m={m} issue {i}: oracle selection {} but pass {}",
                            best, pass
                        )
                    })?;
                }
                check(best_hits == pass_hits, || {
                    format!("m={m}: Best {best_hits}/10 != Pass {pass_hits}/10")
                })?;
                best_curve.push(best_hits);
            }

            for m in 1..best_curve.len() {
                check(best_curve[m] >= best_curve[m - 1], || {
                    format!("success curve decreased at m={}: {best_curve:?}", m + 1)
                })?;
            }
            check(best_curve[15] == 9, || {
                format!("Best@16 should resolve 9/10 issues, got {}", best_curve[15])
            })?;
            Ok(())
        },
    );
}

// --- c09 -----------------------------------------------------------------

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut value = 1usize;
    for i in 0..k.min(n - k) {
        value = value * (n - i) / (i + 1);
    }
    value
}

fn six_patch_corpus(correct_counts: &[usize]) -> Corpus {
    let mut issues = Vec::new();
    let mut patches = Vec::new();
    for (ix, &cc) in correct_counts.iter().enumerate() {
        let id = format!("bal-{ix}");
        issues.push(sample_issue(&id));
        for p in 0..6 {
            patches.push(labeled_patch(&id, ix * 6 + p, p < cc));
        }
    }
    Corpus { issues, patches, warnings: Vec::new() }
}

#[test]
fn c09_combination_balancing() {
    criterion(
        "c09",
        "15 combos per issue, hypergeometric classes, balanced within 1.10x",
        Duration::from_secs(5),
        || {
            let correct_counts = [0usize, 1, 2, 3, 4, 5, 6, 2, 3, 3, 4, 1];

            for &cc in &correct_counts {
                let corpus = six_patch_corpus(&[cc]);
                let outcome = build_balanced_groups(&corpus, 4, f64::INFINITY, 9)
                    .map_err(|e| e.to_string())?;
                let raw_total: usize = outcome.raw_histogram.iter().sum();
                check(raw_total == 15, || {
                    format!("issue with {cc} correct: {raw_total} raw combos != C(6,4)=15")
                })?;
                for k in 0..=4 {
                    let want = binomial(cc, k) * binomial(6 - cc, 4 - k);
                    let got = outcome.raw_histogram.get(k).copied().unwrap_or(0);
                    check(got == want, || {
                        format!("issue with {cc} correct, class {k}: {got} != {want}")
                    })?;
                }
            }

            let corpus = six_patch_corpus(&correct_counts);
            let outcome =
                build_balanced_groups(&corpus, 4, 0.10, 9).map_err(|e| e.to_string())?;
            check(outcome.groups.iter().all(|g| g.patches.len() == 4), || {
                "balanced output contains a group of the wrong size".to_string()
            })?;

            let mut tally = vec![0usize; 5];
            for group in &outcome.groups {
                tally[group.correct_count()] += 1;
            }
            check(tally == outcome.class_histogram, || {
                format!(
                    "histogram {:?} does not match group tally {tally:?}",
                    outcome.class_histogram
                )
            })?;

            let populated: Vec<usize> = outcome
                .class_histogram
                .iter()
                .copied()
                .filter(|n| *n > 0)
                .collect();
            let max = populated.iter().copied().max().expect("classes populated");
            let min = populated.iter().copied().min().expect("classes populated");
            check(populated.len() == 5, || {
                "all five classes should survive balancing".to_string()
            })?;
            check(max as f64 <= 1.10 * min as f64 + 1e-9, || {
                format!("class spread too wide after balancing: max {max}, min {min}")
            })?;
            Ok(())
        },
    );
}

// --- c10 -----------------------------------------------------------------

#[test]
fn c10_pr_filter_fidelity() {
    criterion(
        "c10",
        "12-record filter fixture reproduces hand labels exactly",
        Duration::from_secs(1),
        || {
            use FilterReason::*;
            let expected: [(bool, &[FilterReason]); 12] = [
                (true, &[]),
                (false, &[Length]),
                (false, &[Length]),
                (false, &[NonAscii]),
                (false, &[NonPythonFiles]),
                (false, &[FileCount]),
                (false, &[HasImages]),
                (false, &[NoTests]),
                (false, &[Length, NoTests]),
                (false, &[NonAscii, HasImages]),
                (false, &[NonPythonFiles, FileCount]),
                (true, &[]),
            ];

            let raw = std::fs::read_to_string(fixtures_dir().join("prfilter.jsonl"))
                .map_err(|e| e.to_string())?;
            let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
            check(lines.len() == 12, || {
                format!("fixture has {} records, expected 12", lines.len())
            })?;

            for (ix, line) in lines.iter().enumerate() {
                let record = parse_pr_record(line, ix + 1).map_err(|e| e.to_string())?;
                let decision = filter_pr_record(&record);
                let (want_keep, want_reasons) = &expected[ix];
                check(decision.keep == *want_keep, || {
                    format!(
                        "record {}: keep {} != {} (reasons {:?})",
                        ix + 1,
                        decision.keep,
                        want_keep,
                        decision.reasons
                    )
                })?;
                check(decision.reasons == *want_reasons, || {
                    format!(
                        "record {}: reasons {:?} != {:?}",
                        ix + 1,
                        decision.reasons,
                        want_reasons
                    )
                })?;
            }
            Ok(())
        },
    );
}

// --- c11 -----------------------------------------------------------------

fn judgment(issue_id: &str, patch_index: usize, group_id: usize, predicted: bool, label: bool) -> Judgment {
    Judgment {
        issue_id: issue_id.to_string(),
        patch_index,
        predicted: if predicted { Label::Correct } else { Label::Incorrect },
        label: Some(if label { Label::Correct } else { Label::Incorrect }),
        group_id,
        raw_verdict_digest: "fixed".to_string(),
    }
}

#[test]
fn c11_metrics_identities_and_recomposition() {
    criterion(
        "c11",
        "scores match hand tallies on all 256 slot configurations; strata recompose",
        Duration::from_secs(5),
        || {
            let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
            for label_bits in 0u32..16 {
                for pred_bits in 0u32..16 {
                    let judgments: Vec<Judgment> = (0..4)
                        .map(|s| {
                            judgment(
                                "c11",
                                s,
                                0,
                                pred_bits >> s & 1 == 1,
                                label_bits >> s & 1 == 1,
                            )
                        })
                        .collect();
                    let report = compute_metrics(&judgments).map_err(|e| e.to_string())?;

                    let (mut tp, mut fp, mut tn, mut fun) = (0usize, 0usize, 0usize, 0usize);
                    for s in 0..4 {
                        match (pred_bits >> s & 1 == 1, label_bits >> s & 1 == 1) {
                            (true, true) => tp += 1,
                            (true, false) => fp += 1,
                            (false, false) => tn += 1,
                            (false, true) => fun += 1,
                        }
                    }
                    let accuracy = ratio(tp + tn, 4);
                    let f1 = ratio(2 * tp, 2 * tp + fp + fun);
                    let em = if pred_bits == label_bits { 1.0 } else { 0.0 };
                    let fpr = ratio(fp, fp + tn);
                    let fnr = ratio(fun, fun + tp);

                    let checks = [
                        ("accuracy", report.accuracy, accuracy),
                        ("f1", report.f1, f1),
                        ("exact_match", report.exact_match, em),
                        ("fpr", report.fpr, fpr),
                        ("fnr", report.fnr, fnr),
                        ("precision", report.precision, ratio(tp, tp + fp)),
                        ("recall", report.recall, ratio(tp, tp + fun)),
                    ];
                    for (name, got, want) in checks {
                        check((got - want).abs() < 1e-12, || {
                            format!(
                                "labels {label_bits:04b} preds {pred_bits:04b}: {name} {got} != {want}"
                            )
                        })?;
                    }
                    let c = &report.confusion;
                    check(
                        (c.tp, c.fp, c.tn, c.r#fn) == (tp, fp, tn, fun),
                        || format!("confusion mismatch at {label_bits:04b}/{pred_bits:04b}"),
                    )?;
                }
            }

            // Stratified accuracies, weighted by row support, must rebuild
            // the overall accuracy for every grouping key.
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let repos = ["octo/alpha", "octo/beta", "octo/gamma"];
            let mut issues = Vec::new();
            let mut patches = Vec::new();
            let mut judgments = Vec::new();
            for i in 0..6 {
                let id = format!("strat-{i}");
                let mut issue = sample_issue(&id);
                issue.repo = repos[i % repos.len()].to_string();
                issues.push(issue);
                for p in 0..8 {
                    let correct = rng.gen_bool(0.4);
                    let mut patch = labeled_patch(&id, i * 8 + p, correct);
                    if p % 4 == 0 {
                        patch.diff = UnifiedDiff::empty();
                    }
                    patches.push(patch);
                    judgments.push(judgment(&id, p, p / 4, rng.gen_bool(0.6) == correct, correct));
                }
            }

            let overall = compute_metrics(&judgments).map_err(|e| e.to_string())?.accuracy;
            for by in [Stratifier::EditedLinesBin, Stratifier::SimilarityBin, Stratifier::Repo] {
                let rows =
                    stratify(&judgments, &issues, &patches, by).map_err(|e| e.to_string())?;
                let total: usize = rows.iter().map(|r| r.n).sum();
                check(total == judgments.len(), || {
                    format!("{by:?}: strata cover {total} of {} judgments", judgments.len())
                })?;
                let weighted: f64 =
                    rows.iter().map(|r| r.accuracy * r.n as f64).sum::<f64>() / total as f64;
                check((weighted - overall).abs() < 1e-12, || {
                    format!("{by:?}: weighted {weighted} != overall {overall}")
                })?;
            }
            Ok(())
        },
    );
}

// --- c12 -----------------------------------------------------------------

#[test]
fn c12_cli_determinism() {
    criterion(
        "c12",
        "two mock verify+metrics runs produce byte-identical artifacts",
        Duration::from_secs(10),
        || {
            let fixtures = fixtures_dir();
            let corpus = fixtures.join("corpus.jsonl");
            let script = fixtures.join("mock_verify.json");
            let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;

            let mut artifacts: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
            for run in ["one", "two"] {
                let out = scratch.path().join(run);
                let verify = Command::new(env!("CARGO_BIN_EXE_patchjury"))
                    .args(["verify", "--corpus"])
                    .arg(&corpus)
                    .arg("--mock")
                    .arg(&script)
                    .arg("--out")
                    .arg(&out)
                    .arg("--seed")
                    .arg("17")
                    .current_dir(scratch.path())
                    .output()
                    .map_err(|e| e.to_string())?;
                check(verify.status.success(), || {
                    format!("verify run {run} failed: {}", String::from_utf8_lossy(&verify.stderr))
                })?;

                let judgments = out.join("judgments.jsonl");
                let metrics = Command::new(env!("CARGO_BIN_EXE_patchjury"))
                    .args(["metrics", "--judgments"])
                    .arg(&judgments)
                    .arg("--out")
                    .arg(&out)
                    .arg("--seed")
                    .arg("17")
                    .current_dir(scratch.path())
                    .output()
                    .map_err(|e| e.to_string())?;
                check(metrics.status.success(), || {
                    format!("metrics run {run} failed: {}", String::from_utf8_lossy(&metrics.stderr))
                })?;

                let judgment_bytes = std::fs::read(&judgments).map_err(|e| e.to_string())?;
                let metric_bytes =
                    std::fs::read(out.join("metrics.json")).map_err(|e| e.to_string())?;
                check(!judgment_bytes.is_empty(), || {
                    format!("run {run} wrote no judgments")
                })?;
                artifacts.push((judgment_bytes, metric_bytes));
            }

            check(artifacts[0].0 == artifacts[1].0, || {
                "judgments.jsonl differs between identical runs".to_string()
            })?;
            check(artifacts[0].1 == artifacts[1].1, || {
                "metrics.json differs between identical runs".to_string()
            })?;
            Ok(())
        },
    );
}
