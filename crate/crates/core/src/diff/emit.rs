use std::collections::BTreeSet;
use std::path::Path;

use super::{split_lines, DiffError, Line, UnifiedDiff};

/// Context lines kept on each side of a change.
const CONTEXT: usize = 3;

/// Cap on the LCS table size. Beyond it the changed region is emitted as a
/// full replacement instead, which stays correct under apply but is not
/// minimal. 16M u32 cells is 64 MiB, enough for ~4000x4000 changed lines.
const MAX_LCS_CELLS: usize = 16_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Keep,
    Del,
    Ins,
}

/// Line-level edit script from `a` to `b`.
///
/// Deterministic by construction: common prefix is kept verbatim, the rest
/// goes through a longest-common-subsequence walk that prefers deletion on
/// ties. The suffix is deliberately not pre-trimmed; trimming it can
/// disagree with the tie rule (e.g. `[x]` vs `[x, x]`).
fn edit_script(a: &[Line], b: &[Line]) -> Vec<Op> {
    let mut ops = Vec::new();
    let mut p = 0;
    while p < a.len() && p < b.len() && a[p] == b[p] {
        ops.push(Op::Keep);
        p += 1;
    }
    let a = &a[p..];
    let b = &b[p..];
    let n = a.len();
    let m = b.len();

    if n == 0 {
        ops.extend(std::iter::repeat(Op::Ins).take(m));
        return ops;
    }
    if m == 0 {
        ops.extend(std::iter::repeat(Op::Del).take(n));
        return ops;
    }
    if (n + 1) * (m + 1) > MAX_LCS_CELLS {
        ops.extend(std::iter::repeat(Op::Del).take(n));
        ops.extend(std::iter::repeat(Op::Ins).take(m));
        return ops;
    }

    // suffix[i][j] = LCS length of a[i..] and b[j..], flattened row-major.
    let w = m + 1;
    let mut suffix = vec![0u32; (n + 1) * w];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            suffix[i * w + j] = if a[i] == b[j] {
                suffix[(i + 1) * w + j + 1] + 1
            } else {
                suffix[(i + 1) * w + j].max(suffix[i * w + j + 1])
            };
        }
    }

    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            ops.push(Op::Keep);
            i += 1;
            j += 1;
        } else if i < n && (j >= m || suffix[(i + 1) * w + j] >= suffix[i * w + j + 1]) {
            ops.push(Op::Del);
            i += 1;
        } else {
            ops.push(Op::Ins);
            j += 1;
        }
    }
    ops
}

fn push_body_line(out: &mut String, prefix: char, line: &Line) {
    out.push(prefix);
    out.push_str(&line.text);
    out.push('\n');
    if !line.newline {
        out.push_str("\\ No newline at end of file\n");
    }
}

fn push_range(out: &mut String, start: usize, len: usize) {
    out.push_str(&start.to_string());
    if len != 1 {
        out.push(',');
        out.push_str(&len.to_string());
    }
}

/// Render the hunks for one file from its edit script. Returns `None` when
/// the script contains no changes.
fn render_hunks(a: &[Line], b: &[Line], ops: &[Op]) -> Option<String> {
    let change_idx: Vec<usize> = ops
        .iter()
        .enumerate()
        .filter(|(_, op)| **op != Op::Keep)
        .map(|(k, _)| k)
        .collect();
    if change_idx.is_empty() {
        return None;
    }

    // Old/new lines consumed by ops[..k], so ranges can be priced in O(1).
    let mut olds_before = vec![0usize; ops.len() + 1];
    let mut news_before = vec![0usize; ops.len() + 1];
    for (k, op) in ops.iter().enumerate() {
        olds_before[k + 1] = olds_before[k] + usize::from(*op != Op::Ins);
        news_before[k + 1] = news_before[k] + usize::from(*op != Op::Del);
    }

    // Group changes whose context would touch or overlap into one hunk.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for &k in &change_idx {
        match groups.last_mut() {
            Some((_, last)) if k - *last <= 2 * CONTEXT + 1 => *last = k,
            _ => groups.push((k, k)),
        }
    }

    let mut out = String::new();
    for (first, last) in groups {
        let s = first.saturating_sub(CONTEXT);
        let e = (last + CONTEXT).min(ops.len() - 1);
        let old_len = olds_before[e + 1] - olds_before[s];
        let new_len = news_before[e + 1] - news_before[s];
        let old_start = if old_len > 0 { olds_before[s] + 1 } else { olds_before[s] };
        let new_start = if new_len > 0 { news_before[s] + 1 } else { news_before[s] };

        out.push_str("@@ -");
        push_range(&mut out, old_start, old_len);
        out.push_str(" +");
        push_range(&mut out, new_start, new_len);
        out.push_str(" @@\n");

        let (mut i, mut j) = (olds_before[s], news_before[s]);
        for op in &ops[s..=e] {
            match op {
                Op::Keep => {
                    push_body_line(&mut out, ' ', &a[i]);
                    i += 1;
                    j += 1;
                }
                Op::Del => {
                    push_body_line(&mut out, '-', &a[i]);
                    i += 1;
                }
                Op::Ins => {
                    push_body_line(&mut out, '+', &b[j]);
                    j += 1;
                }
            }
        }
    }
    Some(out)
}

/// Diff one file's before and after text into a git-style block.
///
/// `None` on either side marks absence (file created or deleted). Returns
/// `None` when the contents are identical.
pub fn diff_file_texts(path: &str, old: Option<&str>, new: Option<&str>) -> Option<String> {
    let mut out = String::new();
    match (old, new) {
        (None, None) => return None,
        (Some(o), Some(n)) => {
            if o == n {
                return None;
            }
            let a = split_lines(o);
            let b = split_lines(n);
            let hunks = render_hunks(&a, &b, &edit_script(&a, &b))?;
            out.push_str(&format!("diff --git a/{path} b/{path}\n"));
            out.push_str(&format!("--- a/{path}\n+++ b/{path}\n"));
            out.push_str(&hunks);
        }
        (None, Some(n)) => {
            let b = split_lines(n);
            out.push_str(&format!("diff --git a/{path} b/{path}\n"));
            out.push_str("new file mode 100644\n");
            out.push_str(&format!("--- /dev/null\n+++ b/{path}\n"));
            if let Some(hunks) = render_hunks(&[], &b, &edit_script(&[], &b)) {
                out.push_str(&hunks);
            }
        }
        (Some(o), None) => {
            let a = split_lines(o);
            out.push_str(&format!("diff --git a/{path} b/{path}\n"));
            out.push_str("deleted file mode 100644\n");
            out.push_str(&format!("--- a/{path}\n+++ /dev/null\n"));
            if let Some(hunks) = render_hunks(&a, &[], &edit_script(&a, &[])) {
                out.push_str(&hunks);
            }
        }
    }
    Some(out)
}

fn is_probably_binary(bytes: &[u8]) -> bool {
    bytes.contains(&0) || std::str::from_utf8(bytes).is_err()
}

fn collect_files(root: &Path) -> Result<BTreeSet<String>, DiffError> {
    let mut out = BTreeSet::new();
    if !root.exists() {
        return Ok(out);
    }
    for entry in walkdir::WalkDir::new(root)
        .into_iter()
        .filter_entry(|e| e.file_name() != ".git")
    {
        let entry = entry.map_err(|e| DiffError::Io {
            path: root.display().to_string(),
            source: e.into(),
        })?;
        if entry.file_type().is_file() {
            let rel = entry
                .path()
                .strip_prefix(root)
                .expect("walkdir yields paths under its root");
            out.insert(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(out)
}

fn read_text(root: &Path, rel: &str) -> Result<Option<(Vec<u8>, Option<String>)>, DiffError> {
    let full = root.join(rel);
    if !full.is_file() {
        return Ok(None);
    }
    let bytes = std::fs::read(&full).map_err(|e| DiffError::Io {
        path: rel.to_string(),
        source: e,
    })?;
    if is_probably_binary(&bytes) {
        return Ok(Some((bytes, None)));
    }
    let text = String::from_utf8(bytes.clone()).expect("checked utf-8 above");
    Ok(Some((bytes, Some(text))))
}

/// Diff two directory trees, `base` as the pre-image and `changed` as the
/// post-image. File blocks are ordered by path so output is deterministic.
/// `.git` directories are ignored; differing binary files are an error
/// because their content cannot be carried in a text patch.
pub fn diff_trees(base: &Path, changed: &Path) -> Result<UnifiedDiff, DiffError> {
    let mut paths = collect_files(base)?;
    paths.extend(collect_files(changed)?);

    let mut out = String::new();
    for rel in &paths {
        let old = read_text(base, rel)?;
        let new = read_text(changed, rel)?;
        let old_binary = matches!(&old, Some((_, None)));
        let new_binary = matches!(&new, Some((_, None)));
        if old_binary || new_binary {
            let same = match (&old, &new) {
                (Some((ob, _)), Some((nb, _))) => ob == nb,
                _ => false,
            };
            if same {
                continue;
            }
            return Err(DiffError::NonText { path: rel.clone() });
        }
        let old_text = old.as_ref().and_then(|(_, t)| t.as_deref());
        let new_text = new.as_ref().and_then(|(_, t)| t.as_deref());
        if let Some(block) = diff_file_texts(rel, old_text, new_text) {
            out.push_str(&block);
        }
    }
    UnifiedDiff::parse(out)
}
