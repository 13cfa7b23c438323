use std::path::{Component, Path, PathBuf};

use super::{join_lines, split_lines, DiffError, FileDiff, Line, LineKind, UnifiedDiff};

fn mismatch(path: &str, detail: impl Into<String>) -> DiffError {
    DiffError::ContextMismatch {
        path: path.to_string(),
        detail: detail.into(),
    }
}

fn expected_line(hl: &super::HunkLine) -> Line {
    Line {
        text: hl.text.clone(),
        newline: !hl.no_newline,
    }
}

/// Apply one file's hunks to its pre-image text.
///
/// `old` must be `None` exactly when the entry creates the file. The result
/// is `None` when the entry deletes it. Matching is exact, including the
/// presence of a final newline; there is no fuzz and no offset search.
pub fn apply_file_text(fd: &FileDiff, old: Option<&str>) -> Result<Option<String>, DiffError> {
    let path = fd.path().to_string();
    if fd.binary {
        return Err(DiffError::NonText { path });
    }
    if fd.is_new_file() && old.is_some() {
        return Err(mismatch(&path, "file to create already exists"));
    }
    if !fd.is_new_file() && old.is_none() {
        return Err(mismatch(&path, "file to patch does not exist"));
    }

    let old_lines = split_lines(old.unwrap_or(""));
    let mut out: Vec<Line> = Vec::new();
    let mut cursor = 0usize;

    for hunk in &fd.hunks {
        // The header's start is 1-based for a non-empty range and names the
        // line *before* the hunk for an empty one, so both map to the same
        // 0-based position.
        let start = if hunk.old_len == 0 {
            hunk.old_start
        } else {
            hunk.old_start - 1
        };
        if start < cursor {
            return Err(mismatch(&path, "hunks overlap or are out of order"));
        }
        if start > old_lines.len() {
            return Err(mismatch(
                &path,
                format!("hunk starts at line {} beyond end of file", hunk.old_start),
            ));
        }
        out.extend_from_slice(&old_lines[cursor..start]);
        cursor = start;

        for hl in &hunk.lines {
            match hl.kind {
                LineKind::Add => out.push(expected_line(hl)),
                LineKind::Context | LineKind::Remove => {
                    let want = expected_line(hl);
                    let got = old_lines.get(cursor);
                    if got != Some(&want) {
                        return Err(mismatch(
                            &path,
                            format!(
                                "line {}: expected {:?}, found {:?}",
                                cursor + 1,
                                want.text,
                                got.map(|l| l.text.as_str()).unwrap_or("<end of file>"),
                            ),
                        ));
                    }
                    if hl.kind == LineKind::Context {
                        out.push(want);
                    }
                    cursor += 1;
                }
            }
        }
    }

    out.extend_from_slice(&old_lines[cursor..]);

    if fd.is_deleted_file() {
        if !out.is_empty() {
            return Err(mismatch(&path, "deletion leaves content behind"));
        }
        return Ok(None);
    }
    Ok(Some(join_lines(&out)))
}

/// Resolve a patch path under `root`, rejecting anything that could escape
/// it (absolute paths, `..` components).
fn resolve_under(root: &Path, rel: &str) -> Result<PathBuf, DiffError> {
    let p = Path::new(rel);
    if rel.is_empty()
        || p.is_absolute()
        || p.components()
            .any(|c| !matches!(c, Component::Normal(_)))
    {
        return Err(mismatch(rel, "path escapes the target tree"));
    }
    Ok(root.join(p))
}

/// Apply a whole patch to the tree rooted at `root`, in place.
///
/// All-or-nothing is the caller's concern: apply to a scratch copy first if
/// partial application on failure is unacceptable.
pub fn apply_to_tree(diff: &UnifiedDiff, root: &Path) -> Result<(), DiffError> {
    for fd in diff.files() {
        let rel = fd.path().to_string();
        if fd.binary {
            return Err(DiffError::NonText { path: rel });
        }
        if let Some(old_rel) = &fd.old_path {
            resolve_under(root, old_rel)?;
        }
        let target = resolve_under(root, &rel)?;

        let old = if target.is_file() {
            Some(std::fs::read_to_string(&target).map_err(|e| DiffError::Io {
                path: rel.clone(),
                source: e,
            })?)
        } else {
            None
        };

        match apply_file_text(fd, old.as_deref())? {
            Some(new_text) => {
                if let Some(parent) = target.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| DiffError::Io {
                        path: rel.clone(),
                        source: e,
                    })?;
                }
                std::fs::write(&target, new_text).map_err(|e| DiffError::Io {
                    path: rel.clone(),
                    source: e,
                })?;
            }
            None => {
                std::fs::remove_file(&target).map_err(|e| DiffError::Io {
                    path: rel.clone(),
                    source: e,
                })?;
            }
        }
    }
    Ok(())
}
