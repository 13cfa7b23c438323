use super::{DiffError, FileDiff, Hunk, HunkLine, LineKind};

fn malformed(line: usize, message: impl Into<String>) -> DiffError {
    DiffError::Malformed {
        line: line + 1,
        message: message.into(),
    }
}

/// Strip the conventional `a/` or `b/` prefix git puts on header paths.
fn strip_prefix(path: &str) -> &str {
    path.strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(path)
}

fn header_path(raw: &str) -> Option<String> {
    let raw = raw.trim_end();
    if raw == "/dev/null" {
        None
    } else {
        Some(strip_prefix(raw).to_string())
    }
}

fn parse_range(spec: &str, line: usize) -> Result<(usize, usize), DiffError> {
    let (start, len) = match spec.split_once(',') {
        Some((s, l)) => (s, Some(l)),
        None => (spec, None),
    };
    let start: usize = start
        .parse()
        .map_err(|_| malformed(line, format!("bad range start {start:?}")))?;
    let len: usize = match len {
        Some(l) => l
            .parse()
            .map_err(|_| malformed(line, format!("bad range length {l:?}")))?,
        None => 1,
    };
    Ok((start, len))
}

fn parse_hunk_header(text: &str, line: usize) -> Result<(usize, usize, usize, usize), DiffError> {
    let rest = text
        .strip_prefix("@@ -")
        .ok_or_else(|| malformed(line, "expected hunk header"))?;
    let (old_spec, rest) = rest
        .split_once(" +")
        .ok_or_else(|| malformed(line, "hunk header missing new range"))?;
    let (new_spec, _) = rest
        .split_once(" @@")
        .ok_or_else(|| malformed(line, "hunk header missing closing @@"))?;
    let (old_start, old_len) = parse_range(old_spec, line)?;
    let (new_start, new_len) = parse_range(new_spec, line)?;
    Ok((old_start, old_len, new_start, new_len))
}

/// Metadata lines git interleaves between the `diff --git` line and the
/// `---` header. They carry no content; the parser skips them.
fn is_file_metadata(line: &str) -> bool {
    line.starts_with("index ")
        || line.starts_with("old mode ")
        || line.starts_with("new mode ")
        || line.starts_with("new file mode ")
        || line.starts_with("deleted file mode ")
        || line.starts_with("similarity index ")
        || line.starts_with("dissimilarity index ")
        || line.starts_with("rename from ")
        || line.starts_with("rename to ")
        || line.starts_with("copy from ")
        || line.starts_with("copy to ")
}

/// Parse the body of a unified diff into per-file entries.
///
/// The grammar is lenient about envelope (a bare `--- / +++` pair without a
/// `diff --git` line is accepted, as is leading prose before the first file)
/// and strict about content: hunk line counts must match the header ranges.
pub(super) fn parse_file_diffs(text: &str) -> Result<Vec<FileDiff>, DiffError> {
    let lines: Vec<&str> = text.split('\n').collect();
    let mut files: Vec<FileDiff> = Vec::new();
    let mut i = 0;

    // `split` leaves one trailing empty string when the text ends in '\n';
    // treat it as end of input rather than an empty context line.
    let end = if lines.last() == Some(&"") {
        lines.len() - 1
    } else {
        lines.len()
    };

    while i < end {
        let line = lines[i];

        if line.starts_with("diff --git ") {
            i += 1;
            let mut binary = false;
            // Header paths from the metadata section, used when the
            // `---`/`+++` pair is absent (binary entries).
            let git_paths = parse_git_paths(line);
            while i < end && is_file_metadata(lines[i]) {
                i += 1;
            }
            if i < end && lines[i].starts_with("Binary files ") {
                binary = true;
                i += 1;
            }
            if binary {
                let (old_path, new_path) = git_paths.unwrap_or((None, None));
                files.push(FileDiff {
                    old_path,
                    new_path,
                    hunks: Vec::new(),
                    binary: true,
                });
                continue;
            }
            if i >= end || !lines[i].starts_with("--- ") {
                return Err(malformed(i, "expected --- header after diff --git"));
            }
            let fd = parse_text_file(&lines, &mut i, end)?;
            files.push(fd);
        } else if line.starts_with("--- ") && i + 1 < end && lines[i + 1].starts_with("+++ ") {
            let fd = parse_text_file(&lines, &mut i, end)?;
            files.push(fd);
        } else if line.starts_with("Binary files ") {
            return Err(malformed(i, "binary marker outside a diff --git entry"));
        } else if files.is_empty() {
            // Prose before the first file entry is tolerated and ignored.
            i += 1;
        } else {
            return Err(malformed(i, format!("unexpected content {line:?}")));
        }
    }

    Ok(files)
}

fn parse_git_paths(line: &str) -> Option<(Option<String>, Option<String>)> {
    // `diff --git a/x b/x`; paths with spaces are ambiguous here, so this
    // is only a fallback for entries that lack ---/+++ headers.
    let rest = line.strip_prefix("diff --git ")?;
    let (a, b) = rest.split_once(' ')?;
    Some((header_path(a), header_path(b)))
}

fn parse_text_file(
    lines: &[&str],
    i: &mut usize,
    end: usize,
) -> Result<FileDiff, DiffError> {
    let old_raw = lines[*i]
        .strip_prefix("--- ")
        .ok_or_else(|| malformed(*i, "expected --- header"))?;
    *i += 1;
    if *i >= end {
        return Err(malformed(*i, "missing +++ header"));
    }
    let new_raw = lines[*i]
        .strip_prefix("+++ ")
        .ok_or_else(|| malformed(*i, "expected +++ header"))?;
    *i += 1;

    let old_path = header_path(old_raw);
    let new_path = header_path(new_raw);
    if old_path.is_none() && new_path.is_none() {
        return Err(malformed(*i - 1, "both sides are /dev/null"));
    }

    let mut hunks = Vec::new();
    while *i < end && lines[*i].starts_with("@@ -") {
        hunks.push(parse_hunk(lines, i, end)?);
    }
    // Creating or deleting an empty file legitimately carries no hunks;
    // a modification entry without any is malformed.
    if hunks.is_empty() && old_path.is_some() && new_path.is_some() {
        return Err(malformed(*i, "file entry has no hunks"));
    }

    Ok(FileDiff {
        old_path,
        new_path,
        hunks,
        binary: false,
    })
}

fn parse_hunk(lines: &[&str], i: &mut usize, end: usize) -> Result<Hunk, DiffError> {
    let (old_start, old_len, new_start, new_len) = parse_hunk_header(lines[*i], *i)?;
    *i += 1;

    let mut body: Vec<HunkLine> = Vec::new();
    let mut old_seen = 0;
    let mut new_seen = 0;

    while old_seen < old_len || new_seen < new_len {
        if *i >= end {
            return Err(malformed(*i, "hunk truncated"));
        }
        let raw = lines[*i];
        let (kind, text) = if raw.is_empty() {
            // Some producers emit a fully empty line for an empty context
            // line instead of a single space.
            (LineKind::Context, "")
        } else {
            match raw.as_bytes()[0] {
                b' ' => (LineKind::Context, &raw[1..]),
                b'+' => (LineKind::Add, &raw[1..]),
                b'-' => (LineKind::Remove, &raw[1..]),
                b'\\' => {
                    return Err(malformed(
                        *i,
                        "no-newline marker not attached to a line",
                    ))
                }
                _ => return Err(malformed(*i, format!("bad hunk line {raw:?}"))),
            }
        };
        match kind {
            LineKind::Context => {
                old_seen += 1;
                new_seen += 1;
            }
            LineKind::Add => new_seen += 1,
            LineKind::Remove => old_seen += 1,
        }
        *i += 1;
        let mut no_newline = false;
        if *i < end && lines[*i].starts_with('\\') {
            no_newline = true;
            *i += 1;
        }
        body.push(HunkLine {
            kind,
            text: text.to_string(),
            no_newline,
        });
    }

    if old_seen != old_len || new_seen != new_len {
        return Err(malformed(*i, "hunk body does not match header counts"));
    }

    Ok(Hunk {
        old_start,
        old_len,
        new_start,
        new_len,
        lines: body,
    })
}
