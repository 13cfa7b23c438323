//! Unified-diff creation, parsing, and strict application.
//!
//! Diffs are git-shaped: `diff --git a/x b/x` headers, `a/`–`b/` path
//! prefixes, three lines of context, and `\ No newline at end of file`
//! markers. Application is exact: any context mismatch is rejected rather
//! than fuzzed.

mod apply;
mod emit;
mod parse;

pub use apply::{apply_file_text, apply_to_tree};
pub use emit::{diff_file_texts, diff_trees};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("malformed diff at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("context mismatch in {path}: {detail}")]
    ContextMismatch { path: String, detail: String },
    #[error("binary or non-text content in {path}")]
    NonText { path: String },
    #[error("io failure on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A line of file content. `newline` is false only for a final line that
/// is not terminated, so byte-exact round trips survive diffing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Line {
    pub text: String,
    pub newline: bool,
}

pub(crate) fn split_lines(s: &str) -> Vec<Line> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut start = 0;
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'\n' {
            out.push(Line {
                text: s[start..i].to_string(),
                newline: true,
            });
            start = i + 1;
        }
    }
    if start < s.len() {
        out.push(Line {
            text: s[start..].to_string(),
            newline: false,
        });
    }
    out
}

pub(crate) fn join_lines(lines: &[Line]) -> String {
    let mut out = String::new();
    for line in lines {
        out.push_str(&line.text);
        if line.newline {
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Context,
    Add,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HunkLine {
    pub kind: LineKind,
    pub text: String,
    /// Set when the line is followed by a `\ No newline at end of file`
    /// marker, i.e. it is the unterminated final line of its side.
    pub no_newline: bool,
}

/// One `@@`-delimited block. Starts are 1-based; a zero-length side uses
/// the line number *before* the hunk, matching the unified format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub lines: Vec<HunkLine>,
}

/// Per-file entry of a patch. `old_path == None` marks a created file,
/// `new_path == None` a deleted one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileDiff {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
    /// Recorded from `Binary files ... differ` markers so changed paths can
    /// still be inspected; such entries carry no hunks and cannot be applied.
    pub binary: bool,
}

impl FileDiff {
    /// The path this entry is best known by (post-image, falling back to
    /// the pre-image for deletions).
    pub fn path(&self) -> &str {
        self.new_path
            .as_deref()
            .or(self.old_path.as_deref())
            .unwrap_or("")
    }

    pub fn is_new_file(&self) -> bool {
        self.old_path.is_none()
    }

    pub fn is_deleted_file(&self) -> bool {
        self.new_path.is_none()
    }
}

/// A parsed unified diff plus the raw text it came from.
///
/// The text is the canonical representation: equality, hashing, and serde
/// all go through it. Counts are derived at parse time and always agree
/// with the hunks.
#[derive(Debug, Clone)]
pub struct UnifiedDiff {
    text: String,
    files: Vec<FileDiff>,
    added_lines: usize,
    removed_lines: usize,
}

impl UnifiedDiff {
    pub fn parse(text: impl Into<String>) -> Result<Self, DiffError> {
        let text = text.into();
        let files = parse::parse_file_diffs(&text)?;
        let mut added = 0;
        let mut removed = 0;
        for fd in &files {
            for h in &fd.hunks {
                for l in &h.lines {
                    match l.kind {
                        LineKind::Add => added += 1,
                        LineKind::Remove => removed += 1,
                        LineKind::Context => {}
                    }
                }
            }
        }
        Ok(UnifiedDiff {
            text,
            files,
            added_lines: added,
            removed_lines: removed,
        })
    }

    pub fn empty() -> Self {
        UnifiedDiff {
            text: String::new(),
            files: Vec::new(),
            added_lines: 0,
            removed_lines: 0,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn files(&self) -> &[FileDiff] {
        &self.files
    }

    pub fn file_count(&self) -> usize {
        self.files.len()
    }

    pub fn added_lines(&self) -> usize {
        self.added_lines
    }

    pub fn removed_lines(&self) -> usize {
        self.removed_lines
    }

    /// Added plus removed line count.
    pub fn edited_lines(&self) -> usize {
        self.added_lines + self.removed_lines
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// All paths touched by the patch, pre- and post-image, deduplicated
    /// and in encounter order.
    pub fn changed_paths(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for fd in &self.files {
            for p in [fd.old_path.as_deref(), fd.new_path.as_deref()]
                .into_iter()
                .flatten()
            {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        out
    }
}

impl PartialEq for UnifiedDiff {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

impl Eq for UnifiedDiff {}

impl std::fmt::Display for UnifiedDiff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for UnifiedDiff {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for UnifiedDiff {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        UnifiedDiff::parse(text).map_err(D::Error::custom)
    }
}
