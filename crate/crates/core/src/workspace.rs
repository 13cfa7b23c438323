//! Editable repository snapshots.
//!
//! A workspace is a throwaway copy of a pinned snapshot. All mutation goes
//! through the string-replacement edit operation, which enforces two gates:
//! the old string must occur exactly once in the target file, and the
//! edited file must still parse. The net change is exported as a unified
//! diff against the pristine snapshot.

use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{self, DiffError, UnifiedDiff};
use crate::python::{self, SyntaxIssue};

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("no snapshot for commit {commit} under {origin}")]
    UnknownCommit { commit: String, origin: String },
    #[error("io failure on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("git invocation failed: {0}")]
    Git(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

fn io_err(path: impl Into<String>, source: std::io::Error) -> WorkspaceError {
    WorkspaceError::Io {
        path: path.into(),
        source,
    }
}

/// Where a snapshot comes from.
#[derive(Debug, Clone)]
pub enum SnapshotSource {
    /// The directory itself is the snapshot; the commit id is a label.
    Tree(PathBuf),
    /// A directory holding one snapshot subdirectory per commit id.
    Store(PathBuf),
    /// A git repository (bare or checked out); snapshots are extracted
    /// with `git archive`.
    Git(PathBuf),
}

/// Copy every regular file under `from` into `to`, skipping `.git`.
/// Symlinks are not followed and not copied.
pub(crate) fn copy_tree(from: &Path, to: &Path) -> Result<(), WorkspaceError> {
    for entry in walkdir::WalkDir::new(from)
        .into_iter()
        .filter_entry(|e| e.file_name() != ".git")
    {
        let entry = entry.map_err(|e| io_err(from.display().to_string(), e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(from)
            .expect("walkdir yields paths under its root");
        let dest = to.join(rel);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| io_err(parent.display().to_string(), e))?;
        }
        std::fs::copy(entry.path(), &dest)
            .map_err(|e| io_err(dest.display().to_string(), e))?;
    }
    Ok(())
}

fn git_extract(repo: &Path, commit: &str, dest: &Path) -> Result<(), WorkspaceError> {
    let verify = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["rev-parse", "--verify", "--quiet"])
        .arg(format!("{commit}^{{commit}}"))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map_err(|e| WorkspaceError::Git(format!("cannot run git: {e}")))?;
    if !verify.success() {
        return Err(WorkspaceError::UnknownCommit {
            commit: commit.to_string(),
            origin: repo.display().to_string(),
        });
    }

    let mut archive = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["archive", commit])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| WorkspaceError::Git(format!("cannot run git archive: {e}")))?;
    let tar_status = Command::new("tar")
        .arg("-x")
        .arg("-C")
        .arg(dest)
        .stdin(archive.stdout.take().expect("stdout was piped"))
        .status()
        .map_err(|e| WorkspaceError::Git(format!("cannot run tar: {e}")))?;
    let git_status = archive
        .wait()
        .map_err(|e| WorkspaceError::Git(format!("git archive did not finish: {e}")))?;
    if !git_status.success() || !tar_status.success() {
        return Err(WorkspaceError::Git(format!(
            "extraction of {commit} failed (git: {git_status}, tar: {tar_status})"
        )));
    }
    Ok(())
}

/// What happened to one edit request. Anything other than `Applied` leaves
/// the file byte-identical to its pre-call state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum EditOutcome {
    Applied,
    NotFound,
    AmbiguousMatch { occurrences: usize },
    SyntaxRejected { issues: Vec<SyntaxIssue> },
    BadPath { reason: String },
}

impl EditOutcome {
    pub fn is_applied(&self) -> bool {
        matches!(self, EditOutcome::Applied)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub path: String,
    pub old_str: String,
    pub new_str: String,
    #[serde(flatten)]
    pub outcome: EditOutcome,
}

#[derive(Debug)]
pub struct Workspace {
    work_root: PathBuf,
    base_root: PathBuf,
    commit_id: String,
    edit_log: Vec<EditRecord>,
    /// Owns the scratch directories; dropped with the workspace.
    _scratch: tempfile::TempDir,
}

impl Workspace {
    /// Materialize an editable copy of the snapshot `commit_id` names in
    /// `source`. The pristine side is kept (or extracted) alongside the
    /// copy and is never written again.
    pub fn create(source: &SnapshotSource, commit_id: &str) -> Result<Self, WorkspaceError> {
        let scratch = tempfile::tempdir()
            .map_err(|e| io_err("tempdir", e))?;
        let work_root = scratch.path().join("work");
        std::fs::create_dir(&work_root)
            .map_err(|e| io_err(work_root.display().to_string(), e))?;

        let snapshot_dir: PathBuf = match source {
            SnapshotSource::Tree(p) => {
                if !p.is_dir() {
                    return Err(WorkspaceError::UnknownCommit {
                        commit: commit_id.to_string(),
                        origin: p.display().to_string(),
                    });
                }
                p.clone()
            }
            SnapshotSource::Store(p) => {
                let snap = p.join(commit_id);
                if !snap.is_dir() {
                    return Err(WorkspaceError::UnknownCommit {
                        commit: commit_id.to_string(),
                        origin: p.display().to_string(),
                    });
                }
                snap
            }
            SnapshotSource::Git(repo) => {
                let base = scratch.path().join("base");
                std::fs::create_dir(&base)
                    .map_err(|e| io_err(base.display().to_string(), e))?;
                git_extract(repo, commit_id, &base)?;
                base
            }
        };

        copy_tree(&snapshot_dir, &work_root)?;
        Ok(Workspace {
            work_root,
            base_root: snapshot_dir,
            commit_id: commit_id.to_string(),
            edit_log: Vec::new(),
            _scratch: scratch,
        })
    }

    pub fn work_root(&self) -> &Path {
        &self.work_root
    }

    pub fn base_root(&self) -> &Path {
        &self.base_root
    }

    pub fn commit_id(&self) -> &str {
        &self.commit_id
    }

    pub fn edit_log(&self) -> &[EditRecord] {
        &self.edit_log
    }

    fn resolve(&self, rel: &str) -> Result<PathBuf, String> {
        let p = Path::new(rel);
        if rel.is_empty()
            || p.is_absolute()
            || p.components().any(|c| !matches!(c, Component::Normal(_)))
        {
            return Err(format!("path {rel:?} escapes the workspace"));
        }
        Ok(self.work_root.join(p))
    }

    /// Replace the unique occurrence of `old_str` in `path` with
    /// `new_str`. The write happens only when the occurrence is unique and
    /// the edited file still parses; every attempt, failed or not, is
    /// appended to the edit log.
    pub fn apply_edit(&mut self, path: &str, old_str: &str, new_str: &str) -> &EditRecord {
        let outcome = self.try_edit(path, old_str, new_str);
        self.edit_log.push(EditRecord {
            path: path.to_string(),
            old_str: old_str.to_string(),
            new_str: new_str.to_string(),
            outcome,
        });
        self.edit_log.last().expect("just pushed")
    }

    fn try_edit(&mut self, path: &str, old_str: &str, new_str: &str) -> EditOutcome {
        let full = match self.resolve(path) {
            Ok(p) => p,
            Err(reason) => return EditOutcome::BadPath { reason },
        };
        if !path.ends_with(".py") {
            return EditOutcome::BadPath {
                reason: format!("{path:?} is not a Python source file"),
            };
        }
        if !full.is_file() {
            return EditOutcome::BadPath {
                reason: format!("{path:?} does not exist in the workspace"),
            };
        }
        let text = match std::fs::read_to_string(&full) {
            Ok(t) => t,
            Err(e) => {
                return EditOutcome::BadPath {
                    reason: format!("{path:?} is not readable text: {e}"),
                }
            }
        };

        if old_str.is_empty() {
            return EditOutcome::NotFound;
        }
        let occurrences = text.matches(old_str).count();
        if occurrences == 0 {
            return EditOutcome::NotFound;
        }
        if occurrences > 1 {
            return EditOutcome::AmbiguousMatch { occurrences };
        }

        let edited = text.replacen(old_str, new_str, 1);
        let issues = python::check_syntax(&edited);
        if !issues.is_empty() {
            return EditOutcome::SyntaxRejected { issues };
        }

        match std::fs::write(&full, edited) {
            Ok(()) => EditOutcome::Applied,
            Err(e) => EditOutcome::BadPath {
                reason: format!("cannot write {path:?}: {e}"),
            },
        }
    }

    /// Unified diff of the workspace against its pristine snapshot.
    /// Deterministic: files in path order, three context lines.
    pub fn generate_patch(&self) -> Result<UnifiedDiff, WorkspaceError> {
        Ok(diff::diff_trees(&self.base_root, &self.work_root)?)
    }
}

/// Validate `source_text` as Python. Mirrors the gate `apply_edit` uses.
pub fn syntax_check(source_text: &str) -> Vec<SyntaxIssue> {
    python::check_syntax(source_text)
}

/// Materialize `snapshot` with `patch` applied into `dest`, which must be
/// an empty or absent directory. Application is strict: the first context
/// mismatch aborts with the tree left partially written.
pub fn apply_patch(snapshot: &Path, patch: &UnifiedDiff, dest: &Path) -> Result<(), WorkspaceError> {
    if dest.exists() && std::fs::read_dir(dest).map_err(|e| io_err(dest.display().to_string(), e))?.next().is_some() {
        return Err(io_err(
            dest.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::AlreadyExists, "destination not empty"),
        ));
    }
    std::fs::create_dir_all(dest).map_err(|e| io_err(dest.display().to_string(), e))?;
    copy_tree(snapshot, dest)?;
    diff::apply_to_tree(patch, dest)?;
    Ok(())
}
