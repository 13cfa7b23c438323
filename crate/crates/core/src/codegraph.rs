//! Static entity index over a repository snapshot.
//!
//! The graph is built once from the checked-out tree and then only queried:
//! searches are by simple name and entity kind, never by qualified path,
//! and results render into a text block suitable for a tool reply.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::python::{self, EntityKind};

#[derive(Debug, Error)]
pub enum CodeGraphError {
    #[error("repository root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("io failure on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cache rejected: {0}")]
    CacheInvalid(String),
}

/// One indexed definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEntity {
    pub kind: EntityKind,
    pub simple_name: String,
    /// Dotted scope: module path derived from the file, then any enclosing
    /// definitions, e.g. `pkg.svc.Svc` for a method of `Svc` in
    /// `pkg/svc.py`.
    pub qualifier: String,
    pub file_path: String,
    /// 1-based inclusive line span, decorators included.
    pub span: (usize, usize),
    /// Exact bytes of the span, sliced from the file at build time.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityHit<'a> {
    pub entity: &'a CodeEntity,
    /// 1-based position in the result list.
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct CodeGraph {
    repo_root: PathBuf,
    commit_id: String,
    /// Sorted by (file_path, start line, end line) so query results come
    /// out ordered without re-sorting.
    entities: Vec<CodeEntity>,
    build_warnings: Vec<(String, String)>,
}

/// Dotted module path for a repo-relative file, `pkg/svc.py` -> `pkg.svc`.
/// `__init__.py` maps to its package.
fn module_path(rel: &str) -> String {
    let no_ext = rel.strip_suffix(".py").unwrap_or(rel);
    let no_init = no_ext
        .strip_suffix("/__init__")
        .or_else(|| (no_ext == "__init__").then_some(""))
        .unwrap_or(no_ext);
    no_init.replace('/', ".")
}

/// Slice lines `start..=end` (1-based) out of `text`, trailing newline of
/// the last line included when present.
fn slice_span(text: &str, start: usize, end: usize) -> Option<String> {
    let mut line_starts = vec![0usize];
    for (i, b) in text.bytes().enumerate() {
        if b == b'\n' {
            line_starts.push(i + 1);
        }
    }
    // line_starts[k] is the byte offset of 1-based line k+1; a trailing
    // newline contributes a final empty line that spans zero bytes.
    let line_count = if text.is_empty() {
        0
    } else if text.ends_with('\n') {
        line_starts.len() - 1
    } else {
        line_starts.len()
    };
    if start == 0 || start > end || end > line_count {
        return None;
    }
    let begin = line_starts[start - 1];
    let stop = if end < line_count {
        line_starts[end]
    } else {
        text.len()
    };
    Some(text[begin..stop].to_string())
}

impl CodeGraph {
    /// Index every parseable Python file under `repo_root`. Files that
    /// fail to read, decode, or parse are skipped and recorded as
    /// warnings; only a missing root is fatal.
    pub fn build(repo_root: &Path, commit_id: &str) -> Result<Self, CodeGraphError> {
        if !repo_root.is_dir() {
            return Err(CodeGraphError::MissingRoot(repo_root.to_path_buf()));
        }

        let mut entities = Vec::new();
        let mut warnings = Vec::new();
        let mut files: Vec<PathBuf> = Vec::new();
        for entry in walkdir::WalkDir::new(repo_root)
            .into_iter()
            .filter_entry(|e| e.file_name() != ".git")
        {
            match entry {
                Ok(e) if e.file_type().is_file() => {
                    if e.path().extension().and_then(|x| x.to_str()) == Some("py") {
                        files.push(e.path().to_path_buf());
                    }
                }
                Ok(_) => {}
                Err(err) => warnings.push((
                    err.path()
                        .map(|p| p.display().to_string())
                        .unwrap_or_default(),
                    err.to_string(),
                )),
            }
        }
        files.sort();

        for file in files {
            let rel = file
                .strip_prefix(repo_root)
                .expect("walkdir yields paths under its root")
                .to_string_lossy()
                .replace('\\', "/");
            let text = match std::fs::read_to_string(&file) {
                Ok(t) => t,
                Err(e) => {
                    warnings.push((rel, e.to_string()));
                    continue;
                }
            };
            let issues = python::check_syntax(&text);
            if let Some(first) = issues.first() {
                warnings.push((rel, format!("skipped: {first}")));
                continue;
            }
            let module = module_path(&rel);
            for fe in python::extract_entities(&text) {
                let source = slice_span(&text, fe.start_line, fe.end_line)
                    .expect("extracted spans lie within the file");
                let qualifier = match (&module[..], fe.qualifier.as_deref()) {
                    ("", None) => String::new(),
                    ("", Some(q)) => q.to_string(),
                    (m, None) => m.to_string(),
                    (m, Some(q)) => format!("{m}.{q}"),
                };
                entities.push(CodeEntity {
                    kind: fe.kind,
                    simple_name: fe.name,
                    qualifier,
                    file_path: rel.clone(),
                    span: (fe.start_line, fe.end_line),
                    source,
                });
            }
        }

        entities.sort_by(|a, b| {
            (&a.file_path, a.span.0, a.span.1, &a.simple_name)
                .cmp(&(&b.file_path, b.span.0, b.span.1, &b.simple_name))
        });

        Ok(CodeGraph {
            repo_root: repo_root.to_path_buf(),
            commit_id: commit_id.to_string(),
            entities,
            build_warnings: warnings,
        })
    }

    pub fn repo_root(&self) -> &Path {
        &self.repo_root
    }

    pub fn commit_id(&self) -> &str {
        &self.commit_id
    }

    pub fn entities(&self) -> &[CodeEntity] {
        &self.entities
    }

    pub fn build_warnings(&self) -> &[(String, String)] {
        &self.build_warnings
    }

    /// All entities of `kind` whose simple name equals `name` exactly,
    /// ordered by file path then span, with 1-based contiguous ranks.
    pub fn search(&self, kind: EntityKind, name: &str) -> Vec<EntityHit<'_>> {
        self.entities
            .iter()
            .filter(|e| e.kind == kind && e.simple_name == name)
            .enumerate()
            .map(|(i, entity)| EntityHit {
                entity,
                rank: i + 1,
            })
            .collect()
    }
}

/// Default byte budget for a rendered search reply.
pub const DEFAULT_RENDER_CAP: usize = 32 * 1024;

/// Render hits as a tool reply: per hit the location header (path, span,
/// kind, qualified name), then the source. Output never exceeds
/// `max_bytes`; when hits are dropped to fit, a trailing marker says how
/// many.
pub fn render_hits(hits: &[EntityHit<'_>], max_bytes: usize) -> String {
    if hits.is_empty() {
        return "No matching entities found.".to_string();
    }
    let mut out = String::new();
    let mut shown = 0;
    for hit in hits {
        let e = hit.entity;
        let qualified = if e.qualifier.is_empty() {
            e.simple_name.clone()
        } else {
            format!("{}.{}", e.qualifier, e.simple_name)
        };
        let mut block = format!(
            "### {path}:{start}-{end} | {kind} {qualified}\n{source}",
            path = e.file_path,
            start = e.span.0,
            end = e.span.1,
            kind = e.kind,
            source = e.source,
        );
        if !block.ends_with('\n') {
            block.push('\n');
        }
        if out.len() + block.len() > max_bytes {
            if shown == 0 {
                // Even a single hit overflows: keep its head so the reply
                // is still useful.
                let keep = block
                    .char_indices()
                    .take_while(|(i, _)| *i < max_bytes)
                    .last()
                    .map(|(i, c)| i + c.len_utf8())
                    .unwrap_or(0);
                out.push_str(&block[..keep]);
                out.push_str("\n[truncated]\n");
                shown = 1;
            }
            break;
        }
        out.push_str(&block);
        shown += 1;
    }
    if shown < hits.len() {
        out.push_str(&format!(
            "[truncated: {} additional result(s) omitted]\n",
            hits.len() - shown
        ));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedEntity {
    kind: EntityKind,
    name: String,
    qualifier: String,
    path: String,
    start: usize,
    end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheDoc {
    commit: String,
    entities: Vec<CachedEntity>,
}

impl CodeGraph {
    /// Serialize the index (spans only, no source text) to a JSON document.
    pub fn save_cache(&self, path: &Path) -> Result<(), CodeGraphError> {
        let doc = CacheDoc {
            commit: self.commit_id.clone(),
            entities: self
                .entities
                .iter()
                .map(|e| CachedEntity {
                    kind: e.kind,
                    name: e.simple_name.clone(),
                    qualifier: e.qualifier.clone(),
                    path: e.file_path.clone(),
                    start: e.span.0,
                    end: e.span.1,
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&doc)
            .expect("cache document serializes");
        std::fs::write(path, json).map_err(|e| CodeGraphError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// Rebuild a graph from a cache document, re-reading source text from
    /// `repo_root`. Every span is validated against the current file
    /// contents; a file that no longer covers its span invalidates the
    /// cache.
    pub fn load_cache(path: &Path, repo_root: &Path) -> Result<Self, CodeGraphError> {
        if !repo_root.is_dir() {
            return Err(CodeGraphError::MissingRoot(repo_root.to_path_buf()));
        }
        let raw = std::fs::read_to_string(path).map_err(|e| CodeGraphError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let doc: CacheDoc = serde_json::from_str(&raw)
            .map_err(|e| CodeGraphError::CacheInvalid(e.to_string()))?;

        let mut file_texts: BTreeMap<String, String> = BTreeMap::new();
        let mut entities = Vec::with_capacity(doc.entities.len());
        for ce in doc.entities {
            if !file_texts.contains_key(&ce.path) {
                let text = std::fs::read_to_string(repo_root.join(&ce.path)).map_err(|e| {
                    CodeGraphError::CacheInvalid(format!("cannot read {}: {e}", ce.path))
                })?;
                file_texts.insert(ce.path.clone(), text);
            }
            let text = &file_texts[&ce.path];
            let source = slice_span(text, ce.start, ce.end).ok_or_else(|| {
                CodeGraphError::CacheInvalid(format!(
                    "span {}-{} out of range for {}",
                    ce.start, ce.end, ce.path
                ))
            })?;
            entities.push(CodeEntity {
                kind: ce.kind,
                simple_name: ce.name,
                qualifier: ce.qualifier,
                file_path: ce.path,
                span: (ce.start, ce.end),
                source,
            });
        }
        entities.sort_by(|a, b| {
            (&a.file_path, a.span.0, a.span.1, &a.simple_name)
                .cmp(&(&b.file_path, b.span.0, b.span.1, &b.simple_name))
        });

        Ok(CodeGraph {
            repo_root: repo_root.to_path_buf(),
            commit_id: doc.commit,
            entities,
            build_warnings: Vec::new(),
        })
    }
}
