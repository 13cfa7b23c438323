//! Python source analysis: syntax validation and definition extraction,
//! both backed by the tree-sitter Python grammar.

use serde::{Deserialize, Serialize};

fn parse(source: &str) -> Option<tree_sitter::Tree> {
    let mut parser = tree_sitter::Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .expect("python grammar is compatible with the linked tree-sitter");
    parser.parse(source, None)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxIssue {
    /// 1-based line of the offending node.
    pub line: usize,
    /// 1-based column.
    pub column: usize,
    pub message: String,
}

impl std::fmt::Display for SyntaxIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

/// Check whether `source` parses as valid Python. Returns every region the
/// parser flags, so an empty result means the file is syntactically clean.
pub fn check_syntax(source: &str) -> Vec<SyntaxIssue> {
    let Some(tree) = parse(source) else {
        return vec![SyntaxIssue {
            line: 1,
            column: 1,
            message: "parser produced no tree".to_string(),
        }];
    };
    let root = tree.root_node();
    if !root.has_error() {
        return Vec::new();
    }

    let mut issues = Vec::new();
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if node.is_error() {
            let pos = node.start_position();
            issues.push(SyntaxIssue {
                line: pos.row + 1,
                column: pos.column + 1,
                message: "invalid syntax".to_string(),
            });
            continue;
        }
        if node.is_missing() {
            let pos = node.start_position();
            issues.push(SyntaxIssue {
                line: pos.row + 1,
                column: pos.column + 1,
                message: format!("missing {}", node.kind()),
            });
            continue;
        }
        if node.has_error() {
            for i in (0..node.child_count()).rev() {
                stack.push(node.child(i).expect("child index in range"));
            }
        }
    }
    // A tree can carry the error flag without an ERROR or missing node in
    // reachable children; report something rather than nothing.
    if issues.is_empty() {
        issues.push(SyntaxIssue {
            line: 1,
            column: 1,
            message: "invalid syntax".to_string(),
        });
    }
    issues.sort_by_key(|i| (i.line, i.column));
    issues
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Function,
    Class,
    ClassMethod,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Function => "function",
            EntityKind::Class => "class",
            EntityKind::ClassMethod => "class_method",
        }
    }
}

impl std::fmt::Display for EntityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "function" => Ok(EntityKind::Function),
            "class" => Ok(EntityKind::Class),
            "class_method" => Ok(EntityKind::ClassMethod),
            other => Err(format!(
                "unknown entity kind {other:?}, expected function, class, or class_method"
            )),
        }
    }
}

/// A named definition found in one file. Lines are 1-based and inclusive;
/// decorators count as part of the definition they decorate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntity {
    pub kind: EntityKind,
    pub name: String,
    /// Dotted path of enclosing definitions, e.g. `Outer.Inner` for a
    /// method of a nested class. `None` at module level.
    pub qualifier: Option<String>,
    pub start_line: usize,
    pub end_line: usize,
}

/// Extract every function, class, and method definition from `source`.
/// Files with syntax errors still yield whatever definitions the parser
/// could recover.
pub fn extract_entities(source: &str) -> Vec<FileEntity> {
    let Some(tree) = parse(source) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut scope: Vec<(String, bool)> = Vec::new();
    collect(tree.root_node(), source.as_bytes(), &mut scope, None, &mut out);
    out
}

fn node_name(node: tree_sitter::Node, src: &[u8]) -> Option<String> {
    let name = node.child_by_field_name("name")?;
    name.utf8_text(src).ok().map(|s| s.to_string())
}

fn collect(
    node: tree_sitter::Node,
    src: &[u8],
    scope: &mut Vec<(String, bool)>,
    span_override: Option<(usize, usize)>,
    out: &mut Vec<FileEntity>,
) {
    match node.kind() {
        "decorated_definition" => {
            let span = (node.start_position().row + 1, node.end_position().row + 1);
            if let Some(def) = node.child_by_field_name("definition") {
                collect(def, src, scope, Some(span), out);
            }
        }
        "function_definition" | "class_definition" => {
            let Some(name) = node_name(node, src) else { return };
            let is_class = node.kind() == "class_definition";
            let kind = if is_class {
                EntityKind::Class
            } else if scope.last().is_some_and(|(_, c)| *c) {
                EntityKind::ClassMethod
            } else {
                EntityKind::Function
            };
            let (start_line, end_line) = span_override
                .unwrap_or((node.start_position().row + 1, node.end_position().row + 1));
            let qualifier = if scope.is_empty() {
                None
            } else {
                Some(
                    scope
                        .iter()
                        .map(|(n, _)| n.as_str())
                        .collect::<Vec<_>>()
                        .join("."),
                )
            };
            out.push(FileEntity {
                kind,
                name: name.clone(),
                qualifier,
                start_line,
                end_line,
            });
            scope.push((name, is_class));
            if let Some(body) = node.child_by_field_name("body") {
                descend(body, src, scope, out);
            }
            scope.pop();
        }
        _ => descend(node, src, scope, out),
    }
}

fn descend(
    node: tree_sitter::Node,
    src: &[u8],
    scope: &mut Vec<(String, bool)>,
    out: &mut Vec<FileEntity>,
) {
    let mut cursor = node.walk();
    let children: Vec<_> = node.children(&mut cursor).collect();
    for child in children {
        collect(child, src, scope, None, out);
    }
}
