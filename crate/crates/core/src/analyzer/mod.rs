//! Static analysis for the subject language: parsing, declaration
//! summaries, scope queries at a cursor, and candidate-line checking.
//!
//! The subject language is a small Java-like language:
//!
//! ```text
//! file       := packageDecl importDecl* classDecl+
//! classDecl  := "class" IDENT "{" member* "}"
//! member     := type IDENT ";" | type IDENT "(" paramList? ")" block
//! stmt       := type IDENT "=" expr ";" | expr ";" | "return" expr? ";"
//! expr       := primary ("." IDENT callArgs?)*
//! ```

pub mod ast;
mod check;
pub mod lexer;
pub mod parser;
mod scope;
mod summary;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::check_line;
pub use scope::{valid_identifiers_at, valid_identifiers_or_fallback};
pub use summary::{extract_imports, parse_file, parse_method_signature, summarize};

/// Byte offset into a source text.
pub type Position = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at offset {offset}: expected {expected}, found {found}")]
pub struct SyntaxError {
    pub offset: Position,
    pub expected: String,
    pub found: String,
    /// The error was caused by running out of input.
    pub at_end: bool,
}

impl SyntaxError {
    pub fn new(offset: Position, expected: impl Into<String>, found: impl Into<String>) -> Self {
        Self {
            offset,
            expected: expected.into(),
            found: found.into(),
            at_end: false,
        }
    }

    pub fn at_end(offset: Position, expected: impl Into<String>) -> Self {
        Self {
            offset,
            expected: expected.into(),
            found: "end of input".into(),
            at_end: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyzerError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("class `{0}` declared twice in one module")]
    DuplicateClass(String),
    #[error("method `{name}` declared twice with {arity} parameters in class `{class}`")]
    DuplicateMethod {
        class: String,
        name: String,
        arity: usize,
    },
    #[error("cannot determine the type of receiver `{0}`")]
    UnresolvedReceiver(String),
}

/// A file of the repository under analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub text: String,
    line_starts: Vec<usize>,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let line_starts = std::iter::once(0)
            .chain(text.match_indices('\n').map(|(i, _)| i + 1))
            .collect();
        Self {
            path: path.into(),
            text,
            line_starts,
        }
    }

    pub fn line_starts(&self) -> &[usize] {
        &self.line_starts
    }

    pub fn line_count(&self) -> usize {
        self.line_starts.len()
    }

    /// Offset of 0-based `(line, col)`, where `col` is a byte column.
    pub fn offset_of(&self, line: usize, col: usize) -> Option<Position> {
        let start = *self.line_starts.get(line)?;
        let end = self
            .line_starts
            .get(line + 1)
            .map_or(self.text.len(), |&s| s - 1);
        (start + col <= end).then_some(start + col)
    }

    pub fn line_col(&self, offset: Position) -> (usize, usize) {
        let line = self.line_starts.partition_point(|&s| s <= offset) - 1;
        (line, offset - self.line_starts[line])
    }

    /// Text of the 0-based line without its newline.
    pub fn line(&self, line: usize) -> Option<&str> {
        let start = *self.line_starts.get(line)?;
        let end = self
            .line_starts
            .get(line + 1)
            .map_or(self.text.len(), |&s| s - 1);
        Some(&self.text[start..end])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSignature {
    pub name: String,
    pub return_type: String,
    pub params: Vec<(String, String)>,
    pub rendered: String,
}

impl MethodSignature {
    pub fn new(name: &str, return_type: &str, params: Vec<(String, String)>) -> Self {
        let rendered = format!(
            "{return_type} {name}({})",
            params
                .iter()
                .map(|(n, t)| format!("{t} {n}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
        Self {
            name: name.to_string(),
            return_type: return_type.to_string(),
            params,
            rendered,
        }
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub name: String,
    pub signature: String,
    pub field_names: Vec<String>,
    pub field_types: Vec<String>,
    pub methods: Vec<MethodSignature>,
}

impl ClassSummary {
    pub fn field_type(&self, name: &str) -> Option<&str> {
        self.field_names
            .iter()
            .position(|f| f == name)
            .map(|i| self.field_types[i].as_str())
    }

    pub fn methods_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a MethodSignature> {
        self.methods.iter().filter(move |m| m.name == name)
    }

    /// Field and method names, deduplicated, in declaration order.
    pub fn member_names(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for n in self
            .field_names
            .iter()
            .chain(self.methods.iter().map(|m| &m.name))
        {
            if !out.contains(&n.as_str()) {
                out.push(n);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleSummary {
    pub module_id: String,
    pub package: String,
    pub classes: Vec<ClassSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Local,
    Param,
    Field,
    ImportedClass,
    MemberOfReceiver,
    /// Added by a perturbation, not by analysis.
    Injected,
}

/// Identifiers legal at a position, each tagged with where it came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidTokenSet {
    entries: BTreeMap<String, Provenance>,
}

impl ValidTokenSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or overwrite. Non-identifiers are ignored.
    pub fn insert(&mut self, ident: &str, provenance: Provenance) -> bool {
        if !lexer::is_identifier(ident) {
            return false;
        }
        self.entries.insert(ident.to_string(), provenance);
        true
    }

    pub fn contains(&self, ident: &str) -> bool {
        self.entries.contains_key(ident)
    }

    pub fn provenance(&self, ident: &str) -> Option<Provenance> {
        self.entries.get(ident).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Identifiers in ascending order.
    pub fn identifiers(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Provenance)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn remove(&mut self, ident: &str) -> Option<Provenance> {
        self.entries.remove(ident)
    }
}

impl FromIterator<(String, Provenance)> for ValidTokenSet {
    fn from_iter<I: IntoIterator<Item = (String, Provenance)>>(iter: I) -> Self {
        let mut set = ValidTokenSet::new();
        for (k, v) in iter {
            set.insert(&k, v);
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub position: Position,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.position, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticCheckReport {
    pub passed: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl StaticCheckReport {
    pub fn from_diagnostics(diagnostics: Vec<Diagnostic>) -> Self {
        Self {
            passed: diagnostics.is_empty(),
            diagnostics,
        }
    }
}
