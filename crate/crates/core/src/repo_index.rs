//! Repository snapshots and the precomputed cross-file symbol index.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::lexer::Lexer;
use crate::analyzer::parser::parse;
use crate::analyzer::{summarize, ClassSummary, Diagnostic, SourceFile};

pub const SOURCE_EXTENSION: &str = "sub";
pub const MANIFEST_FILE: &str = "repo.json";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("repository contains no source files")]
    EmptyRepository,
    #[error("class `{qname}` is declared in both `{first}` and `{second}`")]
    DuplicateSymbol {
        qname: String,
        first: String,
        second: String,
    },
    #[error("unknown import `{qname}`{}", .diagnostic.as_ref().map(|d| format!(" ({d})")).unwrap_or_default())]
    UnknownImport {
        qname: String,
        diagnostic: Option<String>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoManifest {
    pub name: String,
    pub language: String,
}

/// An in-memory copy of a repository's source files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoSnapshot {
    pub root: PathBuf,
    pub name: String,
    files: Vec<SourceFile>,
}

impl RepoSnapshot {
    /// Build from files; paths are deduplicated (last wins) and sorted.
    pub fn new(root: impl Into<PathBuf>, name: impl Into<String>, files: Vec<SourceFile>) -> Self {
        let mut by_path: BTreeMap<String, SourceFile> = BTreeMap::new();
        for f in files {
            by_path.insert(f.path.clone(), f);
        }
        Self {
            root: root.into(),
            name: name.into(),
            files: by_path.into_values().collect(),
        }
    }

    /// Load every `.sub` file under `root`, plus `repo.json` when present.
    pub fn load(root: &Path) -> Result<Self, IndexError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| IndexError::Io { path, source }
        };
        let manifest_path = root.join(MANIFEST_FILE);
        let name = if manifest_path.is_file() {
            let text = fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
            let m: RepoManifest = serde_json::from_str(&text).map_err(|source| IndexError::Manifest {
                path: manifest_path.clone(),
                source,
            })?;
            m.name
        } else {
            root.file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("repo")
                .to_string()
        };
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).map_err(io(&dir))? {
                let entry = entry.map_err(io(&dir))?;
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.extension().is_some_and(|e| e == SOURCE_EXTENSION) {
                    let text = fs::read_to_string(&path).map_err(io(&path))?;
                    let rel = path
                        .strip_prefix(root)
                        .unwrap_or(&path)
                        .components()
                        .map(|c| c.as_os_str().to_string_lossy().into_owned())
                        .collect::<Vec<_>>()
                        .join("/");
                    files.push(SourceFile::new(rel, text));
                }
            }
        }
        Ok(Self::new(root, name, files))
    }

    /// Write files and manifest under `root`.
    pub fn write_to(&self, root: &Path) -> std::io::Result<()> {
        fs::create_dir_all(root)?;
        let manifest = RepoManifest {
            name: self.name.clone(),
            language: "subjectlang".into(),
        };
        fs::write(
            root.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
        )?;
        for f in &self.files {
            let path = root.join(&f.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, &f.text)?;
        }
        Ok(())
    }

    pub fn files(&self) -> &[SourceFile] {
        &self.files
    }

    pub fn file(&self, path: &str) -> Option<&SourceFile> {
        self.files
            .binary_search_by(|f| f.path.as_str().cmp(path))
            .ok()
            .map(|i| &self.files[i])
    }
}

/// Per-file parse outcome kept alongside the index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileReport {
    pub path: String,
    pub package: Option<String>,
    /// Header failed to parse; nothing from this file is indexed.
    pub skipped: bool,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolIndex {
    modules: BTreeMap<String, ClassSummary>,
    file_of: BTreeMap<String, String>,
    reports: Vec<FileReport>,
    /// Offline build cost; not part of the serialized index.
    #[serde(skip)]
    pub build_time_s: f64,
}

struct ParsedFile {
    report: FileReport,
    classes: Vec<ClassSummary>,
}

fn parse_for_index(file: &SourceFile) -> ParsedFile {
    let mut tokens = Vec::new();
    let mut diagnostics = Vec::new();
    for tok in Lexer::new(&file.text) {
        match tok {
            Ok(t) => tokens.push(t),
            Err(e) => {
                diagnostics.push(Diagnostic {
                    position: e.offset,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let out = parse(&tokens, file.text.len());
    diagnostics.extend(out.diagnostics.iter().map(|e| Diagnostic {
        position: e.offset,
        message: e.to_string(),
    }));
    let skipped = out.header_error.is_some();
    let classes = if skipped {
        Vec::new()
    } else {
        summarize(&out.ast, &file.path, false)
            .map(|m| m.classes)
            .unwrap_or_default()
    };
    ParsedFile {
        report: FileReport {
            path: file.path.clone(),
            package: out.ast.package.clone(),
            skipped,
            diagnostics,
        },
        classes,
    }
}

fn qualify(package: Option<&str>, name: &str) -> String {
    match package {
        Some(p) if !p.is_empty() => format!("{p}.{name}"),
        _ => name.to_string(),
    }
}

/// Parse every file (in parallel) and index all recoverable class declarations.
pub fn build_index(repo: &RepoSnapshot) -> Result<SymbolIndex, IndexError> {
    if repo.files().is_empty() {
        return Err(IndexError::EmptyRepository);
    }
    let started = Instant::now();
    let parsed: Vec<ParsedFile> = repo.files().par_iter().map(parse_for_index).collect();

    let mut modules = BTreeMap::new();
    let mut file_of: BTreeMap<String, String> = BTreeMap::new();
    let mut reports = Vec::with_capacity(parsed.len());
    for p in parsed {
        for class in p.classes {
            let qname = qualify(p.report.package.as_deref(), &class.name);
            if let Some(first) = file_of.get(&qname) {
                return Err(IndexError::DuplicateSymbol {
                    qname,
                    first: first.clone(),
                    second: p.report.path.clone(),
                });
            }
            file_of.insert(qname.clone(), p.report.path.clone());
            modules.insert(qname, class);
        }
        reports.push(p.report);
    }
    Ok(SymbolIndex {
        modules,
        file_of,
        reports,
        build_time_s: started.elapsed().as_secs_f64(),
    })
}

impl SymbolIndex {
    /// Summary for an imported qualified class name.
    pub fn resolve_import(&self, qname: &str) -> Result<&ClassSummary, IndexError> {
        if let Some(c) = self.modules.get(qname) {
            return Ok(c);
        }
        // A file that would have declared `qname` but failed to yield it.
        let diagnostic = self
            .reports
            .iter()
            .filter(|r| !r.diagnostics.is_empty())
            .find(|r| {
                let stem = Path::new(&r.path)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default();
                qualify(r.package.as_deref(), stem) == qname
            })
            .map(|r| format!("{}: {}", r.path, r.diagnostics[0].message));
        Err(IndexError::UnknownImport {
            qname: qname.to_string(),
            diagnostic,
        })
    }

    pub fn get(&self, qname: &str) -> Option<&ClassSummary> {
        self.modules.get(qname)
    }

    pub fn file_of(&self, qname: &str) -> Option<&str> {
        self.file_of.get(qname).map(String::as_str)
    }

    /// `(qualified name, summary)` pairs in name order.
    pub fn classes(&self) -> impl Iterator<Item = (&str, &ClassSummary)> {
        self.modules.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn reports(&self) -> &[FileReport] {
        &self.reports
    }

    pub fn skipped(&self) -> impl Iterator<Item = &FileReport> {
        self.reports.iter().filter(|r| r.skipped)
    }

    /// Every member name of every indexed class, sorted and deduplicated.
    pub fn all_member_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .modules
            .values()
            .flat_map(|c| c.member_names().into_iter().map(str::to_string))
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("index serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
