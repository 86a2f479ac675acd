//! Prompt assembly from file-level dependencies, token-level dependencies,
//! retrieved snippets, and the in-file prefix.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analyzer::{extract_imports, valid_identifiers_or_fallback, SourceFile, ValidTokenSet};
use crate::config::StrategyConfig;
use crate::lm::{LanguageModel, LmError, TokenId};
use crate::repo_index::SymbolIndex;
use crate::retriever::{query_for_prefix, retrieve, Exclusion, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegmentKind {
    FileDeps,
    TokenDeps,
    Retrieved,
    InFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
    pub ids: Vec<TokenId>,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub segments: Vec<Segment>,
    pub total_tokens: usize,
}

impl PromptBundle {
    pub fn ids(&self) -> Vec<TokenId> {
        self.segments.iter().flat_map(|s| s.ids.iter().copied()).collect()
    }

    pub fn text(&self) -> String {
        self.segments.iter().map(|s| s.text.as_str()).collect()
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == kind)
    }
}

/// Wall-clock spent on analysis and retrieval while assembling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyTiming {
    pub analysis_s: f64,
    pub retrieval_s: f64,
}

/// Hierarchical outline of each resolvable import, in import order.
/// Unresolvable and repeated imports are skipped.
pub fn render_file_deps(imports: &[String], index: &SymbolIndex) -> String {
    let mut seen = Vec::new();
    let mut blocks = Vec::new();
    for qname in imports {
        if seen.contains(&qname) {
            continue;
        }
        seen.push(qname);
        let Ok(class) = index.resolve_import(qname) else {
            continue;
        };
        let package = qname.rsplit_once('.').map_or("", |(p, _)| p);
        let mut lines = vec![format!("// module {package}"), format!("// {}", class.signature)];
        lines.extend(class.field_names.iter().map(|f| format!("//   field {f}")));
        lines.extend(class.methods.iter().map(|m| format!("//   {}", m.rendered)));
        blocks.push(lines.join("\n"));
    }
    blocks.join("\n")
}

pub fn render_token_deps(valid: &ValidTokenSet) -> String {
    render_identifiers(&valid.identifiers().collect::<Vec<_>>())
}

fn render_identifiers(idents: &[&str]) -> String {
    if idents.is_empty() {
        "// valid identifiers here:".into()
    } else {
        format!("// valid identifiers here: {}", idents.join(", "))
    }
}

fn segment(kind: SegmentKind, text: String, lm: &dyn LanguageModel) -> Result<Segment, LmError> {
    let ids = lm.encode(&text)?;
    Ok(Segment {
        kind,
        token_count: ids.len(),
        text,
        ids,
    })
}

/// A cross-file segment: `body` plus a newline, cut to its first `budget`
/// tokens.
fn head_segment(kind: SegmentKind, body: &str, budget: usize, lm: &dyn LanguageModel) -> Result<Segment, LmError> {
    let mut ids = lm.encode(&format!("{body}\n"))?;
    ids.truncate(budget);
    let text = lm.decode(&ids)?;
    Ok(Segment {
        kind,
        token_count: ids.len(),
        text,
        ids,
    })
}

/// Token-level segment keeping the longest identifier prefix that fits.
fn token_deps_segment(valid: &ValidTokenSet, budget: usize, lm: &dyn LanguageModel) -> Result<Segment, LmError> {
    let idents: Vec<&str> = valid.identifiers().collect();
    let fits = |n: usize| -> Result<bool, LmError> {
        Ok(lm.encode(&format!("{}\n", render_identifiers(&idents[..n])))?.len() <= budget)
    };
    let (mut lo, mut hi) = (0, idents.len());
    if !fits(0)? {
        return Ok(Segment {
            kind: SegmentKind::TokenDeps,
            text: String::new(),
            ids: Vec::new(),
            token_count: 0,
        });
    }
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    segment(SegmentKind::TokenDeps, format!("{}\n", render_identifiers(&idents[..lo])), lm)
}

fn retrieved_text(hits: &[(&Window, f64)]) -> String {
    let mut lines = Vec::new();
    for (w, _) in hits {
        lines.push(format!("// retrieved from {}:{}-{}", w.path, w.start_line, w.end_line));
        lines.extend(w.text.lines().map(|l| format!("// {l}")));
    }
    lines.join("\n")
}

/// Build the prompt for completing at the end of `prefix` in file `path`.
///
/// Segments appear in the order file deps, token deps, retrieved, in-file;
/// only enabled ones are present. The in-file prefix keeps its rightmost
/// `in_file_tokens` tokens and each other segment its first
/// `per_crossfile_tokens`.
pub fn assemble(
    path: &str,
    prefix: &str,
    config: &StrategyConfig,
    index: &SymbolIndex,
    windows: &[Window],
    lm: &dyn LanguageModel,
) -> Result<(PromptBundle, AssemblyTiming), LmError> {
    let mut timing = AssemblyTiming::default();
    let mut segments = Vec::new();
    let file = SourceFile::new(path, prefix);
    let budget = config.per_crossfile_tokens;
    if config.prompt_f {
        let t = Instant::now();
        let imports = extract_imports(&file).unwrap_or_default();
        let text = render_file_deps(&imports, index);
        timing.analysis_s += t.elapsed().as_secs_f64();
        if !text.is_empty() {
            segments.push(head_segment(SegmentKind::FileDeps, &text, budget, lm)?);
        }
    }
    if config.prompt_t {
        let t = Instant::now();
        let valid = valid_identifiers_or_fallback(&file, prefix.len(), index).unwrap_or_default();
        timing.analysis_s += t.elapsed().as_secs_f64();
        segments.push(token_deps_segment(&valid, budget, lm)?);
    }
    if config.rag {
        let t = Instant::now();
        let (query, start_line) = query_for_prefix(prefix);
        let exclude = Exclusion {
            path: path.to_string(),
            start_line,
            end_line: usize::MAX,
        };
        let hits = retrieve(windows, &query, config.retrieved_k, Some(&exclude));
        let text = retrieved_text(&hits);
        timing.retrieval_s += t.elapsed().as_secs_f64();
        if !text.is_empty() {
            segments.push(head_segment(SegmentKind::Retrieved, &text, budget, lm)?);
        }
    }
    let mut ids = lm.encode(prefix)?;
    let cut = ids.len().saturating_sub(config.in_file_tokens);
    ids.drain(..cut);
    segments.push(Segment {
        kind: SegmentKind::InFile,
        text: lm.decode(&ids)?,
        token_count: ids.len(),
        ids,
    });
    segments.retain(|s| s.kind == SegmentKind::InFile || s.token_count > 0);
    let total_tokens = segments.iter().map(|s| s.token_count).sum();
    Ok((PromptBundle { segments, total_tokens }, timing))
}
