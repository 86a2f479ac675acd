//! Sliding-window snippet store and lexical top-k retrieval.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::analyzer::lexer::{Lexer, TokenKind};
use crate::repo_index::RepoSnapshot;

pub const WINDOW_LINES: usize = 20;
pub const WINDOW_STRIDE: usize = 10;

pub type TokenSet = BTreeSet<String>;

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub path: String,
    /// 0-based, inclusive.
    pub start_line: usize,
    pub end_line: usize,
    pub text: String,
    pub token_set: TokenSet,
}

/// A line range of one file that retrieval must not return.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub path: String,
    pub start_line: usize,
    pub end_line: usize,
}

impl Exclusion {
    fn overlaps(&self, w: &Window) -> bool {
        w.path == self.path && w.start_line <= self.end_line && self.start_line <= w.end_line
    }
}

/// Lowercased lexer tokens with punctuation dropped. Lexing stops at the first
/// character the lexer rejects.
pub fn token_set(text: &str) -> TokenSet {
    Lexer::new(text)
        .map_while(Result::ok)
        .filter(|t| !matches!(t.kind, TokenKind::Punct(_)))
        .map(|t| text[t.start..t.end].to_lowercase())
        .collect()
}

/// `(start, end)` inclusive line ranges for a file of `n_lines` lines.
pub fn window_ranges(n_lines: usize) -> Vec<(usize, usize)> {
    (0..n_lines)
        .step_by(WINDOW_STRIDE)
        .map(|s| (s, (s + WINDOW_LINES).min(n_lines) - 1))
        .collect()
}

pub fn build_windows(repo: &RepoSnapshot) -> Vec<Window> {
    let mut out = Vec::new();
    for file in repo.files() {
        let lines: Vec<&str> = file.text.lines().collect();
        for (start, end) in window_ranges(lines.len()) {
            let text = lines[start..=end].join("\n");
            out.push(Window {
                path: file.path.clone(),
                start_line: start,
                end_line: end,
                token_set: token_set(&text),
                text,
            });
        }
    }
    out
}

pub fn jaccard(a: &TokenSet, b: &TokenSet) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Query for a cursor: the token set of the last up to 20 prefix lines, and
/// the 0-based line where those lines begin.
pub fn query_for_prefix(prefix: &str) -> (TokenSet, usize) {
    let starts: Vec<usize> = std::iter::once(0)
        .chain(prefix.match_indices('\n').map(|(i, _)| i + 1))
        .collect();
    let first = starts.len().saturating_sub(WINDOW_LINES);
    (token_set(&prefix[starts[first]..]), first)
}

/// Top-`k` windows by descending Jaccard similarity, ties by `(path,
/// start_line)`. Windows overlapping `exclude` are never returned.
pub fn retrieve<'w>(
    windows: &'w [Window],
    query: &TokenSet,
    k: usize,
    exclude: Option<&Exclusion>,
) -> Vec<(&'w Window, f64)> {
    let mut scored: Vec<(&Window, f64)> = windows
        .iter()
        .filter(|w| !exclude.is_some_and(|e| e.overlaps(w)))
        .map(|w| (w, jaccard(&w.token_set, query)))
        .collect();
    scored.sort_by(|(wa, sa), (wb, sb)| {
        rank_order((*sa, &wa.path, wa.start_line), (*sb, &wb.path, wb.start_line))
    });
    scored.truncate(k);
    scored
}

/// Compare two `(similarity, path, start_line)` keys in ranking order.
pub fn rank_order(a: (f64, &str, usize), b: (f64, &str, usize)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.cmp(b.1))
        .then_with(|| a.2.cmp(&b.2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::SourceFile;

    fn set(items: &[&str]) -> TokenSet {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_ranges(25), vec![(0, 19), (10, 24), (20, 24)]);
        assert_eq!(window_ranges(5), vec![(0, 4)]);
        assert!(window_ranges(0).is_empty());
    }

    #[test]
    fn windows_over_files() {
        let text: String = (0..25).map(|i| format!("int v{i};\n")).collect();
        let repo = RepoSnapshot::new(
            "/r",
            "r",
            vec![SourceFile::new("a.sub", text), SourceFile::new("b.sub", "")],
        );
        let ws = build_windows(&repo);
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[1].text.lines().next(), Some("int v10;"));
        assert!(ws[2].token_set.contains("v24"));
        assert!(!ws[2].token_set.contains(";"));
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&set(&["a", "b", "c"]), &set(&["b", "c", "d"])), 0.5);
        assert_eq!(jaccard(&set(&["a"]), &set(&["a"])), 1.0);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn tokens_are_lowercased() {
        assert_eq!(token_set("Codec c = x.Flush();"), set(&["codec", "c", "x", "flush"]));
    }

    fn window(path: &str, start: usize, toks: &[&str]) -> Window {
        Window {
            path: path.into(),
            start_line: start,
            end_line: start + 19,
            text: String::new(),
            token_set: set(toks),
        }
    }

    #[test]
    fn ranking_ties_and_exclusion() {
        let ws = vec![
            window("b.sub", 0, &["x", "y"]),
            window("a.sub", 10, &["x", "y"]),
            window("a.sub", 0, &["x"]),
            window("c.sub", 0, &["q"]),
        ];
        let q = set(&["x", "y"]);
        let got: Vec<_> = retrieve(&ws, &q, 2, None)
            .into_iter()
            .map(|(w, _)| (w.path.as_str(), w.start_line))
            .collect();
        assert_eq!(got, vec![("a.sub", 10), ("b.sub", 0)]);
        let ex = Exclusion {
            path: "a.sub".into(),
            start_line: 25,
            end_line: 40,
        };
        let got = retrieve(&ws, &q, 3, Some(&ex));
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|(w, _)| !(w.path == "a.sub" && w.start_line == 10)));
    }

    #[test]
    fn query_uses_last_twenty_lines() {
        let prefix: String = (0..30).map(|i| format!("w{i}\n")).collect::<String>() + "tail.";
        let (q, start) = query_for_prefix(&prefix);
        assert_eq!(start, 11);
        assert!(q.contains("tail") && q.contains("w11") && !q.contains("w10"));
    }
}
