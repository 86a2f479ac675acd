//! Pick the first beam candidate that passes static checking.

use serde::{Deserialize, Serialize};

use crate::analyzer::{check_line, Position, SourceFile, StaticCheckReport};
use crate::decoder::Candidate;
use crate::repo_index::SymbolIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Index into the candidate list.
    pub chosen: usize,
    /// One report per candidate, in rank order.
    pub reports: Vec<StaticCheckReport>,
}

impl Selection {
    pub fn any_passed(&self) -> bool {
        self.reports.iter().any(|r| r.passed)
    }

    pub fn chosen_passed(&self) -> bool {
        self.reports[self.chosen].passed
    }
}

/// First candidate whose report passes, else the top-ranked one.
pub fn select_with(candidates: &[Candidate], mut check: impl FnMut(&str) -> StaticCheckReport) -> Selection {
    assert!(!candidates.is_empty(), "no candidates to select from");
    let reports: Vec<StaticCheckReport> = candidates.iter().map(|c| check(&c.text)).collect();
    let chosen = reports.iter().position(|r| r.passed).unwrap_or(0);
    Selection { chosen, reports }
}

/// Check each candidate line spliced into `file` at `cursor`.
pub fn select(candidates: &[Candidate], file: &SourceFile, cursor: Position, index: &SymbolIndex) -> Selection {
    select_with(candidates, |line| check_line(file, cursor, line, index))
}
