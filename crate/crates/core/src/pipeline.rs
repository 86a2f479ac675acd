//! One completion end to end: prompt assembly, decoding, post-processing.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{valid_identifiers_or_fallback, SourceFile, ValidTokenSet};
use crate::config::StrategyConfig;
use crate::corpusgen::{training_texts, CompletionTask};
use crate::decoder::{beam_search, generate, perturb_valid_set, Candidate, DecodeConfig, DecodeError, DecodeTrace, MaskProvider};
use crate::lm::{train_ngram, LanguageModel, LmError, TokenId};
use crate::postprocess::{select, Selection};
use crate::prompt::{assemble, PromptBundle};
use crate::repo_index::{build_index, IndexError, RepoSnapshot, SymbolIndex};
use crate::retriever::{build_windows, Window};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("prompt is empty")]
    EmptyPrompt,
}

/// Everything a completion needs about one repository.
pub struct RepoContext {
    pub snapshot: RepoSnapshot,
    pub index: SymbolIndex,
    pub windows: Vec<Window>,
    pub model: Arc<dyn LanguageModel>,
    /// Noise pool for perturbed analysis: every member name in the index.
    pub member_names: Vec<String>,
}

impl RepoContext {
    pub fn new(snapshot: RepoSnapshot, index: SymbolIndex, model: Arc<dyn LanguageModel>) -> Self {
        let windows = build_windows(&snapshot);
        let member_names = index.all_member_names();
        Self {
            snapshot,
            index,
            windows,
            model,
            member_names,
        }
    }

    /// Index `snapshot` and train an n-gram model on its files, leaving out
    /// the ground-truth lines of unseen tasks.
    pub fn with_ngram(snapshot: RepoSnapshot, tasks: &[CompletionTask]) -> Result<Self, PipelineError> {
        let index = build_index(&snapshot)?;
        let texts = training_texts(&snapshot, tasks);
        let model = train_ngram(&texts, crate::lm::ngram::DEFAULT_ORDER, crate::lm::ngram::DEFAULT_ALPHA)?;
        Ok(Self::new(snapshot, index, Arc::new(model)))
    }
}

/// Emulated analysis imprecision applied to decode-time masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub drop_rate: f64,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Perturbation {
    /// Seed for one trigger step, independent of evaluation order.
    pub fn step_seed(&self, task_id: &str, step: usize) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let bytes = self
            .seed
            .to_le_bytes()
            .into_iter()
            .chain(task_id.bytes())
            .chain((step as u64).to_le_bytes());
        for b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn apply(&self, valid: &ValidTokenSet, pool: &[String], task_id: &str, step: usize) -> ValidTokenSet {
        perturb_valid_set(valid, self.drop_rate, self.noise_rate, pool, self.step_seed(task_id, step))
    }
}

/// Wall-clock seconds per phase. The phases are disjoint, so their sum is
/// at most `total_s`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub retrieval_s: f64,
    pub analysis_s: f64,
    pub inference_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone)]
pub struct CompletionOutcome {
    pub prediction: String,
    pub bundle: PromptBundle,
    /// Beam candidates when post-processing ran, else the single greedy one.
    pub candidates: Vec<Candidate>,
    pub selection: Option<Selection>,
    pub trace: DecodeTrace,
    pub timing: PhaseTiming,
}

/// Complete the line at the end of `prefix` in `path`.
pub fn complete_prefix(
    task_id: &str,
    path: &str,
    prefix: &str,
    repo: &RepoContext,
    config: &StrategyConfig,
    perturb: Option<&Perturbation>,
) -> Result<CompletionOutcome, PipelineError> {
    let start = Instant::now();
    let lm = repo.model.as_ref();
    let (bundle, assembly) = assemble(path, prefix, config, &repo.index, &repo.windows, lm)?;
    let prompt_ids = bundle.ids();
    if prompt_ids.is_empty() {
        return Err(PipelineError::EmptyPrompt);
    }
    let decode_cfg = DecodeConfig {
        max_new_tokens: config.max_new_tokens,
        beam_width: config.beam_width,
    };
    let file = SourceFile::new(path, prefix);

    let mut provider = |generated: &[TokenId]| -> Option<ValidTokenSet> {
        let text = format!("{prefix}{}", lm.decode(generated).ok()?);
        let spliced = SourceFile::new(path, text.as_str());
        let valid = valid_identifiers_or_fallback(&spliced, text.len(), &repo.index).ok()?;
        Some(match perturb {
            Some(p) => p.apply(&valid, &repo.member_names, task_id, generated.len()),
            None => valid,
        })
    };
    let provider: Option<&mut MaskProvider<'_>> = if config.decode { Some(&mut provider) } else { None };

    let (candidates, trace, selection, post_s) = if config.post {
        let (candidates, trace) = beam_search(lm, &prompt_ids, &decode_cfg, provider)?;
        let t = Instant::now();
        let selection = select(&candidates, &file, prefix.len(), &repo.index);
        (candidates, trace, Some(selection), t.elapsed().as_secs_f64())
    } else {
        let (candidate, trace) = generate(lm, &prompt_ids, &decode_cfg, provider)?;
        (vec![candidate], trace, None, 0.0)
    };
    let chosen = selection.as_ref().map_or(0, |s| s.chosen);
    let prediction = candidates[chosen].text.clone();
    let timing = PhaseTiming {
        retrieval_s: assembly.retrieval_s,
        analysis_s: assembly.analysis_s + trace.analysis_s + post_s,
        inference_s: trace.inference_s,
        total_s: start.elapsed().as_secs_f64(),
    };
    Ok(CompletionOutcome {
        prediction,
        bundle,
        candidates,
        selection,
        trace,
        timing,
    })
}

pub fn complete(
    task: &CompletionTask,
    repo: &RepoContext,
    config: &StrategyConfig,
    perturb: Option<&Perturbation>,
) -> Result<CompletionOutcome, PipelineError> {
    complete_prefix(&task.task_id, &task.file, &task.prompt, repo, config, perturb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::lexer::lex_prefix;
    use crate::corpusgen::{generate as gen_corpus, GenConfig};

    fn corpus() -> (Vec<RepoContext>, Vec<CompletionTask>) {
        let c = gen_corpus(&GenConfig {
            n_repos: 2,
            ..GenConfig::default()
        });
        let repos = c
            .repos
            .into_iter()
            .map(|r| RepoContext::with_ngram(r, &c.tasks).unwrap())
            .collect();
        (repos, c.tasks)
    }

    #[test]
    fn step_seeds_differ() {
        let p = Perturbation {
            drop_rate: 0.3,
            noise_rate: 0.5,
            seed: 7,
        };
        assert_eq!(p.step_seed("a/1", 0), p.step_seed("a/1", 0));
        assert_ne!(p.step_seed("a/1", 0), p.step_seed("a/1", 1));
        assert_ne!(p.step_seed("a/1", 0), p.step_seed("a/2", 0));
    }

    #[test]
    fn decode_emits_only_valid_members() {
        let (repos, tasks) = corpus();
        let config = StrategyConfig::parse_combo("decode").unwrap();
        for t in &tasks {
            let repo = repos.iter().find(|r| r.snapshot.name == t.repo).unwrap();
            let out = complete(t, repo, &config, None).unwrap();
            assert_eq!(out.trace.violations(), 0);
            assert!(!out.trace.triggered.is_empty());
            let first = lex_prefix(&out.prediction).first().and_then(|tok| tok.ident().map(str::to_string));
            let file = SourceFile::new(&t.file, t.prompt.as_str());
            let valid = crate::analyzer::valid_identifiers_at(&file, t.prompt.len(), &repo.index).unwrap();
            if let Some(first) = first {
                let first_piece = repo.model.first_token(&first).unwrap();
                assert!(valid.identifiers().any(|v| repo.model.first_token(v).unwrap() == first_piece));
            }
            let sum = out.timing.retrieval_s + out.timing.analysis_s + out.timing.inference_s;
            assert!(sum <= out.timing.total_s);
        }
    }

    #[test]
    fn post_selects_passing_candidate() {
        let (repos, tasks) = corpus();
        let config = StrategyConfig::parse_combo("post").unwrap();
        for t in tasks.iter().take(6) {
            let repo = repos.iter().find(|r| r.snapshot.name == t.repo).unwrap();
            let out = complete(t, repo, &config, None).unwrap();
            let sel = out.selection.unwrap();
            assert!(out.candidates.len() <= 3);
            if sel.any_passed() {
                assert!(sel.chosen_passed());
            } else {
                assert_eq!(sel.chosen, 0);
            }
        }
    }
}
