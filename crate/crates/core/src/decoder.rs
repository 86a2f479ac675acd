//! Greedy, logit-masked, and beam-search decoding over any backend.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{Provenance, ValidTokenSet};
use crate::lm::{argmax, log_softmax, LanguageModel, LmError, TokenId};

pub const MAX_NEW_TOKENS: usize = 64;
pub const BEAM_WIDTH: usize = 3;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("mask admits no token")]
    NoValidTokens,
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_new_tokens: usize,
    pub beam_width: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: MAX_NEW_TOKENS,
            beam_width: BEAM_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Generated ids, without the terminating newline.
    pub ids: Vec<TokenId>,
    /// Sum of per-step log probabilities, including the newline step when
    /// `terminated`.
    pub logprob: f64,
    pub text: String,
    pub terminated: bool,
}

/// `v[k]` is set iff token `k` is the first sub-token of some identifier in
/// `valid`.
pub fn mask_from_valid(valid: &ValidTokenSet, lm: &dyn LanguageModel) -> Result<Vec<bool>, LmError> {
    let mut mask = vec![false; lm.vocab_size()];
    for ident in valid.identifiers() {
        if let Some(id) = lm.first_token(ident)? {
            if let Some(slot) = mask.get_mut(id as usize) {
                *slot = true;
            }
        }
    }
    Ok(mask)
}

/// Logits with every masked-out entry replaced by `-inf`.
pub fn apply_mask(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    logits
        .iter()
        .zip(mask)
        .map(|(&l, &ok)| if ok { l } else { f64::NEG_INFINITY })
        .collect()
}

/// Highest-scoring admitted token; ties go to the lowest id.
pub fn masked_argmax(logits: &[f64], mask: &[bool]) -> Result<TokenId, DecodeError> {
    let mut best: Option<usize> = None;
    for (k, (&l, &ok)) in logits.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| l > logits[b]) {
            best = Some(k);
        }
    }
    best.map(|k| k as TokenId).ok_or(DecodeError::NoValidTokens)
}

/// One step at which the mask was consulted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggeredStep {
    pub step: usize,
    /// Number of admitted tokens; 0 means the step fell back to the
    /// unmasked distribution.
    pub mask_size: usize,
    pub chosen: TokenId,
    pub chosen_admitted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub triggered: Vec<TriggeredStep>,
    pub analysis_s: f64,
    pub inference_s: f64,
}

impl DecodeTrace {
    /// Steps with a non-empty mask whose chosen token it did not admit.
    pub fn violations(&self) -> usize {
        self.triggered
            .iter()
            .filter(|s| s.mask_size > 0 && !s.chosen_admitted)
            .count()
    }

    pub fn empty_mask_steps(&self) -> usize {
        self.triggered.iter().filter(|s| s.mask_size == 0).count()
    }
}

/// Supplies the identifiers valid after the generated ids so far. `None`
/// means analysis could not produce a set.
pub type MaskProvider<'a> = dyn FnMut(&[TokenId]) -> Option<ValidTokenSet> + 'a;

struct Stepper<'a, 'p> {
    lm: &'a dyn LanguageModel,
    prompt: &'a [TokenId],
    dot: Option<TokenId>,
    provider: Option<&'p mut MaskProvider<'p>>,
    trace: DecodeTrace,
}

impl Stepper<'_, '_> {
    fn is_triggered(&self, generated: &[TokenId]) -> bool {
        let last = generated.last().or(self.prompt.last()).copied();
        self.dot.is_some() && last == self.dot
    }

    /// Log probabilities for the next token, masked at trigger points.
    /// Returns the mask when one was applied.
    fn next(&mut self, generated: &[TokenId]) -> Result<(Vec<f64>, Option<Vec<bool>>), DecodeError> {
        let mut ids = Vec::with_capacity(self.prompt.len() + generated.len());
        ids.extend_from_slice(self.prompt);
        ids.extend_from_slice(generated);
        let t = Instant::now();
        let logits = self.lm.next_logits(&ids)?;
        self.trace.inference_s += t.elapsed().as_secs_f64();
        let triggered = self.is_triggered(generated);
        if let (true, Some(provider)) = (triggered, self.provider.as_mut()) {
            let t = Instant::now();
            let valid = provider(generated).unwrap_or_default();
            let mask = mask_from_valid(&valid, self.lm)?;
            self.trace.analysis_s += t.elapsed().as_secs_f64();
            if mask.iter().any(|&b| b) {
                return Ok((log_softmax(&apply_mask(&logits, &mask)), Some(mask)));
            }
            return Ok((log_softmax(&logits), Some(mask)));
        }
        Ok((log_softmax(&logits), None))
    }

    fn record(&mut self, step: usize, mask: &Option<Vec<bool>>, chosen: TokenId) {
        if let Some(mask) = mask {
            self.trace.triggered.push(TriggeredStep {
                step,
                mask_size: mask.iter().filter(|&&b| b).count(),
                chosen,
                chosen_admitted: mask[chosen as usize],
            });
        }
    }
}

fn new_stepper<'a, 'p>(
    lm: &'a dyn LanguageModel,
    prompt: &'a [TokenId],
    provider: Option<&'p mut MaskProvider<'p>>,
) -> Result<Stepper<'a, 'p>, DecodeError> {
    let dot = match provider {
        Some(_) => lm.encode(".")?.first().copied(),
        None => None,
    };
    Ok(Stepper {
        lm,
        prompt,
        dot,
        provider,
        trace: DecodeTrace::default(),
    })
}

/// Greedy decoding until the first newline or `max_new_tokens` tokens.
///
/// With a provider, every step right after a `.` is restricted to the first
/// sub-tokens of the identifiers it returns; an empty set leaves the step
/// unmasked.
pub fn generate<'p>(
    lm: &dyn LanguageModel,
    prompt_ids: &[TokenId],
    config: &DecodeConfig,
    provider: Option<&'p mut MaskProvider<'p>>,
) -> Result<(Candidate, DecodeTrace), DecodeError> {
    assert!(!prompt_ids.is_empty(), "prompt must not be empty");
    let mut st = new_stepper(lm, prompt_ids, provider)?;
    let newline = lm.newline_id();
    let mut ids = Vec::new();
    let mut logprob = 0.0;
    let mut terminated = false;
    for step in 0..config.max_new_tokens {
        let (lp, mask) = st.next(&ids)?;
        let chosen = argmax(&lp).expect("non-empty vocabulary") as TokenId;
        st.record(step, &mask, chosen);
        logprob += lp[chosen as usize];
        if chosen == newline {
            terminated = true;
            break;
        }
        ids.push(chosen);
    }
    let text = lm.decode(&ids)?;
    Ok((
        Candidate {
            ids,
            logprob,
            text,
            terminated,
        },
        st.trace,
    ))
}

/// Beam search returning up to `beam_width` candidates by descending
/// log probability, ties by text.
///
/// Each step keeps the `width` best expansions of the live beams; an
/// expansion by the newline finishes its beam.
pub fn beam_search<'p>(
    lm: &dyn LanguageModel,
    prompt_ids: &[TokenId],
    config: &DecodeConfig,
    provider: Option<&'p mut MaskProvider<'p>>,
) -> Result<(Vec<Candidate>, DecodeTrace), DecodeError> {
    assert!(!prompt_ids.is_empty(), "prompt must not be empty");
    assert!(config.beam_width >= 1);
    let mut st = new_stepper(lm, prompt_ids, provider)?;
    let newline = lm.newline_id();
    let width = config.beam_width;
    let mut live: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<TokenId>, f64, bool)> = Vec::new();
    for step in 0..config.max_new_tokens {
        if live.is_empty() {
            break;
        }
        let mut expansions: Vec<(f64, usize, TokenId)> = Vec::new();
        let mut masks = Vec::with_capacity(live.len());
        for (b, (ids, score)) in live.iter().enumerate() {
            let (lp, mask) = st.next(ids)?;
            for (k, &v) in lp.iter().enumerate() {
                if v.is_finite() {
                    expansions.push((score + v, b, k as TokenId));
                }
            }
            masks.push(mask);
        }
        expansions.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        expansions.truncate(width);
        let mut next_live = Vec::new();
        for (score, b, k) in expansions {
            st.record(step, &masks[b], k);
            let mut ids = live[b].0.clone();
            if k == newline {
                finished.push((ids, score, true));
            } else {
                ids.push(k);
                next_live.push((ids, score));
            }
        }
        live = next_live;
        // Scores only decrease, so once `width` finished candidates beat
        // every live beam the result is settled.
        if finished.len() >= width {
            let mut scores: Vec<f64> = finished.iter().map(|f| f.1).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let best_live = live.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
            if best_live < scores[width - 1] {
                break;
            }
        }
    }
    finished.extend(live.into_iter().map(|(ids, s)| (ids, s, false)));
    let mut out = Vec::with_capacity(finished.len());
    for (ids, logprob, terminated) in finished {
        out.push(Candidate {
            text: lm.decode(&ids)?,
            ids,
            logprob,
            terminated,
        });
    }
    out.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then_with(|| a.text.cmp(&b.text)));
    out.truncate(width);
    Ok((out, st.trace))
}

/// Emulate imprecise analysis: drop each identifier with `drop_rate`, then
/// add `ceil(noise_rate * |valid|)` identifiers drawn from `noise_pool`
/// (excluding the original members). Deterministic for a given seed.
pub fn perturb_valid_set(
    valid: &ValidTokenSet,
    drop_rate: f64,
    noise_rate: f64,
    noise_pool: &[String],
    seed: u64,
) -> ValidTokenSet {
    assert!((0.0..=1.0).contains(&drop_rate) && (0.0..=1.0).contains(&noise_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ValidTokenSet::new();
    for (ident, prov) in valid.iter() {
        if rng.gen::<f64>() >= drop_rate {
            out.insert(ident, prov);
        }
    }
    let n_noise = (noise_rate * valid.len() as f64).ceil() as usize;
    let mut pool: Vec<&String> = noise_pool.iter().filter(|p| !valid.contains(p)).collect();
    pool.sort();
    pool.dedup();
    for ident in pool.choose_multiple(&mut rng, n_noise) {
        out.insert(ident, Provenance::Injected);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::softmax;
    use proptest::prelude::*;

    /// Scripted backend over a tiny vocabulary; logits are a function of the
    /// number of tokens after the prompt and the last token.
    pub(crate) struct Toy {
        pub tokens: Vec<&'static str>,
        pub script: fn(&[TokenId]) -> Vec<f64>,
    }

    impl LanguageModel for Toy {
        fn encode(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
            let mut out = Vec::new();
            let mut rest = text;
            while !rest.is_empty() {
                let (i, t) = self
                    .tokens
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| !t.is_empty() && rest.starts_with(**t))
                    .max_by_key(|(_, t)| t.len())
                    .ok_or(LmError::UnknownCharacter { ch: rest.chars().next().unwrap(), offset: 0 })?;
                out.push(i as TokenId);
                rest = &rest[t.len()..];
            }
            Ok(out)
        }
        fn decode(&self, ids: &[TokenId]) -> Result<String, LmError> {
            Ok(ids.iter().map(|&i| self.tokens[i as usize]).collect())
        }
        fn vocab_size(&self) -> usize {
            self.tokens.len()
        }
        fn newline_id(&self) -> TokenId {
            0
        }
        fn next_logits(&self, ids: &[TokenId]) -> Result<Vec<f64>, LmError> {
            Ok((self.script)(ids))
        }
    }

    const RET: [&str; 6] = ["\n", "return", " ", "x", ";", "y"];

    fn one_hot(k: usize, n: usize) -> Vec<f64> {
        (0..n).map(|i| if i == k { 5.0 } else { 0.0 }).collect()
    }

    #[test]
    fn greedy_stops_before_newline() {
        let toy = Toy {
            tokens: RET.to_vec(),
            script: |ids| {
                let seq = [1, 2, 3, 4, 0];
                one_hot(seq[(ids.len() - 1).min(4)], 6)
            },
        };
        let (c, _) = generate(&toy, &[2], &DecodeConfig::default(), None).unwrap();
        assert_eq!(c.text, "return x;");
        assert!(c.terminated);
    }

    #[test]
    fn greedy_caps_length() {
        let toy = Toy {
            tokens: RET.to_vec(),
            script: |_| one_hot(3, 6),
        };
        let (c, _) = generate(&toy, &[2], &DecodeConfig::default(), None).unwrap();
        assert_eq!(c.ids.len(), 64);
        assert!(!c.terminated);
    }

    const DOT: [&str; 6] = ["\n", ".", "s", "trim", "normalize", "()"];

    #[test]
    fn mask_forces_valid_member() {
        let toy = Toy {
            tokens: DOT.to_vec(),
            script: |ids| match ids.last() {
                Some(1) => vec![0.0, 0.0, 0.0, 1.0, 4.0, 0.0],
                Some(3) | Some(4) => one_hot(5, 6),
                _ => one_hot(0, 6),
            },
        };
        let prompt = toy.encode("s.").unwrap();
        let (plain, _) = generate(&toy, &prompt, &DecodeConfig::default(), None).unwrap();
        assert_eq!(plain.text, "normalize()");
        let mut provider = |_: &[TokenId]| {
            Some(ValidTokenSet::from_iter([("trim".to_string(), Provenance::MemberOfReceiver)]))
        };
        let (masked, trace) = generate(&toy, &prompt, &DecodeConfig::default(), Some(&mut provider)).unwrap();
        assert_eq!(masked.text, "trim()");
        assert_eq!(trace.triggered.len(), 1);
        assert_eq!(trace.violations(), 0);
        let mut empty = |_: &[TokenId]| None;
        let (fallback, trace) = generate(&toy, &prompt, &DecodeConfig::default(), Some(&mut empty)).unwrap();
        assert_eq!(fallback.text, "normalize()");
        assert_eq!(trace.empty_mask_steps(), 1);
    }

    #[test]
    fn shared_first_subtoken_sets_one_bit() {
        let v = crate::lm::vocab::Vocab::build(["send sendMessage trim"]).unwrap();
        struct V(crate::lm::vocab::Vocab);
        impl LanguageModel for V {
            fn encode(&self, t: &str) -> Result<Vec<TokenId>, LmError> {
                self.0.encode(t)
            }
            fn decode(&self, ids: &[TokenId]) -> Result<String, LmError> {
                self.0.decode(ids)
            }
            fn vocab_size(&self) -> usize {
                self.0.len()
            }
            fn newline_id(&self) -> TokenId {
                1
            }
            fn next_logits(&self, _: &[TokenId]) -> Result<Vec<f64>, LmError> {
                Ok(vec![0.0; self.0.len()])
            }
        }
        let lm = V(v);
        let set = |xs: &[&str]| -> ValidTokenSet {
            xs.iter().map(|x| (x.to_string(), Provenance::Local)).collect()
        };
        let m = mask_from_valid(&set(&["send", "sendMessage"]), &lm).unwrap();
        assert_eq!(m.iter().filter(|&&b| b).count(), 1);
        assert!(m[lm.0.id("send").unwrap() as usize]);
        assert!(mask_from_valid(&set(&[]), &lm).unwrap().iter().all(|&b| !b));
        assert_eq!(mask_from_valid(&set(&["trim"]), &lm).unwrap().iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn masked_argmax_cases() {
        assert_eq!(masked_argmax(&[2.0, 5.0, 1.0], &[true, false, true]).unwrap(), 0);
        assert_eq!(masked_argmax(&[2.0, 5.0, 1.0], &[true; 3]).unwrap(), 1);
        assert!(matches!(
            masked_argmax(&[2.0], &[false]),
            Err(DecodeError::NoValidTokens)
        ));
    }

    const AB: [&str; 3] = ["\n", "a", "b"];

    fn branching(ids: &[TokenId]) -> Vec<f64> {
        // History-dependent scores so paths differ in probability.
        let h = ids.iter().fold(7u32, |acc, &t| acc.wrapping_mul(31).wrapping_add(t));
        (0..3)
            .map(|k| ((h as f64 + k as f64 * 1.7) * 0.618_034).fract() * 3.0)
            .collect()
    }

    /// All sequences of length <= n that end in a newline or have length n.
    fn enumerate(toy: &Toy, prompt: &[TokenId], n: usize) -> Vec<(Vec<TokenId>, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(Vec::<TokenId>::new(), 0.0)];
        while let Some((ids, lp)) = stack.pop() {
            if ids.len() == n {
                out.push((ids, lp));
                continue;
            }
            let mut ctx = prompt.to_vec();
            ctx.extend(&ids);
            let p = softmax(&toy.next_logits(&ctx).unwrap());
            for (k, pk) in p.iter().enumerate() {
                if k == 0 {
                    out.push((ids.clone(), lp + pk.ln()));
                } else {
                    let mut next = ids.clone();
                    next.push(k as TokenId);
                    stack.push((next, lp + pk.ln()));
                }
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| toy.decode(&a.0).unwrap().cmp(&toy.decode(&b.0).unwrap())));
        out
    }

    #[test]
    fn beam_matches_enumeration() {
        let toy = Toy {
            tokens: AB.to_vec(),
            script: branching,
        };
        let config = DecodeConfig {
            max_new_tokens: 2,
            beam_width: 3,
        };
        let (beams, _) = beam_search(&toy, &[1], &config, None).unwrap();
        let oracle = enumerate(&toy, &[1], 2);
        assert_eq!(beams.len(), 3);
        for (c, (ids, lp)) in beams.iter().zip(&oracle) {
            assert_eq!(&c.ids, ids);
            assert!((c.logprob - lp).abs() < 1e-9);
        }
    }

    #[test]
    fn early_newline_beam_is_kept() {
        let toy = Toy {
            tokens: AB.to_vec(),
            script: |ids| match ids.len() {
                1 => vec![3.0, 2.9, 0.0],
                _ => vec![0.0, 0.0, 0.0],
            },
        };
        let config = DecodeConfig {
            max_new_tokens: 3,
            beam_width: 3,
        };
        let (beams, _) = beam_search(&toy, &[1], &config, None).unwrap();
        assert!(beams[0].ids.is_empty() && beams[0].terminated);
        let oracle = enumerate(&toy, &[1], 3);
        assert!((beams[0].logprob - oracle[0].1).abs() < 1e-9);
    }

    #[test]
    fn degenerate_beam_equals_greedy() {
        let toy = Toy {
            tokens: RET.to_vec(),
            script: |ids| {
                let seq = [1, 2, 3, 4, 0];
                let mut v = one_hot(seq[(ids.len() - 1).min(4)], 6);
                v.iter_mut().for_each(|x| *x *= 10.0);
                v
            },
        };
        let cfg = DecodeConfig::default();
        let (beams, _) = beam_search(&toy, &[2], &cfg, None).unwrap();
        let (greedy, _) = generate(&toy, &[2], &cfg, None).unwrap();
        assert_eq!(beams[0].ids, greedy.ids);
    }

    #[test]
    fn perturbation_cases() {
        let valid: ValidTokenSet = ["a", "b", "c", "d"]
            .iter()
            .map(|x| (x.to_string(), Provenance::MemberOfReceiver))
            .collect();
        let pool: Vec<String> = ["p", "q", "r", "a"].iter().map(|s| s.to_string()).collect();
        assert_eq!(perturb_valid_set(&valid, 0.0, 0.0, &pool, 1), valid);
        let only_noise = perturb_valid_set(&valid, 1.0, 0.5, &pool, 1);
        assert_eq!(only_noise.len(), 2);
        assert!(only_noise.identifiers().all(|i| ["p", "q", "r"].contains(&i)));
        assert!(perturb_valid_set(&valid, 1.0, 0.0, &pool, 1).is_empty());
        assert_eq!(
            perturb_valid_set(&valid, 0.3, 0.5, &pool, 9),
            perturb_valid_set(&valid, 0.3, 0.5, &pool, 9)
        );
    }

    proptest! {
        #[test]
        fn masked_argmax_is_subset_max(
            pairs in proptest::collection::vec((-10.0f64..10.0, any::<bool>()), 1..40)
        ) {
            let logits: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let mask: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let oracle = (0..logits.len())
                .filter(|&k| mask[k])
                .fold(None::<usize>, |b, k| match b {
                    Some(b) if logits[b] >= logits[k] => Some(b),
                    _ => Some(k),
                });
            match masked_argmax(&logits, &mask) {
                Ok(k) => prop_assert_eq!(Some(k as usize), oracle),
                Err(_) => prop_assert!(oracle.is_none()),
            }
        }

        #[test]
        fn beam_width_one_equals_greedy(seed in 0u32..50) {
            let toy = Toy { tokens: AB.to_vec(), script: branching };
            let cfg = DecodeConfig { max_new_tokens: 6, beam_width: 1 };
            let prompt = [1 + seed % 2, 2, 1];
            let (beams, _) = beam_search(&toy, &prompt, &cfg, None).unwrap();
            let (greedy, _) = generate(&toy, &prompt, &cfg, None).unwrap();
            prop_assert_eq!(&beams[0].ids, &greedy.ids);
            prop_assert!((beams[0].logprob - greedy.logprob).abs() < 1e-9);
        }

        #[test]
        fn logprob_recomputes(seed in 0u32..50) {
            let toy = Toy { tokens: AB.to_vec(), script: branching };
            let cfg = DecodeConfig { max_new_tokens: 5, beam_width: 3 };
            let prompt = [1 + seed % 2, 2 - seed % 2, 1, 2];
            let (beams, _) = beam_search(&toy, &prompt, &cfg, None).unwrap();
            for c in beams {
                let mut ctx = prompt.to_vec();
                let mut lp = 0.0;
                let steps: Vec<TokenId> = c.ids.iter().copied().chain(c.terminated.then_some(0)).collect();
                for t in steps {
                    lp += log_softmax(&toy.next_logits(&ctx).unwrap())[t as usize];
                    ctx.push(t);
                }
                prop_assert!((lp - c.logprob).abs() < 1e-9);
            }
        }
    }
}
