//! Count-based n-gram model with additive smoothing and stupid backoff.
//!
//! At member-access positions (history ending in `identifier .`) the model
//! also copies from `//` comment lines in its context: the smoothed
//! distribution is mixed with the same distribution restricted to
//! identifiers mentioned in those comments. When a comment line names the
//! receiver, only identifiers on the more deeply indented comment lines
//! right below it are used, so an outline such as
//!
//! ```text
//! // class Codec
//! //   int flush()
//! ```
//!
//! steers `codec.` towards `flush`. Without comments in the context the
//! model is a plain n-gram model.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::vocab::{pieces, Vocab};
use super::{LanguageModel, LmError, TokenId};
use crate::analyzer::lexer::lex_prefix;

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_HINT_WEIGHT: f64 = 0.5;
pub const BACKOFF: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
struct Dist {
    total: u64,
    next: Vec<(TokenId, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    hint_weight: f64,
    vocab: Vocab,
    counts: HashMap<Vec<TokenId>, Dist>,
}

#[derive(Serialize, Deserialize)]
struct ContextCounts {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u32)>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    order: usize,
    alpha: f64,
    #[serde(default = "default_hint_weight")]
    hint_weight: f64,
    vocab: Vocab,
    counts: Vec<ContextCounts>,
}

fn default_hint_weight() -> f64 {
    DEFAULT_HINT_WEIGHT
}

/// Train on `corpus`. Each text is counted separately; no context spans two
/// texts. The result does not depend on the order of the texts.
pub fn train_ngram<S: AsRef<str>>(corpus: &[S], order: usize, alpha: f64) -> Result<NGramModel, LmError> {
    assert!(order >= 1 && alpha > 0.0, "order >= 1 and alpha > 0 required");
    if corpus.iter().all(|t| t.as_ref().is_empty()) {
        return Err(LmError::EmptyCorpus);
    }
    let vocab = Vocab::build(corpus.iter().map(|t| t.as_ref()))?;
    let mut raw: HashMap<Vec<TokenId>, HashMap<TokenId, u32>> = HashMap::new();
    for text in corpus {
        let ids = vocab.encode(text.as_ref())?;
        for i in 0..ids.len() {
            for m in 0..order.min(i + 1) {
                *raw.entry(ids[i - m..i].to_vec())
                    .or_default()
                    .entry(ids[i])
                    .or_default() += 1;
            }
        }
    }
    let counts = raw
        .into_iter()
        .map(|(ctx, next)| {
            let mut next: Vec<(TokenId, u32)> = next.into_iter().collect();
            next.sort_unstable();
            (ctx, Dist::new(next))
        })
        .collect();
    Ok(NGramModel {
        order,
        alpha,
        hint_weight: DEFAULT_HINT_WEIGHT,
        vocab,
        counts,
    })
}

impl Dist {
    fn new(next: Vec<(TokenId, u32)>) -> Self {
        Self {
            total: next.iter().map(|&(_, c)| c as u64).sum(),
            next,
        }
    }
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn hint_weight(&self) -> f64 {
        self.hint_weight
    }

    /// Weight of the comment-copy component; 0 disables it.
    pub fn with_hint_weight(mut self, weight: f64) -> Self {
        assert!((0.0..=1.0).contains(&weight));
        self.hint_weight = weight;
        self
    }

    /// Raw count of `next` after exactly `context`.
    pub fn count(&self, context: &[TokenId], next: TokenId) -> u32 {
        self.counts
            .get(context)
            .and_then(|d| d.next.binary_search_by_key(&next, |&(t, _)| t).ok().map(|i| d.next[i].1))
            .unwrap_or(0)
    }

    /// The longest seen suffix of `ids` usable as context, and how many
    /// levels were backed off to reach it.
    fn context_for(&self, ids: &[TokenId]) -> (&Dist, usize) {
        let longest = (self.order - 1).min(ids.len());
        for m in (0..=longest).rev() {
            if let Some(d) = self.counts.get(&ids[ids.len() - m..]) {
                if d.total > 0 {
                    return (d, longest - m);
                }
            }
        }
        unreachable!("unigram counts exist for a non-empty corpus")
    }

    /// Smoothed distribution of the chosen context level.
    fn smoothed(&self, dist: &Dist) -> Vec<f64> {
        let k = self.vocab.len() as f64;
        let denom = dist.total as f64 + self.alpha * k;
        let mut p = vec![self.alpha / denom; self.vocab.len()];
        for &(t, c) in &dist.next {
            p[t as usize] = (c as f64 + self.alpha) / denom;
        }
        p
    }

    fn is_word_token(&self, id: TokenId) -> bool {
        self.vocab
            .token(id)
            .and_then(|t| t.bytes().next())
            .is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_')
    }

    /// Identifier text right before a trailing `.`, if the history ends so.
    fn receiver(&self, ids: &[TokenId]) -> Option<String> {
        let (&last, rest) = ids.split_last()?;
        if self.vocab.token(last) != Some(".") {
            return None;
        }
        let start = rest
            .iter()
            .rposition(|&id| !self.is_word_token(id))
            .map_or(0, |i| i + 1);
        let recv = self.vocab.decode(&rest[start..]).ok()?;
        (!recv.is_empty() && !recv.as_bytes()[0].is_ascii_digit()).then_some(recv)
    }

    /// First sub-token ids of the identifiers the comments offer for `recv`.
    fn comment_candidates(&self, text: &str, recv: &str) -> BTreeSet<TokenId> {
        struct Line {
            indent: usize,
            idents: Vec<String>,
        }
        let lines: Vec<Option<Line>> = text
            .lines()
            .map(|l| {
                let body = l.trim_start().strip_prefix("//")?;
                let indent = body.len() - body.trim_start().len();
                let idents = lex_prefix(body)
                    .into_iter()
                    .filter_map(|t| t.ident().map(str::to_string))
                    .collect();
                Some(Line { indent, idents })
            })
            .collect();
        let mut associated: Vec<&str> = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            let Some(anchor) = line else { continue };
            if !anchor.idents.iter().any(|w| w.eq_ignore_ascii_case(recv)) {
                continue;
            }
            for below in lines[i + 1..].iter() {
                match below {
                    Some(b) if b.indent > anchor.indent => {
                        associated.extend(b.idents.iter().map(String::as_str))
                    }
                    _ => break,
                }
            }
        }
        let pool: Vec<&str> = if associated.is_empty() {
            lines
                .iter()
                .flatten()
                .flat_map(|l| l.idents.iter().map(String::as_str))
                .collect()
        } else {
            associated
        };
        pool.into_iter()
            .filter_map(|ident| {
                let first = *pieces(ident).ok()?.first()?;
                let id = self.vocab.id(first)?;
                (self.count(&[], id) > 0).then_some(id)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut counts: Vec<ContextCounts> = self
            .counts
            .iter()
            .map(|(ctx, d)| ContextCounts {
                context: ctx.clone(),
                next: d.next.clone(),
            })
            .collect();
        counts.sort_by(|a, b| a.context.cmp(&b.context));
        let file = ModelFile {
            order: self.order,
            alpha: self.alpha,
            hint_weight: self.hint_weight,
            vocab: self.vocab.clone(),
            counts,
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Ok(Self {
            order: file.order,
            alpha: file.alpha,
            hint_weight: file.hint_weight,
            vocab: file.vocab,
            counts: file
                .counts
                .into_iter()
                .map(|c| (c.context, Dist::new(c.next)))
                .collect(),
        })
    }
}

impl LanguageModel for NGramModel {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        self.vocab.encode(text)
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String, LmError> {
        self.vocab.decode(ids)
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn newline_id(&self) -> TokenId {
        super::vocab::NEWLINE_ID
    }

    /// `levels * ln(0.4) + ln p(t | context)`, where `p` is the smoothed
    /// distribution of the longest seen context, mixed with the comment-copy
    /// distribution at member-access positions.
    fn next_logits(&self, ids: &[TokenId]) -> Result<Vec<f64>, LmError> {
        if ids.is_empty() {
            return Err(LmError::EmptyContext);
        }
        let (dist, levels) = self.context_for(ids);
        let mut p = self.smoothed(dist);
        if self.hint_weight > 0.0 {
            if let Some(recv) = self.receiver(ids) {
                let text = self.vocab.decode(ids)?;
                let cands = self.comment_candidates(&text, &recv);
                let z: f64 = cands.iter().map(|&t| p[t as usize]).sum();
                if z > 0.0 {
                    let lambda = self.hint_weight;
                    let mut mixed: Vec<f64> = p.iter().map(|v| (1.0 - lambda) * v).collect();
                    for &t in &cands {
                        mixed[t as usize] += lambda * p[t as usize] / z;
                    }
                    p = mixed;
                }
            }
        }
        let penalty = levels as f64 * BACKOFF.ln();
        Ok(p.into_iter().map(|v| penalty + v.ln()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{argmax, softmax};
    use proptest::prelude::*;

    fn id(m: &NGramModel, t: &str) -> TokenId {
        m.vocab().id(t).unwrap()
    }

    #[test]
    fn bigram_counts_and_argmax() {
        // Single-character tokens give the stream `a b a b a` without separators.
        let m = train_ngram(&["+-+-+"], 2, 0.1).unwrap();
        let (a, b) = (id(&m, "+"), id(&m, "-"));
        assert_eq!(m.count(&[a], b), 2);
        assert_eq!(m.count(&[b], a), 2);
        assert_eq!(m.count(&[], a), 3);
        assert_eq!(argmax(&m.next_logits(&[a]).unwrap()), Some(b as usize));
        let m = train_ngram(&["a b"], 2, 0.1).unwrap();
        assert_eq!(m.count(&[id(&m, "a")], id(&m, " ")), 1);
    }

    #[test]
    fn unseen_context_backs_off_to_unigram() {
        let m = train_ngram(&["x x x y"], 3, 0.1).unwrap();
        let y = id(&m, "y");
        let logits = m.next_logits(&[y]).unwrap();
        let most_frequent = id(&m, " ");
        assert_eq!(argmax(&logits), Some(most_frequent as usize));
    }

    #[test]
    fn order_independent_serialization() {
        let a = train_ngram(&["int a = b;", "c.d();\n"], 3, 0.1).unwrap();
        let b = train_ngram(&["c.d();\n", "int a = b;"], 3, 0.1).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let back = NGramModel::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(train_ngram::<&str>(&[], 3, 0.1), Err(LmError::EmptyCorpus)));
        assert!(matches!(train_ngram(&[""], 3, 0.1), Err(LmError::EmptyCorpus)));
    }

    #[test]
    fn held_out_line_has_no_count_mass() {
        let held = ["x.reset();\nint flush() {}\n"];
        let m = train_ngram(&held, 3, 0.1).unwrap();
        let (dot, flush) = (id(&m, "."), id(&m, "flush"));
        assert_eq!(m.count(&[dot], flush), 0);
        let ids = m.encode("y.").unwrap();
        let p = softmax(&m.with_hint_weight(0.0).next_logits(&ids).unwrap());
        assert!(p[flush as usize] > 0.0);
    }

    const CLIENT: &str = "class T {\n  void m() {\n    Codec codec = Codec();\n    codec.reset();\n    buffer.fill();\n  }\n}\n";
    const API: &str = "class Codec {\n  int reset() { return 1; }\n  int flush() { return 2; }\n}\n";

    #[test]
    fn outline_steers_member_choice() {
        let m = train_ngram(&[CLIENT, API], 3, 0.1).unwrap();
        let flush = id(&m, "flush") as usize;
        let plain = m.encode("    codec.").unwrap();
        assert_ne!(argmax(&m.next_logits(&plain).unwrap()), Some(flush));
        let hinted = m
            .encode("// module p\n// class Codec\n//   int flush()\n// class Buffer\n//   int reset()\n    codec.")
            .unwrap();
        assert_eq!(argmax(&m.next_logits(&hinted).unwrap()), Some(flush));
        let listed = m.encode("// valid identifiers here: flush\n    codec.").unwrap();
        assert_eq!(argmax(&m.next_logits(&listed).unwrap()), Some(flush));
        let off = m.with_hint_weight(0.0);
        assert_ne!(argmax(&off.next_logits(&hinted).unwrap()), Some(flush));
    }

    proptest! {
        #[test]
        fn softmax_normalized(ctx in proptest::collection::vec(0u32..40, 1..8)) {
            let m = train_ngram(&[CLIENT, API], 3, 0.1).unwrap();
            let ctx: Vec<TokenId> = ctx.into_iter().map(|t| t % m.vocab_size() as u32).collect();
            let logits = m.next_logits(&ctx).unwrap();
            prop_assert_eq!(logits.len(), m.vocab_size());
            prop_assert!(logits.iter().all(|l| l.is_finite()));
            prop_assert!((softmax(&logits).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
