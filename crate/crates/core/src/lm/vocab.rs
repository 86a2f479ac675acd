//! Word-level tokenizer over the lexer alphabet.
//!
//! Text is cut into pieces: runs of spaces and tabs, newlines, identifiers
//! split at camelCase boundaries, digit runs, `//`, and single characters.
//! Pieces missing from the vocabulary are spelled out character by
//! character, so every text over the alphabet round-trips.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{LmError, TokenId};

pub const UNK: &str = "<unk>";
pub const NEWLINE: &str = "\n";
pub const UNK_ID: TokenId = 0;
pub const NEWLINE_ID: TokenId = 1;

/// Characters every vocabulary contains as single-character tokens.
fn alphabet() -> impl Iterator<Item = char> {
    std::iter::once('\t').chain((0x20u8..=0x7e).map(char::from))
}

pub fn in_alphabet(c: char) -> bool {
    c == '\t' || c == '\n' || (' '..='~').contains(&c)
}

fn is_word_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Split `text` into tokenizer pieces.
pub fn pieces(text: &str) -> Result<Vec<&str>, LmError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = text[i..].chars().next().expect("in bounds");
        if !in_alphabet(c) {
            return Err(LmError::UnknownCharacter { ch: c, offset: i });
        }
        let b = bytes[i];
        let start = i;
        if b == b' ' || b == b'\t' {
            while i < bytes.len() && (bytes[i] == b' ' || bytes[i] == b'\t') {
                i += 1;
            }
            out.push(&text[start..i]);
        } else if b.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            out.push(&text[start..i]);
        } else if b.is_ascii_alphabetic() || b == b'_' {
            let mut end = i;
            while end < bytes.len() && is_word_char(bytes[end]) {
                end += 1;
            }
            let mut piece_start = i;
            for j in i + 1..end {
                let prev = bytes[j - 1];
                if bytes[j].is_ascii_uppercase() && (prev.is_ascii_lowercase() || prev.is_ascii_digit()) {
                    out.push(&text[piece_start..j]);
                    piece_start = j;
                }
            }
            out.push(&text[piece_start..end]);
            i = end;
        } else if text[i..].starts_with("//") {
            i += 2;
            out.push("//");
        } else {
            i += 1;
            out.push(&text[start..i]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let id_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, id_of }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Specials, then the alphabet, then the multi-character pieces seen in
    /// `texts` in ascending order. Independent of the order of `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self, LmError> {
        let mut multi = BTreeSet::new();
        for t in texts {
            for p in pieces(t)? {
                if p.len() > 1 {
                    multi.insert(p.to_string());
                }
            }
        }
        let tokens: Vec<String> = [UNK.to_string(), NEWLINE.to_string()]
            .into_iter()
            .chain(alphabet().map(String::from))
            .chain(multi)
            .collect();
        Ok(tokens.into())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        let mut ids = Vec::new();
        for p in pieces(text)? {
            match self.id(p) {
                Some(id) => ids.push(id),
                None => {
                    for c in p.chars() {
                        ids.push(self.id(c.encode_utf8(&mut [0; 4])).expect("alphabet in vocab"));
                    }
                }
            }
        }
        Ok(ids)
    }

    /// Concatenated token texts. The unknown token decodes to nothing.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, LmError> {
        let mut out = String::new();
        for &id in ids {
            match self.token(id) {
                Some(_) if id == UNK_ID => {}
                Some(t) => out.push_str(t),
                None => return Err(LmError::UnknownTokenId(id)),
            }
        }
        Ok(out)
    }
}
