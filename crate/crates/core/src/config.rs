//! Strategy configuration and the `key=value` config file format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("combining decode and post is very slow (one analysis per beam step plus a check per candidate); pass --allow-slow to run it")]
    SlowCombination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub prompt_f: bool,
    pub prompt_t: bool,
    pub decode: bool,
    pub post: bool,
    pub rag: bool,
    pub allow_slow: bool,
    pub in_file_tokens: usize,
    pub per_crossfile_tokens: usize,
    pub retrieved_k: usize,
    pub max_new_tokens: usize,
    pub beam_width: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            prompt_f: false,
            prompt_t: false,
            decode: false,
            post: false,
            rag: false,
            allow_slow: false,
            in_file_tokens: 2000,
            per_crossfile_tokens: 3000,
            retrieved_k: 3,
            max_new_tokens: 64,
            beam_width: 3,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

impl StrategyConfig {
    pub const KEYS: [&'static str; 11] = [
        "prompt_f",
        "prompt_t",
        "decode",
        "post",
        "rag",
        "allow_slow",
        "in_file_tokens",
        "per_crossfile_tokens",
        "retrieved_k",
        "max_new_tokens",
        "beam_width",
    ];

    /// A configuration with the given strategy flags and default budgets.
    pub fn with_flags(prompt_f: bool, prompt_t: bool, decode: bool, post: bool, rag: bool) -> Self {
        Self {
            prompt_f,
            prompt_t,
            decode,
            post,
            rag,
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "prompt_f" => self.prompt_f = parse_value(key, value)?,
            "prompt_t" => self.prompt_t = parse_value(key, value)?,
            "decode" => self.decode = parse_value(key, value)?,
            "post" => self.post = parse_value(key, value)?,
            "rag" => self.rag = parse_value(key, value)?,
            "allow_slow" => self.allow_slow = parse_value(key, value)?,
            "in_file_tokens" => self.in_file_tokens = parse_value(key, value)?,
            "per_crossfile_tokens" => self.per_crossfile_tokens = parse_value(key, value)?,
            "retrieved_k" => self.retrieved_k = parse_value(key, value)?,
            "max_new_tokens" => self.max_new_tokens = parse_value(key, value)?,
            "beam_width" => self.beam_width = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        if self.retrieved_k == 0 || self.beam_width == 0 {
            return Err(ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.decode && self.post && !self.allow_slow {
            return Err(ConfigError::SlowCombination);
        }
        Ok(())
    }

    /// Name such as `In-file`, `Prompt-F+Post` or `Decode+RAG`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.prompt_f, "Prompt-F"),
            (self.prompt_t, "Prompt-T"),
            (self.decode, "Decode"),
            (self.post, "Post"),
            (self.rag, "RAG"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect();
        if parts.is_empty() {
            "In-file".into()
        } else {
            parts.join("+")
        }
    }

    /// Parse a comma-separated combination such as `prompt-f,decode` or
    /// `in-file`.
    pub fn parse_combo(combo: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for part in combo.split(['+', ',']).map(|p| p.trim().to_ascii_lowercase()) {
            match part.as_str() {
                "in-file" | "infile" | "" => {}
                "prompt-f" | "prompt_f" => c.prompt_f = true,
                "prompt-t" | "prompt_t" => c.prompt_t = true,
                "decode" => c.decode = true,
                "post" => c.post = true,
                "rag" => c.rag = true,
                _ => {
                    return Err(ConfigError::BadValue {
                        key: "combo".into(),
                        value: combo.into(),
                    })
                }
            }
        }
        Ok(c)
    }

    /// Every combination evaluated in the benchmark matrix: at most one
    /// prompting strategy, at most one of decode and post, each with and
    /// without retrieval.
    pub fn matrix() -> Vec<Self> {
        let prompting = [(false, false), (true, false), (false, true)];
        let checking = [(false, false), (true, false), (false, true)];
        let mut out = Vec::new();
        for rag in [false, true] {
            for &(decode, post) in &checking {
                for &(pf, pt) in &prompting {
                    out.push(Self::with_flags(pf, pt, decode, post, rag));
                }
            }
        }
        out
    }
}

impl fmt::Display for StrategyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parse `key=value` lines. Blank lines and lines starting with `#` are
/// ignored.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn labels() {
        assert_eq!(StrategyConfig::default().label(), "In-file");
        assert_eq!(StrategyConfig::with_flags(true, false, false, true, true).label(), "Prompt-F+Post+RAG");
        assert_eq!(StrategyConfig::parse_combo("prompt-t,decode").unwrap().label(), "Prompt-T+Decode");
        assert!(StrategyConfig::parse_combo("fast").is_err());
    }

    #[test]
    fn matrix_is_the_eighteen_named_combinations() {
        let labels: BTreeSet<String> = StrategyConfig::matrix().iter().map(|c| c.label()).collect();
        let base = [
            "In-file", "Prompt-F", "Prompt-T", "Decode", "Post", "Prompt-F+Decode",
            "Prompt-F+Post", "Prompt-T+Decode", "Prompt-T+Post",
        ];
        let mut expected: BTreeSet<String> = base.iter().map(|s| s.to_string()).collect();
        expected.extend(base.iter().map(|s| if *s == "In-file" { "RAG".to_string() } else { format!("{s}+RAG") }));
        assert_eq!(labels, expected);
        assert_eq!(StrategyConfig::matrix().len(), 18);
        assert!(StrategyConfig::matrix().iter().all(|c| c.validate().is_ok()));
    }

    #[test]
    fn slow_gate() {
        let mut c = StrategyConfig::parse_combo("decode,post").unwrap();
        assert_eq!(c.validate(), Err(ConfigError::SlowCombination));
        c.allow_slow = true;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn kv_file() {
        let kv = parse_kv("# budgets\nin_file_tokens = 100\n\nrag=true\n").unwrap();
        let mut c = StrategyConfig::default();
        for (k, v) in &kv {
            c.set(k, v).unwrap();
        }
        assert_eq!(c.in_file_tokens, 100);
        assert!(c.rag);
        assert_eq!(parse_kv("novalue"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(c.set("speed", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set("rag", "maybe"), Err(ConfigError::BadValue { .. })));
    }
}
