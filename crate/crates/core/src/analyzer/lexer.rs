//! Lexer for the subject language.
//!
//! Identifiers are `[A-Za-z_][A-Za-z0-9_]*`, keywords are reserved, `//` line
//! comments are skipped. Any other printable ASCII character lexes as a
//! single punctuation token; the parser decides which ones are legal.

use std::fmt;

use super::SyntaxError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keyword {
    Package,
    Import,
    Class,
    Return,
    Int,
    Str,
    Bool,
    Void,
}

impl Keyword {
    pub fn from_text(text: &str) -> Option<Keyword> {
        Some(match text {
            "package" => Keyword::Package,
            "import" => Keyword::Import,
            "class" => Keyword::Class,
            "return" => Keyword::Return,
            "int" => Keyword::Int,
            "str" => Keyword::Str,
            "bool" => Keyword::Bool,
            "void" => Keyword::Void,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::Package => "package",
            Keyword::Import => "import",
            Keyword::Class => "class",
            Keyword::Return => "return",
            Keyword::Int => "int",
            Keyword::Str => "str",
            Keyword::Bool => "bool",
            Keyword::Void => "void",
        }
    }

    /// Builtin type keywords (`int`, `str`, `bool`, `void`).
    pub fn is_type(self) -> bool {
        matches!(
            self,
            Keyword::Int | Keyword::Str | Keyword::Bool | Keyword::Void
        )
    }
}

pub fn is_keyword(text: &str) -> bool {
    Keyword::from_text(text).is_some()
}

/// True when `text` is a lexically valid, non-reserved identifier.
pub fn is_identifier(text: &str) -> bool {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !is_keyword(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Ident(String),
    Keyword(Keyword),
    Int(String),
    Str(String),
    Punct(char),
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Keyword(k) => write!(f, "`{}`", k.as_str()),
            TokenKind::Int(s) => write!(f, "integer `{s}`"),
            TokenKind::Str(_) => write!(f, "string literal"),
            TokenKind::Punct(c) => write!(f, "`{c}`"),
        }
    }
}

/// A lexed token with its byte span in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is_punct(&self, c: char) -> bool {
        self.kind == TokenKind::Punct(c)
    }

    pub fn is_keyword(&self, k: Keyword) -> bool {
        self.kind == TokenKind::Keyword(k)
    }

    pub fn ident(&self) -> Option<&str> {
        match &self.kind {
            TokenKind::Ident(s) => Some(s),
            _ => None,
        }
    }
}

pub struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    pub fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn peek_byte(&self, off: usize) -> Option<u8> {
        self.src.as_bytes().get(self.pos + off).copied()
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek_byte(0) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'/') if self.peek_byte(1) == Some(b'/') => {
                    while let Some(b) = self.peek_byte(0) {
                        if b == b'\n' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    fn take_while(&mut self, pred: impl Fn(u8) -> bool) -> &'a str {
        let start = self.pos;
        while let Some(b) = self.peek_byte(0) {
            if !pred(b) {
                break;
            }
            self.pos += 1;
        }
        &self.src[start..self.pos]
    }
}

impl Iterator for Lexer<'_> {
    type Item = Result<Token, SyntaxError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.skip_trivia();
        let start = self.pos;
        let b = self.peek_byte(0)?;
        let kind = if b.is_ascii_alphabetic() || b == b'_' {
            let word = self.take_while(|b| b.is_ascii_alphanumeric() || b == b'_');
            match Keyword::from_text(word) {
                Some(k) => TokenKind::Keyword(k),
                None => TokenKind::Ident(word.to_string()),
            }
        } else if b.is_ascii_digit() {
            TokenKind::Int(self.take_while(|b| b.is_ascii_digit()).to_string())
        } else if b == b'"' {
            self.pos += 1;
            loop {
                match self.peek_byte(0) {
                    None | Some(b'\n') => {
                        return Some(Err(SyntaxError::new(start, "closing `\"`", "end of line")));
                    }
                    Some(b'\\') => self.pos += 2.min(self.src.len() - self.pos),
                    Some(b'"') => {
                        self.pos += 1;
                        break;
                    }
                    Some(_) => self.pos += 1,
                }
            }
            TokenKind::Str(self.src[start + 1..self.pos - 1].to_string())
        } else if b.is_ascii_graphic() {
            self.pos += 1;
            TokenKind::Punct(b as char)
        } else {
            let ch = self.src[start..].chars().next().unwrap_or('?');
            // Stop the iteration after an error so callers can collect safely.
            self.pos = self.src.len();
            return Some(Err(SyntaxError::new(
                start,
                "a subject-language character",
                format!("{ch:?}"),
            )));
        };
        Some(Ok(Token {
            kind,
            start,
            end: self.pos,
        }))
    }
}

/// Lex the whole input, failing on the first bad character.
pub fn lex(src: &str) -> Result<Vec<Token>, SyntaxError> {
    Lexer::new(src).collect()
}

/// Lex up to the first error and return whatever came before it.
pub fn lex_prefix(src: &str) -> Vec<Token> {
    Lexer::new(src).map_while(Result::ok).collect()
}
