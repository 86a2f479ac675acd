//! Error-tolerant recursive descent parser.
//!
//! The same parser serves complete files and cursor prefixes. Errors inside a
//! member or statement are recorded and the parser resynchronises at the next
//! `;` or `}`; running out of input inside a method body leaves the body open
//! and keeps the cut-off statement's tokens in [`Block::tail`].

use super::ast::*;
use super::lexer::{Keyword, Token, TokenKind};
use super::SyntaxError;

pub struct ParseOutput {
    pub ast: Ast,
    pub diagnostics: Vec<SyntaxError>,
    /// First error in the package/import section, if any.
    pub header_error: Option<SyntaxError>,
}

impl ParseOutput {
    /// Diagnostics not caused by simply running out of input.
    pub fn hard_diagnostics(&self) -> impl Iterator<Item = &SyntaxError> {
        self.diagnostics.iter().filter(|d| !d.at_end)
    }
}

type PResult<T> = Result<T, SyntaxError>;

struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
    eof: usize,
    diags: Vec<SyntaxError>,
}

impl<'t> Parser<'t> {
    fn new(toks: &'t [Token], eof: usize) -> Self {
        Self {
            toks,
            pos: 0,
            eof,
            diags: Vec::new(),
        }
    }

    fn peek(&self) -> Option<&'t Token> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, off: usize) -> Option<&'t Token> {
        self.toks.get(self.pos + off)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.eof, |t| t.start)
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.toks[self.pos - 1].end
        }
    }

    fn error(&self, expected: &str) -> SyntaxError {
        match self.peek() {
            Some(t) => SyntaxError::new(t.start, expected, t.kind.to_string()),
            None => SyntaxError::at_end(self.eof, expected),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek().is_some_and(|t| t.is_punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> PResult<()> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            Err(self.error(&format!("`{c}`")))
        }
    }

    fn eat_keyword(&mut self, k: Keyword) -> bool {
        if self.peek().is_some_and(|t| t.is_keyword(k)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_ident(&mut self) -> PResult<String> {
        match self.peek().and_then(Token::ident) {
            Some(s) => {
                self.pos += 1;
                Ok(s.to_string())
            }
            None => Err(self.error("identifier")),
        }
    }

    fn qname(&mut self) -> PResult<String> {
        let mut parts = vec![self.expect_ident()?];
        while self.eat_punct('.') {
            parts.push(self.expect_ident()?);
        }
        Ok(parts.join("."))
    }

    fn type_name(&mut self) -> PResult<String> {
        match self.peek().map(|t| &t.kind) {
            Some(TokenKind::Keyword(k)) if k.is_type() => {
                self.pos += 1;
                Ok(k.as_str().to_string())
            }
            Some(TokenKind::Ident(s)) => {
                self.pos += 1;
                Ok(s.clone())
            }
            _ => Err(self.error("type")),
        }
    }

    /// Skip to just after the next `;`, or to (not past) the next `}`, at brace depth 0.
    fn recover(&mut self) {
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            match t.kind {
                TokenKind::Punct('{') => depth += 1,
                TokenKind::Punct('}') if depth == 0 => return,
                TokenKind::Punct('}') => depth -= 1,
                TokenKind::Punct(';') if depth == 0 => {
                    self.pos += 1;
                    return;
                }
                _ => {}
            }
            self.pos += 1;
        }
    }

    fn skip_to_header_boundary(&mut self) {
        while let Some(t) = self.peek() {
            if t.is_keyword(Keyword::Import) || t.is_keyword(Keyword::Class) {
                return;
            }
            self.pos += 1;
            if t.is_punct(';') {
                return;
            }
        }
    }

    fn file(&mut self) -> (Ast, Option<SyntaxError>) {
        let mut ast = Ast::default();
        let mut header_error = None;

        let header = (|| -> PResult<String> {
            if !self.eat_keyword(Keyword::Package) {
                return Err(self.error("`package`"));
            }
            let q = self.qname()?;
            self.expect_punct(';')?;
            Ok(q)
        })();
        match header {
            Ok(q) => ast.package = Some(q),
            Err(e) => {
                header_error.get_or_insert(e.clone());
                self.diags.push(e);
                self.skip_to_header_boundary();
            }
        }

        while self.peek().is_some_and(|t| t.is_keyword(Keyword::Import)) {
            let start = self.offset();
            self.pos += 1;
            match self.qname().and_then(|q| self.expect_punct(';').map(|_| q)) {
                Ok(qname) => ast.imports.push(Import {
                    qname,
                    span: Span {
                        start,
                        end: self.prev_end(),
                    },
                }),
                Err(e) => {
                    header_error.get_or_insert(e.clone());
                    self.diags.push(e);
                    self.skip_to_header_boundary();
                }
            }
        }

        if self.at_end() {
            self.diags.push(self.error("`class`"));
        }
        while !self.at_end() {
            if !self.peek().is_some_and(|t| t.is_keyword(Keyword::Class)) {
                self.diags.push(self.error("`class`"));
                while self
                    .peek()
                    .is_some_and(|t| !t.is_keyword(Keyword::Class))
                {
                    self.pos += 1;
                }
                continue;
            }
            match self.class_decl() {
                Ok(c) => ast.classes.push(c),
                Err(e) => {
                    self.diags.push(e);
                    while self
                        .peek()
                        .is_some_and(|t| !t.is_keyword(Keyword::Class))
                    {
                        self.pos += 1;
                    }
                }
            }
        }
        (ast, header_error)
    }

    fn class_decl(&mut self) -> PResult<ClassDecl> {
        let start = self.offset();
        self.pos += 1; // `class`
        let name = self.expect_ident()?;
        self.expect_punct('{')?;
        let mut members = Vec::new();
        loop {
            if self.at_end() {
                self.diags.push(self.error("`}`"));
                return Ok(ClassDecl {
                    name,
                    span: Span {
                        start,
                        end: self.eof,
                    },
                    members,
                    closed: false,
                });
            }
            if self.eat_punct('}') {
                break;
            }
            match self.member() {
                Ok(m) => {
                    let open = matches!(&m, Member::Method(md) if !md.body.closed);
                    members.push(m);
                    if open {
                        return Ok(ClassDecl {
                            name,
                            span: Span {
                                start,
                                end: self.eof,
                            },
                            members,
                            closed: false,
                        });
                    }
                }
                Err(e) => {
                    self.diags.push(e);
                    self.recover();
                }
            }
        }
        Ok(ClassDecl {
            name,
            span: Span {
                start,
                end: self.prev_end(),
            },
            members,
            closed: true,
        })
    }

    fn member(&mut self) -> PResult<Member> {
        let start = self.offset();
        let ty = self.type_name()?;
        let name = self.expect_ident()?;
        if self.eat_punct(';') {
            return Ok(Member::Field(FieldDecl {
                ty,
                name,
                span: Span {
                    start,
                    end: self.prev_end(),
                },
            }));
        }
        if !self.eat_punct('(') {
            return Err(self.error("`;` or `(`"));
        }
        let params = self.params()?;
        let body = self.block()?;
        Ok(Member::Method(MethodDecl {
            ret: ty,
            name,
            params,
            span: Span {
                start,
                end: self.prev_end(),
            },
            body,
        }))
    }

    fn params(&mut self) -> PResult<Vec<Param>> {
        let mut params = Vec::new();
        if self.eat_punct(')') {
            return Ok(params);
        }
        loop {
            let ty = self.type_name()?;
            let name = self.expect_ident()?;
            params.push(Param { ty, name });
            if self.eat_punct(')') {
                return Ok(params);
            }
            self.expect_punct(',')?;
        }
    }

    fn block(&mut self) -> PResult<Block> {
        self.expect_punct('{')?;
        let mut block = Block::default();
        loop {
            if self.at_end() {
                self.diags.push(self.error("`}`"));
                return Ok(block);
            }
            if self.eat_punct('}') {
                block.closed = true;
                return Ok(block);
            }
            let stmt_start = self.pos;
            match self.stmt() {
                Ok(s) => block.stmts.push(s),
                Err(e) if e.at_end => {
                    block.tail = self.toks[stmt_start..].to_vec();
                    self.pos = self.toks.len();
                    self.diags.push(e);
                    return Ok(block);
                }
                Err(e) => {
                    self.diags.push(e);
                    self.recover();
                    if self.at_end() {
                        block.tail = self.toks[stmt_start..].to_vec();
                        return Ok(block);
                    }
                }
            }
        }
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let start = self.offset();
        if self.eat_keyword(Keyword::Return) {
            let expr = if self.peek().is_some_and(|t| t.is_punct(';')) {
                None
            } else {
                Some(self.expr()?)
            };
            self.expect_punct(';')?;
            return Ok(Stmt::Return {
                expr,
                span: Span {
                    start,
                    end: self.prev_end(),
                },
            });
        }
        let is_local = match self.peek().map(|t| &t.kind) {
            Some(TokenKind::Keyword(k)) => k.is_type(),
            Some(TokenKind::Ident(_)) => {
                matches!(self.peek_at(1).map(|t| &t.kind), Some(TokenKind::Ident(_)))
            }
            _ => false,
        };
        if is_local {
            let ty = self.type_name()?;
            let name = self.expect_ident()?;
            self.expect_punct('=')?;
            let init = self.expr()?;
            self.expect_punct(';')?;
            return Ok(Stmt::Local {
                ty,
                name,
                init,
                span: Span {
                    start,
                    end: self.prev_end(),
                },
            });
        }
        let expr = self.expr()?;
        self.expect_punct(';')?;
        Ok(Stmt::Expr {
            expr,
            span: Span {
                start,
                end: self.prev_end(),
            },
        })
    }

    fn call_args(&mut self) -> PResult<Option<Vec<Expr>>> {
        if !self.eat_punct('(') {
            return Ok(None);
        }
        let mut args = Vec::new();
        if self.eat_punct(')') {
            return Ok(Some(args));
        }
        loop {
            args.push(self.expr()?);
            if self.eat_punct(')') {
                return Ok(Some(args));
            }
            self.expect_punct(',')?;
        }
    }

    fn expr(&mut self) -> PResult<Expr> {
        let start = self.offset();
        let head = match self.peek().map(|t| &t.kind) {
            Some(TokenKind::Ident(name)) => {
                let name = name.clone();
                self.pos += 1;
                let args = self.call_args()?;
                Primary::Name {
                    name,
                    args,
                    span: Span {
                        start,
                        end: self.prev_end(),
                    },
                }
            }
            Some(TokenKind::Int(v)) => {
                let v = v.clone();
                self.pos += 1;
                Primary::Int(v)
            }
            Some(TokenKind::Str(v)) => {
                let v = v.clone();
                self.pos += 1;
                Primary::Str(v)
            }
            _ => return Err(self.error("expression")),
        };
        let mut chain = Vec::new();
        while self.eat_punct('.') {
            let name_start = self.offset();
            let name = self.expect_ident()?;
            let args = self.call_args()?;
            chain.push(Access {
                name,
                args,
                span: Span {
                    start: name_start,
                    end: self.prev_end(),
                },
            });
        }
        Ok(Expr {
            head,
            chain,
            span: Span {
                start,
                end: self.prev_end(),
            },
        })
    }
}

/// Parse a complete or truncated file.
pub fn parse(tokens: &[Token], eof: usize) -> ParseOutput {
    let mut p = Parser::new(tokens, eof);
    let (ast, header_error) = p.file();
    ParseOutput {
        ast,
        diagnostics: p.diags,
        header_error,
    }
}

/// Parse a statement sequence that may be followed by closing braces only.
///
/// Returns the statements and the number of trailing `}` tokens.
pub fn parse_statements(tokens: &[Token], eof: usize) -> PResult<(Vec<Stmt>, usize)> {
    let mut p = Parser::new(tokens, eof);
    let mut stmts = Vec::new();
    while !p.at_end() && !p.peek().is_some_and(|t| t.is_punct('}')) {
        stmts.push(p.stmt()?);
    }
    let mut closers = 0;
    while p.eat_punct('}') {
        closers += 1;
    }
    if !p.at_end() {
        return Err(p.error("end of line"));
    }
    Ok((stmts, closers))
}

/// Parse exactly one expression.
pub fn parse_expr(tokens: &[Token], eof: usize) -> PResult<Expr> {
    let mut p = Parser::new(tokens, eof);
    let e = p.expr()?;
    if !p.at_end() {
        return Err(p.error("end of expression"));
    }
    Ok(e)
}

/// Parse a rendered method signature `type name(type a, ...)`, with an optional body.
pub fn parse_signature(tokens: &[Token], eof: usize) -> PResult<(String, String, Vec<Param>)> {
    let mut p = Parser::new(tokens, eof);
    let ret = p.type_name()?;
    let name = p.expect_ident()?;
    p.expect_punct('(')?;
    let params = p.params()?;
    if !p.at_end() {
        return Err(p.error("end of signature"));
    }
    Ok((ret, name, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::lexer::lex;

    fn parse_src(src: &str) -> ParseOutput {
        parse(&lex(src).unwrap(), src.len())
    }

    #[test]
    fn parses_full_file() {
        let out = parse_src(
            "package util; import a.B; class S { int n; str trim(str x) { str y = x.trim(); return y; } }",
        );
        assert!(out.diagnostics.is_empty(), "{:?}", out.diagnostics);
        assert_eq!(out.ast.package.as_deref(), Some("util"));
        assert_eq!(out.ast.imports[0].qname, "a.B");
        let c = &out.ast.classes[0];
        assert!(c.closed);
        assert_eq!(c.members.len(), 2);
    }

    #[test]
    fn prefix_keeps_open_method_and_tail() {
        let src = "package p; class A { void m(int a) { int b = 1; str s = a.";
        let out = parse_src(src);
        assert_eq!(out.hard_diagnostics().count(), 0);
        let (class, method) = out.ast.open_method().unwrap();
        assert_eq!(class.name, "A");
        assert_eq!(method.params.len(), 1);
        assert_eq!(method.body.stmts.len(), 1);
        assert_eq!(method.body.tail.len(), 5);
    }

    #[test]
    fn body_error_recovers_next_member() {
        let out = parse_src("package p; class A { void m() { x = ; } int k; }");
        assert_eq!(out.hard_diagnostics().count(), 1);
        let c = &out.ast.classes[0];
        assert!(c.closed);
        assert_eq!(c.members.len(), 2);
    }

    #[test]
    fn statements_with_closers() {
        let toks = lex("a.b(); return; } }").unwrap();
        let (stmts, closers) = parse_statements(&toks, 20).unwrap();
        assert_eq!(stmts.len(), 2);
        assert_eq!(closers, 2);
    }
}
