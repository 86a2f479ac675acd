//! Syntax tree for the subject language.

use super::lexer::Token;

/// Byte range into the parsed text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Ast {
    pub package: Option<String>,
    pub imports: Vec<Import>,
    pub classes: Vec<ClassDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Import {
    pub qname: String,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct ClassDecl {
    pub name: String,
    pub span: Span,
    pub members: Vec<Member>,
    /// False when input ended before the closing brace.
    pub closed: bool,
}

#[derive(Debug, Clone)]
pub enum Member {
    Field(FieldDecl),
    Method(MethodDecl),
}

#[derive(Debug, Clone)]
pub struct FieldDecl {
    pub ty: String,
    pub name: String,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct MethodDecl {
    pub ret: String,
    pub name: String,
    pub params: Vec<Param>,
    pub body: Block,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub ty: String,
    pub name: String,
}

#[derive(Debug, Clone, Default)]
pub struct Block {
    pub stmts: Vec<Stmt>,
    pub closed: bool,
    /// Tokens of the statement that was cut off by the end of input.
    pub tail: Vec<Token>,
}

#[derive(Debug, Clone)]
pub enum Stmt {
    Local {
        ty: String,
        name: String,
        init: Expr,
        span: Span,
    },
    Expr {
        expr: Expr,
        span: Span,
    },
    Return {
        expr: Option<Expr>,
        span: Span,
    },
}

#[derive(Debug, Clone)]
pub struct Expr {
    pub head: Primary,
    pub chain: Vec<Access>,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub enum Primary {
    Name {
        name: String,
        args: Option<Vec<Expr>>,
        span: Span,
    },
    Int(String),
    Str(String),
}

/// `.name` or `.name(args)` applied to a receiver.
#[derive(Debug, Clone)]
pub struct Access {
    pub name: String,
    pub args: Option<Vec<Expr>>,
    pub span: Span,
}

impl Ast {
    /// The method whose body was still open when the input ended, with its class.
    pub fn open_method(&self) -> Option<(&ClassDecl, &MethodDecl)> {
        let class = self.classes.last().filter(|c| !c.closed)?;
        match class.members.last()? {
            Member::Method(m) if !m.body.closed => Some((class, m)),
            _ => None,
        }
    }

    /// The class whose body was still open when the input ended.
    pub fn open_class(&self) -> Option<&ClassDecl> {
        self.classes.last().filter(|c| !c.closed)
    }
}
