//! Names in scope at a cursor and receiver typing.

use std::sync::OnceLock;

use super::ast::{Ast, Expr, Primary, Stmt};
use super::lexer::{lex_prefix, Token, TokenKind};
use super::parser::{parse, parse_expr};
use super::{AnalyzerError, ClassSummary, MethodSignature, Position, Provenance, SourceFile, ValidTokenSet};
use crate::repo_index::SymbolIndex;

/// Members of the builtin `str` type.
pub(crate) fn builtin_str() -> &'static ClassSummary {
    static STR: OnceLock<ClassSummary> = OnceLock::new();
    STR.get_or_init(|| ClassSummary {
        name: "str".into(),
        signature: "class str".into(),
        field_names: Vec::new(),
        field_types: Vec::new(),
        methods: vec![
            MethodSignature::new("len", "int", Vec::new()),
            MethodSignature::new("trim", "str", Vec::new()),
        ],
    })
}

/// Static type of an expression.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Ty<'a> {
    /// `int`, `bool`, `void`: no members.
    Primitive,
    /// A class (or `str`) with members.
    Class(&'a ClassSummary),
}

impl<'a> Ty<'a> {
    pub(crate) fn members(self) -> Option<&'a ClassSummary> {
        match self {
            Ty::Primitive => None,
            Ty::Class(c) => Some(c),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Var {
    pub name: String,
    pub ty: String,
    pub provenance: Provenance,
}

/// Everything visible at the cursor, reconstructed from the parsed prefix.
pub(crate) struct Scope<'a> {
    /// Qualified import names that resolve in the index.
    pub imports: Vec<(String, &'a ClassSummary)>,
    pub own_class: Option<(String, ClassSummary)>,
    /// Fields, then params, then locals; later entries shadow earlier ones.
    pub vars: Vec<Var>,
    pub in_method: bool,
    /// Cut-off statement tokens before the cursor.
    pub tail: Vec<Token>,
}

pub(crate) fn parse_prefix(prefix: &str) -> Ast {
    let tokens = lex_prefix(prefix);
    parse(&tokens, prefix.len()).ast
}

/// Index of the `(` matching the `)` at `close`.
fn matching_open(toks: &[Token], close: usize) -> Option<usize> {
    let mut depth = 0usize;
    for j in (0..=close).rev() {
        match toks[j].kind {
            TokenKind::Punct(')') => depth += 1,
            TokenKind::Punct('(') => {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
            _ => {}
        }
    }
    None
}

fn simple_name(qname: &str) -> &str {
    qname.rsplit('.').next().unwrap_or(qname)
}

impl<'a> Scope<'a> {
    pub(crate) fn at_prefix(prefix: &str, index: &'a SymbolIndex) -> Scope<'a> {
        let ast = parse_prefix(prefix);
        let imports = ast
            .imports
            .iter()
            .filter_map(|i| index.get(&i.qname).map(|c| (i.qname.clone(), c)))
            .collect();
        let mut scope = Scope {
            imports,
            own_class: None,
            vars: Vec::new(),
            in_method: false,
            tail: Vec::new(),
        };
        let Some(class) = ast.open_class() else {
            return scope;
        };
        // Fields of the enclosing class: the full declaration from the index
        // when available, otherwise what the prefix has declared so far.
        let qname = match &ast.package {
            Some(p) if !p.is_empty() => format!("{p}.{}", class.name),
            _ => class.name.clone(),
        };
        let summary = index.get(&qname).cloned().unwrap_or_else(|| {
            super::summarize(
                &Ast {
                    package: ast.package.clone(),
                    imports: Vec::new(),
                    classes: vec![class.clone()],
                },
                "",
                false,
            )
            .map(|m| m.classes.into_iter().next().expect("one class"))
            .expect("lenient summarize never fails")
        });
        for (n, t) in summary.field_names.iter().zip(&summary.field_types) {
            scope.vars.push(Var {
                name: n.clone(),
                ty: t.clone(),
                provenance: Provenance::Field,
            });
        }
        scope.own_class = Some((class.name.clone(), summary));
        if let Some((_, method)) = ast.open_method() {
            scope.in_method = true;
            for p in &method.params {
                scope.vars.push(Var {
                    name: p.name.clone(),
                    ty: p.ty.clone(),
                    provenance: Provenance::Param,
                });
            }
            for s in &method.body.stmts {
                if let Stmt::Local { ty, name, .. } = s {
                    scope.vars.push(Var {
                        name: name.clone(),
                        ty: ty.clone(),
                        provenance: Provenance::Local,
                    });
                }
            }
            scope.tail = method.body.tail.clone();
        }
        scope
    }

    pub(crate) fn lookup_var(&self, name: &str) -> Option<&Var> {
        self.vars.iter().rev().find(|v| v.name == name)
    }

    pub(crate) fn class_named(&self, name: &str) -> Option<&'a ClassSummary> {
        self.imports
            .iter()
            .rev()
            .find(|(q, _)| simple_name(q) == name)
            .map(|(_, c)| *c)
    }

    pub(crate) fn is_own_class(&self, name: &str) -> bool {
        self.own_class.as_ref().is_some_and(|(n, _)| n == name)
    }

    /// Resolve a declared type name.
    pub(crate) fn resolve_type(&self, name: &str) -> Option<Ty<'_>> {
        match name {
            "int" | "bool" | "void" => Some(Ty::Primitive),
            "str" => Some(Ty::Class(builtin_str())),
            _ => {
                if let Some(c) = self.class_named(name) {
                    return Some(Ty::Class(c));
                }
                match &self.own_class {
                    Some((n, c)) if n == name => Some(Ty::Class(c)),
                    _ => None,
                }
            }
        }
    }

    /// Type of an expression, or `None` when any part fails to resolve.
    pub(crate) fn type_of(&self, expr: &Expr) -> Option<Ty<'_>> {
        let mut ty = match &expr.head {
            Primary::Int(_) => Ty::Primitive,
            Primary::Str(_) => Ty::Class(builtin_str()),
            Primary::Name { name, args, .. } => match args {
                Some(_) => self.resolve_type(name).filter(|_| {
                    self.class_named(name).is_some() || self.is_own_class(name)
                })?,
                None => match self.lookup_var(name) {
                    Some(v) => self.resolve_type(&v.ty)?,
                    None if self.class_named(name).is_some() => self.resolve_type(name)?,
                    None => return None,
                },
            },
        };
        for access in &expr.chain {
            let class = ty.members()?;
            let next = match &access.args {
                None => class.field_type(&access.name)?,
                Some(args) => class
                    .methods_named(&access.name)
                    .find(|m| m.arity() == args.len())?
                    .return_type
                    .as_str(),
            };
            ty = self.resolve_type(next)?;
        }
        Some(ty)
    }

    /// The receiver expression tokens when the tail ends with a member-access dot.
    pub(crate) fn dot_receiver(&self) -> Option<&[Token]> {
        let last = self.tail.last()?;
        if !last.is_punct('.') {
            return None;
        }
        let toks = &self.tail[..self.tail.len() - 1];
        let mut i = toks.len();
        loop {
            if i > 0 && toks[i - 1].is_punct(')') {
                i = matching_open(toks, i - 1)?;
            }
            if i == 0 {
                return None;
            }
            match toks[i - 1].kind {
                TokenKind::Ident(_) => i -= 1,
                TokenKind::Int(_) | TokenKind::Str(_) => return Some(&toks[i - 1..]),
                _ => return None,
            }
            if i > 0 && toks[i - 1].is_punct('.') {
                i -= 1;
                continue;
            }
            return Some(&toks[i..]);
        }
    }

    /// Names legal at a statement position (no receiver).
    pub(crate) fn plain_names(&self) -> ValidTokenSet {
        let mut set = ValidTokenSet::new();
        for (q, _) in &self.imports {
            set.insert(simple_name(q), Provenance::ImportedClass);
        }
        for v in &self.vars {
            set.insert(&v.name, v.provenance);
        }
        set
    }
}

pub(crate) fn members_as_set(class: &ClassSummary) -> ValidTokenSet {
    class
        .member_names()
        .into_iter()
        .map(|n| (n.to_string(), Provenance::MemberOfReceiver))
        .collect()
}

fn prefix_of(file: &SourceFile, cursor: Position) -> &str {
    let cut = cursor.min(file.text.len());
    &file.text[..cut]
}

/// Identifiers valid at `cursor`.
///
/// Directly after a member-access dot this is the receiver type's members;
/// otherwise locals and params declared before the cursor, fields of the
/// enclosing class, and imported classes that resolve in `index`.
pub fn valid_identifiers_at(
    file: &SourceFile,
    cursor: Position,
    index: &SymbolIndex,
) -> Result<ValidTokenSet, AnalyzerError> {
    let scope = Scope::at_prefix(prefix_of(file, cursor), index);
    match scope.dot_receiver() {
        None if scope.tail.last().is_some_and(|t| t.is_punct('.')) => Err(
            AnalyzerError::UnresolvedReceiver(String::new()),
        ),
        None => Ok(scope.plain_names()),
        Some(recv) => {
            let text = render_tokens(&file.text, recv);
            let eof = recv.last().map_or(0, |t| t.end);
            let expr = parse_expr(recv, eof).map_err(|_| AnalyzerError::UnresolvedReceiver(text.clone()))?;
            match scope.type_of(&expr) {
                Some(Ty::Class(c)) => Ok(members_as_set(c)),
                Some(Ty::Primitive) => Ok(ValidTokenSet::new()),
                None => Err(AnalyzerError::UnresolvedReceiver(text)),
            }
        }
    }
}

/// As [`valid_identifiers_at`], but an unresolvable receiver yields every
/// member of every indexed class.
pub fn valid_identifiers_or_fallback(
    file: &SourceFile,
    cursor: Position,
    index: &SymbolIndex,
) -> Result<ValidTokenSet, AnalyzerError> {
    match valid_identifiers_at(file, cursor, index) {
        Err(AnalyzerError::UnresolvedReceiver(_)) => Ok(index
            .all_member_names()
            .into_iter()
            .map(|n| (n, Provenance::MemberOfReceiver))
            .collect()),
        other => other,
    }
}

fn render_tokens(src: &str, toks: &[Token]) -> String {
    match (toks.first(), toks.last()) {
        (Some(a), Some(b)) => src[a.start..b.end].to_string(),
        _ => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::SourceFile;
    use crate::repo_index::{build_index, RepoSnapshot};

    fn index_of(files: &[(&str, &str)]) -> SymbolIndex {
        build_index(&RepoSnapshot::new(
            "/r",
            "r",
            files.iter().map(|(p, t)| SourceFile::new(*p, *t)).collect(),
        ))
        .unwrap()
    }

    fn at_end(text: &str, index: &SymbolIndex) -> Result<ValidTokenSet, AnalyzerError> {
        let f = SourceFile::new("p/T.sub", text);
        valid_identifiers_at(&f, text.len(), index)
    }

    fn names(set: &ValidTokenSet) -> Vec<&str> {
        set.identifiers().collect()
    }

    #[test]
    fn str_receiver_members() {
        let idx = index_of(&[("p/T.sub", "package p; class T { }")]);
        let set = at_end("package p; class T { void m() { str s = \"a\"; s.", &idx).unwrap();
        assert_eq!(names(&set), vec!["len", "trim"]);
        assert!(set.iter().all(|(_, p)| p == Provenance::MemberOfReceiver));
    }

    #[test]
    fn method_start_scope() {
        let idx = index_of(&[
            ("util/C.sub", "package util; class C { int k; }"),
            ("p/T.sub", "package p; import util.C; class T { int b; void m(int a) { } }"),
        ]);
        let set = at_end("package p; import util.C; class T { int b; void m(int a) { ", &idx).unwrap();
        assert_eq!(names(&set), vec!["C", "a", "b"]);
        assert_eq!(set.provenance("a"), Some(Provenance::Param));
        assert_eq!(set.provenance("b"), Some(Provenance::Field));
        assert_eq!(set.provenance("C"), Some(Provenance::ImportedClass));
    }

    #[test]
    fn empty_scope_only_params() {
        let idx = index_of(&[("p/T.sub", "package p; class T { void m(int a) { } }")]);
        let set = at_end("package p; class T { void m(int a) { ", &idx).unwrap();
        assert_eq!(names(&set), vec!["a"]);
        let idx = index_of(&[("p/T.sub", "package p; class T { void m() { } }")]);
        assert!(at_end("package p; class T { void m() { ", &idx).unwrap().is_empty());
    }

    #[test]
    fn locals_before_cursor_only() {
        let idx = index_of(&[("p/T.sub", "package p; class T { }")]);
        let set = at_end("package p; class T { void m() { int x = 1; int y = ", &idx).unwrap();
        assert_eq!(names(&set), vec!["x"]);
        assert_eq!(set.provenance("x"), Some(Provenance::Local));
    }

    #[test]
    fn chained_receiver_types() {
        let idx = index_of(&[
            ("a/Box.sub", "package a; class Box { str label; Box next() { return Box(); } int size(int k) { return k; } }"),
        ]);
        let pre = "package p; import a.Box; class T { void m() { Box b = Box(); int n = b.next().";
        assert_eq!(names(&at_end(pre, &idx).unwrap()), vec!["label", "next", "size"]);
        let pre = "package p; import a.Box; class T { void m() { Box b = Box(); b.label.";
        assert_eq!(names(&at_end(pre, &idx).unwrap()), vec!["len", "trim"]);
        let pre = "package p; import a.Box; class T { void m() { Box b = Box(); f(b.size(1).";
        assert!(at_end(pre, &idx).unwrap().is_empty());
        let pre = "package p; import a.Box; class T { void m() { Box.";
        assert_eq!(at_end(pre, &idx).unwrap().len(), 3);
    }

    #[test]
    fn unresolved_receiver_and_fallback() {
        let idx = index_of(&[("a/Box.sub", "package a; class Box { int w; }")]);
        let text = "package p; class T { void m() { ghost.";
        assert!(matches!(
            at_end(text, &idx),
            Err(AnalyzerError::UnresolvedReceiver(r)) if r == "ghost"
        ));
        let f = SourceFile::new("p/T.sub", text);
        let set = valid_identifiers_or_fallback(&f, text.len(), &idx).unwrap();
        assert_eq!(names(&set), vec!["w"]);
    }
}
