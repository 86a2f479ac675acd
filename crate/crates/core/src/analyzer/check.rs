//! Static checking of a completed line spliced into its file prefix.

use super::ast::{Expr, Primary, Stmt};
use super::lexer::{lex, Lexer};
use super::parser::parse_statements;
use super::scope::{Scope, Ty, Var};
use super::{Diagnostic, Position, Provenance, SourceFile, StaticCheckReport};
use crate::repo_index::SymbolIndex;

struct Checker<'s, 'a> {
    scope: &'s mut Scope<'a>,
    diags: Vec<Diagnostic>,
}

impl Checker<'_, '_> {
    fn report(&mut self, position: Position, message: String) {
        self.diags.push(Diagnostic { position, message });
    }

    fn stmt(&mut self, stmt: &Stmt) {
        match stmt {
            Stmt::Local { ty, name, init, span } => {
                if self.scope.resolve_type(ty).is_none() {
                    self.report(span.start, format!("unknown type {ty}"));
                }
                self.expr(init);
                self.scope.vars.push(Var {
                    name: name.clone(),
                    ty: ty.clone(),
                    provenance: Provenance::Local,
                });
            }
            Stmt::Expr { expr, .. } => {
                self.expr(expr);
            }
            Stmt::Return { expr, .. } => {
                if let Some(e) = expr {
                    self.expr(e);
                }
            }
        }
    }

    fn args(&mut self, args: &Option<Vec<Expr>>) {
        for a in args.iter().flatten() {
            self.expr(a);
        }
    }

    /// Check an expression; `None` means its type is unknown (already reported
    /// when the cause lies in this expression).
    fn expr(&mut self, e: &Expr) -> Option<String> {
        let mut ty: Option<String> = match &e.head {
            Primary::Int(_) => Some("int".into()),
            Primary::Str(_) => Some("str".into()),
            Primary::Name { name, args, span } => {
                self.args(args);
                let is_class =
                    self.scope.class_named(name).is_some() || self.scope.is_own_class(name);
                match args {
                    Some(_) if is_class => Some(name.clone()),
                    Some(_) if self.scope.lookup_var(name).is_some() => {
                        self.report(span.start, format!("{name} is not callable"));
                        return None;
                    }
                    Some(_) => {
                        self.report(span.start, format!("unknown method {name}"));
                        return None;
                    }
                    None => match self.scope.lookup_var(name) {
                        Some(v) => Some(v.ty.clone()),
                        None if self.scope.class_named(name).is_some() => Some(name.clone()),
                        None => {
                            self.report(span.start, format!("unknown identifier {name}"));
                            return None;
                        }
                    },
                }
            }
        };
        for access in &e.chain {
            self.args(&access.args);
            let Some(recv) = ty.take() else {
                self.report(
                    access.span.start,
                    format!("cannot resolve receiver of {}", access.name),
                );
                return None;
            };
            let class = match self.scope.resolve_type(&recv) {
                None => {
                    self.report(
                        access.span.start,
                        format!("cannot resolve receiver type {recv}"),
                    );
                    return None;
                }
                Some(Ty::Primitive) => {
                    self.report(access.span.start, format!("unknown member {}", access.name));
                    return None;
                }
                Some(Ty::Class(c)) => c,
            };
            let name = &access.name;
            let has_method = class.methods_named(name).next().is_some();
            let field = class.field_type(name).map(str::to_string);
            let overload = access.args.as_ref().map(|args| {
                class
                    .methods_named(name)
                    .find(|m| m.arity() == args.len())
                    .map(|m| m.return_type.clone())
            });
            ty = match (&access.args, overload) {
                (None, _) => match field {
                    Some(t) => Some(t),
                    None if has_method => {
                        self.report(access.span.start, format!("method {name} must be called"));
                        return None;
                    }
                    None => {
                        self.report(access.span.start, format!("unknown member {name}"));
                        return None;
                    }
                },
                (Some(_), Some(Some(ret))) => Some(ret),
                (Some(args), _) => {
                    let message = if has_method {
                        format!("no overload of {name} takes {} arguments", args.len())
                    } else if field.is_some() {
                        format!("field {name} is not callable")
                    } else {
                        format!("unknown member {name}")
                    };
                    self.report(access.span.start, message);
                    return None;
                }
            };
        }
        ty
    }
}

/// Check `candidate_line` inserted at `cursor`: the spliced statement must
/// parse and every identifier in it must resolve.
pub fn check_line(
    file: &SourceFile,
    cursor: Position,
    candidate_line: &str,
    index: &SymbolIndex,
) -> StaticCheckReport {
    let prefix = &file.text[..cursor.min(file.text.len())];
    let fail = |position, message: String| {
        StaticCheckReport::from_diagnostics(vec![Diagnostic { position, message }])
    };
    if let Some(Err(e)) = Lexer::new(prefix).find(Result::is_err) {
        return fail(e.offset, e.to_string());
    }
    let mut scope = Scope::at_prefix(prefix, index);
    if !scope.in_method {
        return fail(prefix.len(), "completion point is not inside a method body".into());
    }
    let mut tokens = std::mem::take(&mut scope.tail);
    match lex(candidate_line) {
        Ok(cand) => tokens.extend(cand.into_iter().map(|mut t| {
            t.start += prefix.len();
            t.end += prefix.len();
            t
        })),
        Err(e) => return fail(prefix.len() + e.offset, e.to_string()),
    }
    let eof = prefix.len() + candidate_line.len();
    let (stmts, closers) = match parse_statements(&tokens, eof) {
        Ok(ok) => ok,
        Err(e) => return fail(e.offset, e.to_string()),
    };
    let mut checker = Checker {
        scope: &mut scope,
        diags: Vec::new(),
    };
    if closers > 2 {
        checker.report(eof, "unbalanced `}`".into());
    }
    for s in &stmts {
        checker.stmt(s);
    }
    StaticCheckReport::from_diagnostics(checker.diags)
}
