use std::path::Path;

use super::ast::{Ast, Member};
use super::lexer::{lex, lex_prefix};
use super::parser::{parse, parse_signature};
use super::{AnalyzerError, ClassSummary, MethodSignature, ModuleSummary, SourceFile, SyntaxError};

/// Module id: the package followed by the file stem.
fn module_id(package: &str, path: &str) -> String {
    let stem = Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(path);
    if package.is_empty() {
        stem.to_string()
    } else {
        format!("{package}.{stem}")
    }
}

/// Parse a complete file. Any syntax error fails the whole file.
pub fn parse_file(file: &SourceFile) -> Result<ModuleSummary, AnalyzerError> {
    let tokens = lex(&file.text)?;
    let out = parse(&tokens, file.text.len());
    if let Some(e) = out.diagnostics.into_iter().next() {
        return Err(e.into());
    }
    summarize(&out.ast, &file.path, true)
}

/// Build a summary from whatever declarations the parser recovered.
///
/// With `strict` set, duplicate classes or same-arity overloads are errors;
/// otherwise the later duplicate is dropped.
pub fn summarize(ast: &Ast, path: &str, strict: bool) -> Result<ModuleSummary, AnalyzerError> {
    let package = ast.package.clone().unwrap_or_default();
    let mut classes: Vec<ClassSummary> = Vec::new();
    for class in &ast.classes {
        if classes.iter().any(|c| c.name == class.name) {
            if strict {
                return Err(AnalyzerError::DuplicateClass(class.name.clone()));
            }
            continue;
        }
        let mut summary = ClassSummary {
            name: class.name.clone(),
            signature: format!("class {}", class.name),
            field_names: Vec::new(),
            field_types: Vec::new(),
            methods: Vec::new(),
        };
        for member in &class.members {
            match member {
                Member::Field(f) => {
                    if !summary.field_names.contains(&f.name) {
                        summary.field_names.push(f.name.clone());
                        summary.field_types.push(f.ty.clone());
                    }
                }
                Member::Method(m) => {
                    let params: Vec<(String, String)> = m
                        .params
                        .iter()
                        .map(|p| (p.name.clone(), p.ty.clone()))
                        .collect();
                    let clash = summary
                        .methods_named(&m.name)
                        .any(|existing| existing.arity() == params.len());
                    if clash {
                        if strict {
                            return Err(AnalyzerError::DuplicateMethod {
                                class: class.name.clone(),
                                name: m.name.clone(),
                                arity: params.len(),
                            });
                        }
                        continue;
                    }
                    summary
                        .methods
                        .push(MethodSignature::new(&m.name, &m.ret, params));
                }
            }
        }
        classes.push(summary);
    }
    Ok(ModuleSummary {
        module_id: module_id(&package, path),
        package,
        classes,
    })
}

/// Qualified names from the import section, in source order with duplicates.
///
/// Only the header has to be well formed; the rest of the file may be
/// unfinished or even unlexable.
pub fn extract_imports(file: &SourceFile) -> Result<Vec<String>, SyntaxError> {
    let tokens = lex_prefix(&file.text);
    let out = parse(&tokens, file.text.len());
    if let Some(e) = out.header_error {
        return Err(e);
    }
    Ok(out.ast.imports.into_iter().map(|i| i.qname).collect())
}

/// Re-parse a rendered method signature such as `str trim(str x)`.
pub fn parse_method_signature(rendered: &str) -> Result<MethodSignature, SyntaxError> {
    let tokens = lex(rendered)?;
    let (ret, name, params) = parse_signature(&tokens, rendered.len())?;
    Ok(MethodSignature::new(
        &name,
        &ret,
        params.into_iter().map(|p| (p.name, p.ty)).collect(),
    ))
}
