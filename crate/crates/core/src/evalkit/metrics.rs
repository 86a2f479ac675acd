//! Line- and identifier-level completion metrics.

use std::collections::HashMap;

use crate::analyzer::lexer::Lexer;

pub fn line_em(pred: &str, reference: &str) -> f64 {
    if pred.trim() == reference.trim() {
        1.0
    } else {
        0.0
    }
}

/// Character-level edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - lev / max(len)` over the trimmed lines; two empty lines score 1.
pub fn line_es(pred: &str, reference: &str) -> f64 {
    let (p, r) = (pred.trim(), reference.trim());
    let longest = p.chars().count().max(r.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(p, r) as f64 / longest as f64
}

/// Identifiers in order of appearance, keywords excluded. Lexing stops at
/// the first error.
pub fn extract_identifiers(line: &str) -> Vec<String> {
    Lexer::new(line)
        .map_while(Result::ok)
        .filter_map(|t| t.ident().map(str::to_string))
        .collect()
}

pub fn id_em(pred: &str, reference: &str) -> f64 {
    if extract_identifiers(pred) == extract_identifiers(reference) {
        1.0
    } else {
        0.0
    }
}

/// F1 between the identifier multisets.
pub fn id_f1(pred: &str, reference: &str) -> f64 {
    let p = extract_identifiers(pred);
    let r = extract_identifiers(reference);
    if p.is_empty() && r.is_empty() {
        return 1.0;
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for id in &r {
        *bag.entry(id).or_default() += 1;
    }
    let mut common = 0;
    for id in &p {
        if let Some(n) = bag.get_mut(id.as_str()) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Whether the first identifier of the prediction equals that of the
/// reference; for a line completed right after a dot this is the member.
pub fn member_hit(pred: &str, reference: &str) -> f64 {
    let r = extract_identifiers(reference);
    match r.first() {
        Some(first) if extract_identifiers(pred).first() == Some(first) => 1.0,
        _ => 0.0,
    }
}
