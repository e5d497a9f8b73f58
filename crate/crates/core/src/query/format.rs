use std::fmt::Write;

use super::ast::*;
use crate::model::{vocab, Datatype};

fn local_ok(local: &str) -> bool {
    !local.is_empty()
        && !local.ends_with('.')
        && !local.starts_with(['.', '-'])
        && local
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Prefixed name for `iri` using the longest matching namespace, if any.
fn compact(q: &ContinuousQuery, iri: &str) -> String {
    q.prefixes
        .iter()
        .filter_map(|(prefix, ns)| {
            iri.strip_prefix(ns.as_str())
                .filter(|local| local_ok(local))
                .map(|local| (ns.len(), format!("{prefix}:{local}")))
        })
        .max_by_key(|(len, _)| *len)
        .map(|(_, name)| name)
        .unwrap_or_else(|| format!("<{iri}>"))
}

fn term(q: &ContinuousQuery, t: &PatternTerm, verb: bool) -> String {
    match t {
        PatternTerm::Var(v) => v.to_string(),
        PatternTerm::Iri(iri) if verb && iri == vocab::RDF_TYPE => "a".to_string(),
        PatternTerm::Iri(iri) => compact(q, iri),
        PatternTerm::Literal(lit) => {
            let mut s = String::from("\"");
            for c in lit.lexical.chars() {
                match c {
                    '"' => s.push_str("\\\""),
                    '\\' => s.push_str("\\\\"),
                    '\n' => s.push_str("\\n"),
                    '\r' => s.push_str("\\r"),
                    '\t' => s.push_str("\\t"),
                    _ => s.push(c),
                }
            }
            s.push('"');
            if lit.datatype != Datatype::String {
                s.push_str("^^");
                s.push_str(&compact(q, lit.datatype.iri()));
            }
            s
        }
    }
}

/// Canonical text of a query. Prefixes are printed sorted by label and IRIs
/// are compacted with the longest matching prefix.
pub fn format_query(q: &ContinuousQuery) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "REGISTER QUERY {} AS", q.name);
    for (prefix, ns) in &q.prefixes {
        let _ = writeln!(out, "PREFIX {prefix}: <{ns}>");
    }
    let projection: Vec<String> = q
        .projection
        .iter()
        .map(|p| match p {
            Projection::Var(v) => v.to_string(),
            Projection::Count {
                var,
                distinct,
                alias,
            } => format!(
                "(COUNT({}{var}) AS {alias})",
                if *distinct { "DISTINCT " } else { "" }
            ),
        })
        .collect();
    let _ = writeln!(out, "SELECT {}", projection.join(" "));
    let _ = writeln!(
        out,
        "FROM STREAM {} [RANGE {} STEP {}]",
        compact(q, &q.stream_iri),
        crate::duration::format_millis(q.window.range_ms),
        crate::duration::format_millis(q.window.step_ms)
    );
    out.push_str("WHERE {\n");
    for p in &q.patterns {
        let _ = writeln!(
            out,
            "  {} {} {} .",
            term(q, &p.subject, false),
            term(q, &p.predicate, true),
            term(q, &p.object, false)
        );
    }
    let round = q
        .prefixes
        .iter()
        .find(|(_, ns)| ns.as_str() == vocab::FN)
        .map(|(prefix, _)| format!("{prefix}:round"))
        .unwrap_or_else(|| "ROUND".to_string());
    for b in &q.binds {
        let _ = writeln!(
            out,
            "  BIND ({round}({} * {}) AS {})",
            b.source, b.factor, b.target
        );
    }
    out.push_str("}\n");
    if !q.group_by.is_empty() {
        let keys: Vec<String> = q.group_by.iter().map(Var::to_string).collect();
        let _ = writeln!(out, "GROUP BY {}", keys.join(" "));
    }
    if let Some(h) = &q.having {
        let _ = writeln!(out, "HAVING ({} {} {})", h.var, h.op.symbol(), h.value);
    }
    out
}
