use std::fmt;

use super::ast::{ContinuousQuery, Projection, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// Stable diagnostic codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Code {
    InvalidWindow,
    EmptyPattern,
    UnboundGroupKey,
    UnboundProjection,
    UnboundCountVar,
    UnboundBindSource,
    BindRebindsVar,
    AliasCollision,
    InvalidHavingVar,
    NongroupedProjection,
}

impl Code {
    pub fn as_str(self) -> &'static str {
        match self {
            Code::InvalidWindow => "INVALID_WINDOW",
            Code::EmptyPattern => "EMPTY_PATTERN",
            Code::UnboundGroupKey => "UNBOUND_GROUP_KEY",
            Code::UnboundProjection => "UNBOUND_PROJECTION",
            Code::UnboundCountVar => "UNBOUND_COUNT_VAR",
            Code::UnboundBindSource => "UNBOUND_BIND_SOURCE",
            Code::BindRebindsVar => "BIND_REBINDS_VAR",
            Code::AliasCollision => "ALIAS_COLLISION",
            Code::InvalidHavingVar => "INVALID_HAVING_VAR",
            Code::NongroupedProjection => "NONGROUPED_PROJECTION",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The query construct a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Window,
    Where,
    Projection(usize),
    Bind(usize),
    GroupBy(usize),
    Having,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub code: Code,
    pub severity: Severity,
    pub message: String,
    pub anchor: Anchor,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{level}[{}]: {}", self.code, self.message)
    }
}

fn error(code: Code, anchor: Anchor, message: String) -> Diagnostic {
    Diagnostic {
        code,
        severity: Severity::Error,
        message,
        anchor,
    }
}

/// Invariant violations. Empty iff the query is executable.
pub fn validate(q: &ContinuousQuery) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let w = q.window;
    if !(w.step_ms > 0 && w.range_ms >= w.step_ms) {
        out.push(error(
            Code::InvalidWindow,
            Anchor::Window,
            format!(
                "window must satisfy RANGE >= STEP > 0 (got RANGE {}ms STEP {}ms)",
                w.range_ms, w.step_ms
            ),
        ));
    }
    if q.patterns.is_empty() {
        out.push(error(
            Code::EmptyPattern,
            Anchor::Where,
            "WHERE clause has no triple patterns".into(),
        ));
    }

    let pattern_vars: Vec<&Var> = q.patterns.iter().flat_map(|p| p.vars()).collect();
    let mut bound: Vec<&Var> = pattern_vars.clone();
    for (i, b) in q.binds.iter().enumerate() {
        if !bound.contains(&&b.source) {
            out.push(error(
                Code::UnboundBindSource,
                Anchor::Bind(i),
                format!("BIND reads {} before it is bound", b.source),
            ));
        }
        if bound.contains(&&b.target) {
            out.push(error(
                Code::BindRebindsVar,
                Anchor::Bind(i),
                format!("BIND target {} is already bound", b.target),
            ));
        }
        bound.push(&b.target);
    }

    for (i, key) in q.group_by.iter().enumerate() {
        if !bound.contains(&key) {
            out.push(error(
                Code::UnboundGroupKey,
                Anchor::GroupBy(i),
                format!("group key {key} is never bound"),
            ));
        }
    }

    let mut outputs: Vec<&Var> = Vec::new();
    for (i, p) in q.projection.iter().enumerate() {
        match p {
            Projection::Var(v) => {
                if !bound.contains(&v) {
                    out.push(error(
                        Code::UnboundProjection,
                        Anchor::Projection(i),
                        format!("projected {v} is never bound"),
                    ));
                }
                if outputs.contains(&v) {
                    out.push(error(
                        Code::AliasCollision,
                        Anchor::Projection(i),
                        format!("{v} is projected twice"),
                    ));
                }
            }
            Projection::Count { var, alias, .. } => {
                if !bound.contains(&var) {
                    out.push(error(
                        Code::UnboundCountVar,
                        Anchor::Projection(i),
                        format!("COUNT over {var}, which is never bound"),
                    ));
                }
                if bound.contains(&alias) || q.group_by.contains(alias) || outputs.contains(&alias)
                {
                    out.push(error(
                        Code::AliasCollision,
                        Anchor::Projection(i),
                        format!("aggregate alias {alias} collides with another variable"),
                    ));
                }
            }
        }
        outputs.push(p.output());
    }

    if let Some(h) = &q.having {
        let is_alias = q.count_projections().any(|(_, _, alias)| *alias == h.var);
        if !is_alias && !q.group_by.contains(&h.var) {
            out.push(error(
                Code::InvalidHavingVar,
                Anchor::Having,
                format!(
                    "HAVING compares {}, which is neither an aggregate alias nor a group key",
                    h.var
                ),
            ));
        }
    }
    out
}

/// Non-fatal findings. A grouped query that projects a non-key variable gets
/// one sample value per group and a NONGROUPED_PROJECTION warning.
pub fn lint(q: &ContinuousQuery) -> Vec<Diagnostic> {
    let grouped = !q.group_by.is_empty() || q.count_projections().next().is_some();
    if !grouped {
        return Vec::new();
    }
    q.projection
        .iter()
        .enumerate()
        .filter_map(|(i, p)| match p {
            Projection::Var(v) if !q.group_by.contains(v) => Some(Diagnostic {
                code: Code::NongroupedProjection,
                severity: Severity::Warning,
                message: format!("{v} is not a group key; one sample value per group is returned"),
                anchor: Anchor::Projection(i),
            }),
            _ => None,
        })
        .collect()
}
