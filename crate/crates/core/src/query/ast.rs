use std::collections::BTreeMap;
use std::fmt;

use crate::model::Literal;

/// A variable name without its `?` sigil.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub String);

impl Var {
    pub fn new(name: impl Into<String>) -> Self {
        Var(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{}", self.0)
    }
}

/// Sliding window over a stream. Both fields are milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub range_ms: u64,
    pub step_ms: u64,
}

/// Integer or decimal constant, kept in the form it was written.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Number {
    Integer(i64),
    Decimal(f64),
}

impl Number {
    pub fn as_f64(self) -> f64 {
        match self {
            Number::Integer(i) => i as f64,
            Number::Decimal(d) => d,
        }
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Number::Integer(i) => write!(f, "{i}"),
            // Debug formatting always keeps a decimal point and round-trips.
            Number::Decimal(d) => write!(f, "{d:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PatternTerm {
    Var(Var),
    /// Expanded IRI.
    Iri(String),
    Literal(Literal),
}

impl PatternTerm {
    pub fn as_var(&self) -> Option<&Var> {
        match self {
            PatternTerm::Var(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

impl TriplePattern {
    pub fn terms(&self) -> [&PatternTerm; 3] {
        [&self.subject, &self.predicate, &self.object]
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.terms().into_iter().filter_map(PatternTerm::as_var)
    }
}

/// `BIND (round(?source * factor) AS ?target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bind {
    pub source: Var,
    pub factor: Number,
    pub target: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Count {
        var: Var,
        distinct: bool,
        alias: Var,
    },
    Var(Var),
}

impl Projection {
    /// The column name this projection produces.
    pub fn output(&self) -> &Var {
        match self {
            Projection::Count { alias, .. } => alias,
            Projection::Var(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Eq => "=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CompareOp::Gt => lhs > rhs,
            CompareOp::Ge => lhs >= rhs,
            CompareOp::Lt => lhs < rhs,
            CompareOp::Le => lhs <= rhs,
            CompareOp::Eq => lhs == rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Having {
    pub var: Var,
    pub op: CompareOp,
    pub value: Number,
}

/// A registered continuous query.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousQuery {
    pub name: String,
    /// Prefix label to namespace IRI.
    pub prefixes: BTreeMap<String, String>,
    pub projection: Vec<Projection>,
    pub stream_iri: String,
    pub window: WindowSpec,
    pub patterns: Vec<TriplePattern>,
    pub binds: Vec<Bind>,
    pub group_by: Vec<Var>,
    pub having: Option<Having>,
}

impl ContinuousQuery {
    /// Variables that the WHERE clause can bind.
    pub fn bound_vars(&self) -> Vec<&Var> {
        let mut vars: Vec<&Var> = Vec::new();
        for v in self
            .patterns
            .iter()
            .flat_map(TriplePattern::vars)
            .chain(self.binds.iter().map(|b| &b.target))
        {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
        vars
    }

    pub fn count_projections(&self) -> impl Iterator<Item = (&Var, bool, &Var)> {
        self.projection.iter().filter_map(|p| match p {
            Projection::Count {
                var,
                distinct,
                alias,
            } => Some((var, *distinct, alias)),
            Projection::Var(_) => None,
        })
    }
}
