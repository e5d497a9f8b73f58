//! The continuous-query dialect: `REGISTER QUERY`, prefixes, `COUNT`
//! aggregates, one `FROM STREAM` with a `[RANGE .. STEP ..]` window, a basic
//! graph pattern with `round(?v * k)` binds, `GROUP BY` and `HAVING`.
//!
//! Keywords are case-insensitive, variables are not.

mod ast;
mod format;
mod lexer;
mod parser;
mod validate;

use thiserror::Error;

pub use ast::{
    Bind, CompareOp, ContinuousQuery, Having, Number, PatternTerm, Projection, TriplePattern, Var,
    WindowSpec,
};
pub use format::format_query;
pub use parser::parse_query;
pub use validate::{lint, validate, Anchor, Code, Diagnostic, Severity};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("{line}:{col}: lexical error: {message}")]
    Lexical {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{line}:{col}: unknown prefix `{prefix}:`")]
    UnknownPrefix {
        line: usize,
        col: usize,
        prefix: String,
    },
    #[error("{line}:{col}: missing window: FROM STREAM needs `[RANGE <duration> STEP <duration>]`")]
    MissingWindow { line: usize, col: usize },
    #[error("{line}:{col}: invalid query: {}", format_diagnostics(.diagnostics))]
    Validation {
        line: usize,
        col: usize,
        diagnostics: Vec<Diagnostic>,
    },
}

fn format_diagnostics(diagnostics: &[Diagnostic]) -> String {
    diagnostics
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl QueryError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            QueryError::Lexical { line, col, .. }
            | QueryError::Syntax { line, col, .. }
            | QueryError::UnknownPrefix { line, col, .. }
            | QueryError::MissingWindow { line, col }
            | QueryError::Validation { line, col, .. } => (*line, *col),
        }
    }
}

/// The published lost-phone query, with plain `COUNT(?UE)`.
pub const LISTING_QUERY: &str = include_str!("../../../../queries/listing1.rq");

/// The shipped detection query: identical except for `COUNT(DISTINCT ?UE)`,
/// so that a phone reporting several times inside the window counts once.
pub const DETECTION_QUERY: &str = include_str!("../../../../queries/detection.rq");

impl ContinuousQuery {
    /// Copy reading `stream_iri` under a new name.
    pub fn retargeted(&self, name: impl Into<String>, stream_iri: impl Into<String>) -> Self {
        ContinuousQuery {
            name: name.into(),
            stream_iri: stream_iri.into(),
            ..self.clone()
        }
    }

    /// Copy without the HAVING filter, reporting every group.
    pub fn without_having(&self, name: impl Into<String>) -> Self {
        ContinuousQuery {
            name: name.into(),
            having: None,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::vocab;

    #[test]
    fn listing_parses_to_expected_ast() {
        let q = parse_query(LISTING_QUERY).unwrap();
        assert_eq!(q.name, "StreamingAndExternalStaticRdfGraph");
        assert_eq!(
            q.window,
            WindowSpec {
                range_ms: 1_800_000,
                step_ms: 5_000
            }
        );
        assert_eq!(q.stream_iri, vocab::STREAM);
        assert_eq!(q.prefixes.len(), 4);
        assert_eq!(q.prefixes["pos"], vocab::POS);
        assert_eq!(q.prefixes["net"], vocab::NET);
        assert_eq!(
            q.projection,
            vec![
                Projection::Count {
                    var: Var::new("UE"),
                    distinct: false,
                    alias: Var::new("counter")
                },
                Projection::Var(Var::new("lat")),
                Projection::Var(Var::new("long")),
            ]
        );
        assert_eq!(q.patterns.len(), 4);
        assert_eq!(
            q.patterns[0],
            TriplePattern {
                subject: PatternTerm::Var(Var::new("UE")),
                predicate: PatternTerm::Iri(vocab::HAS_STATUS.into()),
                object: PatternTerm::Iri(vocab::UNREACHABLE.into()),
            }
        );
        assert_eq!(
            q.patterns[3].predicate,
            PatternTerm::Iri(vocab::LONG.into())
        );
        assert_eq!(
            q.binds,
            vec![
                Bind {
                    source: Var::new("lat"),
                    factor: Number::Integer(1000),
                    target: Var::new("roundLat")
                },
                Bind {
                    source: Var::new("long"),
                    factor: Number::Integer(1000),
                    target: Var::new("roundLong")
                },
            ]
        );
        assert_eq!(q.group_by, vec![Var::new("roundLat"), Var::new("roundLong")]);
        assert_eq!(
            q.having,
            Some(Having {
                var: Var::new("counter"),
                op: CompareOp::Gt,
                value: Number::Integer(10)
            })
        );
        assert!(validate(&q).is_empty());
        let warnings = lint(&q);
        assert_eq!(warnings.len(), 2);
        assert!(warnings
            .iter()
            .all(|d| d.code == Code::NongroupedProjection && d.severity == Severity::Warning));
    }

    #[test]
    fn detection_query_differs_only_in_distinct() {
        let listing = parse_query(LISTING_QUERY).unwrap();
        let mut detection = parse_query(DETECTION_QUERY).unwrap();
        if let Projection::Count { distinct, .. } = &mut detection.projection[0] {
            assert!(*distinct);
            *distinct = false;
        }
        detection.name = listing.name.clone();
        assert_eq!(detection, listing);
    }

    #[test]
    fn format_is_a_fixpoint() {
        let q = parse_query(LISTING_QUERY).unwrap();
        let text = format_query(&q);
        assert_eq!(parse_query(&text).unwrap(), q);
        assert_eq!(format_query(&parse_query(&text).unwrap()), text);
        assert!(text.contains("[RANGE 30m STEP 5s]"));
        assert!(text.contains("HAVING (?counter > 10)"));
    }

    #[test]
    fn format_sorts_prefixes_and_omits_empty_having() {
        let q = parse_query(LISTING_QUERY).unwrap().without_having("q");
        let text = format_query(&q);
        assert!(!text.contains("HAVING"));
        let labels: Vec<&str> = text
            .lines()
            .filter_map(|l| l.strip_prefix("PREFIX "))
            .map(|l| l.split(':').next().unwrap())
            .collect();
        assert_eq!(labels, vec!["fn", "net", "pos", "xsd"]);
    }

    const MINI: &str = "REGISTER QUERY q AS PREFIX p: <http://ex/> \
        SELECT (COUNT(?s) AS ?n) FROM STREAM <http://ex/s> [RANGE 10s STEP 5s] \
        WHERE { ?s p:q ?o . BIND(ROUND(?o * 10) AS ?k) } GROUP BY ?k";

    #[test]
    fn window_errors() {
        let no_window = MINI.replace("[RANGE 10s STEP 5s]", "");
        assert!(matches!(
            parse_query(&no_window),
            Err(QueryError::MissingWindow { .. })
        ));
        let zero_range = MINI.replace("RANGE 10s", "RANGE 0s");
        match parse_query(&zero_range) {
            Err(QueryError::Validation { diagnostics, .. }) => {
                assert_eq!(diagnostics[0].code, Code::InvalidWindow)
            }
            other => panic!("{other:?}"),
        }
        let zero_step = MINI.replace("STEP 5s", "STEP 0s");
        assert!(matches!(
            parse_query(&zero_step),
            Err(QueryError::Validation { .. })
        ));
    }

    #[test]
    fn distinct_error_kinds() {
        assert!(matches!(
            parse_query("REGISTER QUERY q AS SELECT ?x FROM STREAM <s> [RANGE 1s STEP 1s] WHERE { ?x z:p ?y }"),
            Err(QueryError::UnknownPrefix { ref prefix, .. }) if prefix == "z"
        ));
        assert!(matches!(
            parse_query(&MINI.replace("SELECT", "SELECT @")),
            Err(QueryError::Lexical { .. })
        ));
        assert!(matches!(
            parse_query(&MINI.replace("GROUP BY", "GROUP")),
            Err(QueryError::Syntax { .. })
        ));
        assert_eq!(
            parse_query("").unwrap_err(),
            QueryError::Syntax {
                line: 1,
                col: 1,
                message: "expected REGISTER, found end of input".into()
            }
        );
    }

    #[test]
    fn validation_codes() {
        let q = parse_query(MINI).unwrap();
        assert!(validate(&q).is_empty());

        let mut unbound = q.clone();
        unbound.group_by.push(Var::new("nowhere"));
        let d = validate(&unbound);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, Code::UnboundGroupKey);
        assert_eq!(d[0].code.as_str(), "UNBOUND_GROUP_KEY");

        let collide = MINI.replace("AS ?n", "AS ?k");
        match parse_query(&collide) {
            Err(QueryError::Validation { diagnostics, .. }) => {
                assert!(diagnostics.iter().any(|d| d.code == Code::AliasCollision))
            }
            other => panic!("{other:?}"),
        }

        let bad_having = format!("{MINI} HAVING (?o > 1)");
        match parse_query(&bad_having) {
            Err(QueryError::Validation { diagnostics, line, col }) => {
                assert_eq!(diagnostics[0].code, Code::InvalidHavingVar);
                assert_eq!((line, col), (1, bad_having.find("HAVING").unwrap() + 1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn keywords_are_case_insensitive() {
        let lower = MINI
            .replace("REGISTER QUERY", "register query")
            .replace("SELECT", "select")
            .replace("GROUP BY", "group by")
            .replace("WHERE", "where");
        assert_eq!(parse_query(&lower).unwrap(), parse_query(MINI).unwrap());
        // Variables are case-sensitive.
        let mixed = MINI.replace("?k", "?K").replacen("?K", "?k", 1);
        assert!(parse_query(&mixed).is_err());
    }
}
