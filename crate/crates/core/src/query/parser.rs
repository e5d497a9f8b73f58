use std::collections::BTreeMap;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::validate::{validate, Anchor, Severity};
use super::QueryError;
use crate::model::{vocab, Datatype, Literal};

/// Source positions of the constructs validation diagnostics point at.
#[derive(Default)]
struct Positions {
    window: (usize, usize),
    projection: Vec<(usize, usize)>,
    binds: Vec<(usize, usize)>,
    group_by: Vec<(usize, usize)>,
    having: (usize, usize),
    where_clause: (usize, usize),
}

impl Positions {
    fn of(&self, anchor: Anchor) -> (usize, usize) {
        match anchor {
            Anchor::Window => self.window,
            Anchor::Projection(i) => self.projection.get(i).copied().unwrap_or(self.where_clause),
            Anchor::Bind(i) => self.binds.get(i).copied().unwrap_or(self.where_clause),
            Anchor::GroupBy(i) => self.group_by.get(i).copied().unwrap_or(self.where_clause),
            Anchor::Having => self.having,
            Anchor::Where => self.where_clause,
        }
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    prefixes: BTreeMap<String, String>,
    positions: Positions,
}

/// Parses and validates one `REGISTER QUERY` text.
pub fn parse_query(text: &str) -> Result<ContinuousQuery, QueryError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        prefixes: BTreeMap::new(),
        positions: Positions::default(),
    };
    let query = parser.query()?;
    let errors: Vec<_> = validate(&query)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .collect();
    if let Some(first) = errors.first() {
        let (line, col) = parser.positions.of(first.anchor);
        return Err(QueryError::Validation {
            line,
            col,
            diagnostics: errors,
        });
    }
    Ok(query)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let token = self.tokens[self.pos].clone();
        if token.tok != Tok::Eof {
            self.pos += 1;
        }
        token
    }

    fn here(&self) -> (usize, usize) {
        let t = self.peek();
        (t.line, t.col)
    }

    fn syntax<T>(&self, expected: &str) -> Result<T, QueryError> {
        let t = self.peek();
        Err(QueryError::Syntax {
            line: t.line,
            col: t.col,
            message: format!("expected {expected}, found {}", t.tok.describe()),
        })
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(w) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.at_keyword(kw) {
            self.next();
            Ok(())
        } else {
            self.syntax(kw)
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if &self.peek().tok == tok {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), QueryError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            self.syntax(what)
        }
    }

    fn var(&mut self) -> Result<Var, QueryError> {
        match &self.peek().tok {
            Tok::Var(name) => {
                let v = Var::new(name.clone());
                self.next();
                Ok(v)
            }
            _ => self.syntax("a variable"),
        }
    }

    fn expand(&self, token: &Token, prefix: &str, local: &str) -> Result<String, QueryError> {
        match self.prefixes.get(prefix) {
            Some(ns) => Ok(format!("{ns}{local}")),
            None => Err(QueryError::UnknownPrefix {
                line: token.line,
                col: token.col,
                prefix: prefix.to_string(),
            }),
        }
    }

    fn iri(&mut self) -> Result<String, QueryError> {
        let token = self.peek().clone();
        match &token.tok {
            Tok::IriRef(iri) => {
                self.next();
                Ok(iri.clone())
            }
            Tok::PName { prefix, local } => {
                let iri = self.expand(&token, prefix, local)?;
                self.next();
                Ok(iri)
            }
            _ => self.syntax("an IRI"),
        }
    }

    fn query(&mut self) -> Result<ContinuousQuery, QueryError> {
        self.keyword("REGISTER")?;
        self.keyword("QUERY")?;
        let name = match &self.peek().tok {
            Tok::Ident(name) if !name.eq_ignore_ascii_case("AS") => name.clone(),
            _ => return self.syntax("a query name"),
        };
        self.next();
        self.keyword("AS")?;

        while self.at_keyword("PREFIX") {
            self.next();
            let prefix = match &self.peek().tok {
                Tok::PName { prefix, local } if local.is_empty() => prefix.clone(),
                _ => return self.syntax("a prefix label such as `pos:`"),
            };
            self.next();
            let iri = match &self.peek().tok {
                Tok::IriRef(iri) => iri.clone(),
                _ => return self.syntax("a namespace IRI"),
            };
            self.next();
            self.prefixes.insert(prefix, iri);
        }

        self.keyword("SELECT")?;
        let projection = self.projection()?;

        self.keyword("FROM")?;
        self.keyword("STREAM")?;
        let stream_iri = self.iri()?;
        let window = self.window()?;

        self.positions.where_clause = self.here();
        self.keyword("WHERE")?;
        let (patterns, binds) = self.group_graph_pattern()?;

        let mut group_by = Vec::new();
        if self.at_keyword("GROUP") {
            self.next();
            self.keyword("BY")?;
            while let Tok::Var(_) = self.peek().tok {
                self.positions.group_by.push(self.here());
                group_by.push(self.var()?);
            }
            if group_by.is_empty() {
                return self.syntax("a grouping variable");
            }
        }

        let mut having = None;
        if self.at_keyword("HAVING") {
            self.positions.having = self.here();
            self.next();
            self.expect(Tok::LParen, "`(`")?;
            let var = self.var()?;
            let op = match self.peek().tok {
                Tok::Op(op) => op,
                _ => return self.syntax("a comparison operator"),
            };
            self.next();
            let value = self.number()?;
            self.expect(Tok::RParen, "`)`")?;
            having = Some(Having { var, op, value });
        }

        if self.peek().tok != Tok::Eof {
            return self.syntax("end of query");
        }
        Ok(ContinuousQuery {
            name,
            prefixes: self.prefixes.clone(),
            projection,
            stream_iri,
            window,
            patterns,
            binds,
            group_by,
            having,
        })
    }

    fn number(&mut self) -> Result<Number, QueryError> {
        let n = match self.peek().tok {
            Tok::Integer(i) => Number::Integer(i),
            Tok::Decimal(d) => Number::Decimal(d),
            _ => return self.syntax("a number"),
        };
        self.next();
        Ok(n)
    }

    fn projection(&mut self) -> Result<Vec<Projection>, QueryError> {
        let mut items = Vec::new();
        loop {
            match self.peek().tok {
                Tok::Var(_) => {
                    self.positions.projection.push(self.here());
                    items.push(Projection::Var(self.var()?));
                }
                Tok::LParen => {
                    self.positions.projection.push(self.here());
                    self.next();
                    self.keyword("COUNT")?;
                    self.expect(Tok::LParen, "`(`")?;
                    let distinct = self.at_keyword("DISTINCT");
                    if distinct {
                        self.next();
                    }
                    let var = self.var()?;
                    self.expect(Tok::RParen, "`)`")?;
                    self.keyword("AS")?;
                    let alias = self.var()?;
                    self.expect(Tok::RParen, "`)`")?;
                    items.push(Projection::Count {
                        var,
                        distinct,
                        alias,
                    });
                }
                _ => break,
            }
        }
        if items.is_empty() {
            return self.syntax("a projection");
        }
        Ok(items)
    }

    fn duration(&mut self) -> Result<u64, QueryError> {
        let ms = match self.peek().tok {
            Tok::Duration(ms) => ms,
            Tok::Integer(i) if i >= 0 => i as u64,
            _ => return self.syntax("a duration such as `30m` or `5s`"),
        };
        self.next();
        Ok(ms)
    }

    fn window(&mut self) -> Result<WindowSpec, QueryError> {
        let (line, col) = self.here();
        if self.peek().tok != Tok::LBracket {
            return Err(QueryError::MissingWindow { line, col });
        }
        self.positions.window = (line, col);
        self.next();
        self.keyword("RANGE")?;
        let range_ms = self.duration()?;
        self.keyword("STEP")?;
        let step_ms = self.duration()?;
        self.expect(Tok::RBracket, "`]`")?;
        Ok(WindowSpec { range_ms, step_ms })
    }

    fn group_graph_pattern(&mut self) -> Result<(Vec<TriplePattern>, Vec<Bind>), QueryError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut patterns = Vec::new();
        let mut binds = Vec::new();
        loop {
            if self.eat(&Tok::RBrace) {
                break;
            }
            if self.at_keyword("BIND") {
                self.positions.binds.push(self.here());
                binds.push(self.bind()?);
                self.eat(&Tok::Dot);
                continue;
            }
            if self.peek().tok == Tok::Eof {
                return self.syntax("`}`");
            }
            self.triples_block(&mut patterns)?;
            if !self.eat(&Tok::Dot) && self.peek().tok != Tok::RBrace && !self.at_keyword("BIND")
            {
                return self.syntax("`.` or `}`");
            }
        }
        Ok((patterns, binds))
    }

    fn triples_block(&mut self, out: &mut Vec<TriplePattern>) -> Result<(), QueryError> {
        let subject = self.term(false)?;
        loop {
            let predicate = self.verb()?;
            loop {
                let object = self.term(true)?;
                out.push(TriplePattern {
                    subject: subject.clone(),
                    predicate: predicate.clone(),
                    object,
                });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            if !self.eat(&Tok::Semicolon) {
                return Ok(());
            }
            // A trailing ';' before '.' or '}' is allowed.
            if matches!(self.peek().tok, Tok::Dot | Tok::RBrace) {
                return Ok(());
            }
        }
    }

    fn verb(&mut self) -> Result<PatternTerm, QueryError> {
        match &self.peek().tok {
            Tok::Ident(a) if a == "a" => {
                self.next();
                Ok(PatternTerm::Iri(vocab::RDF_TYPE.to_string()))
            }
            Tok::Var(_) => Ok(PatternTerm::Var(self.var()?)),
            Tok::IriRef(_) | Tok::PName { .. } => Ok(PatternTerm::Iri(self.iri()?)),
            _ => self.syntax("a predicate"),
        }
    }

    fn term(&mut self, allow_literal: bool) -> Result<PatternTerm, QueryError> {
        match &self.peek().tok {
            Tok::Var(_) => Ok(PatternTerm::Var(self.var()?)),
            Tok::IriRef(_) | Tok::PName { .. } => Ok(PatternTerm::Iri(self.iri()?)),
            Tok::Str(s) if allow_literal => {
                let lexical = s.clone();
                self.next();
                let datatype = if self.eat(&Tok::DoubleCaret) {
                    let (line, col) = self.here();
                    let iri = self.iri()?;
                    Datatype::from_iri(&iri).ok_or_else(|| QueryError::Syntax {
                        line,
                        col,
                        message: format!("unsupported datatype <{iri}>"),
                    })?
                } else {
                    Datatype::String
                };
                Ok(PatternTerm::Literal(Literal { lexical, datatype }))
            }
            Tok::Integer(_) | Tok::Decimal(_) if allow_literal => {
                let n = self.number()?;
                Ok(PatternTerm::Literal(Literal {
                    lexical: n.to_string(),
                    datatype: Datatype::Double,
                }))
            }
            _ if allow_literal => self.syntax("a variable, IRI or literal"),
            _ => self.syntax("a variable or IRI"),
        }
    }

    fn round_function(&mut self) -> Result<(), QueryError> {
        let token = self.peek().clone();
        let ok = match &token.tok {
            Tok::Ident(w) => w.eq_ignore_ascii_case("ROUND"),
            Tok::PName { prefix, local } => {
                self.expand(&token, prefix, local)? == format!("{}round", vocab::FN)
            }
            Tok::IriRef(iri) => *iri == format!("{}round", vocab::FN),
            _ => false,
        };
        if !ok {
            return self.syntax("`fn:round` (the only supported function)");
        }
        self.next();
        Ok(())
    }

    fn bind(&mut self) -> Result<Bind, QueryError> {
        self.keyword("BIND")?;
        self.expect(Tok::LParen, "`(`")?;
        self.round_function()?;
        self.expect(Tok::LParen, "`(`")?;
        let (source, factor) = match self.peek().tok {
            Tok::Var(_) => {
                let v = self.var()?;
                self.expect(Tok::Star, "`*`")?;
                (v, self.number()?)
            }
            Tok::Integer(_) | Tok::Decimal(_) => {
                let n = self.number()?;
                self.expect(Tok::Star, "`*`")?;
                (self.var()?, n)
            }
            _ => return self.syntax("`?var * number`"),
        };
        self.expect(Tok::RParen, "`)`")?;
        self.keyword("AS")?;
        let target = self.var()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(Bind {
            source,
            factor,
            target,
        })
    }
}
