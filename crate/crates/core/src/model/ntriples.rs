//! Line-oriented N-Triples with a trailing `# t=<ms>` timestamp comment.
//!
//! ```text
//! <http://ex/s> <http://ex/p> "1.5"^^<http://www.w3.org/2001/XMLSchema#double> . # t=5000
//! ```
//!
//! Blank lines and lines that only hold a comment are skipped on read.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::{Datatype, Iri, Literal, Term, TimestampedTriple};

#[derive(Debug, Error)]
pub enum NTriplesError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl NTriplesError {
    pub fn line(&self) -> Option<usize> {
        match self {
            NTriplesError::Parse { line, .. } => Some(*line),
            NTriplesError::Io(_) => None,
        }
    }
}

fn push_iri(out: &mut String, iri: &str) {
    out.push('<');
    for c in iri.chars() {
        match c {
            '\u{0}'..='\u{20}' | '<' | '>' | '"' | '{' | '}' | '|' | '^' | '`' | '\\' => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            _ => out.push(c),
        }
    }
    out.push('>');
}

fn push_term(out: &mut String, term: &Term) {
    match term {
        Term::Iri(iri) => push_iri(out, iri.as_str()),
        Term::Blank(label) => {
            out.push_str("_:");
            out.push_str(label);
        }
        Term::Literal(lit) => {
            out.push('"');
            for c in lit.lexical.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    _ => out.push(c),
                }
            }
            out.push('"');
            if lit.datatype != Datatype::String {
                out.push_str("^^");
                push_iri(out, lit.datatype.iri());
            }
        }
    }
}

/// One log line without the terminating newline.
pub fn format_triple(triple: &TimestampedTriple) -> String {
    let mut out = String::with_capacity(160);
    push_term(&mut out, &triple.subject);
    out.push(' ');
    push_iri(&mut out, triple.predicate.as_str());
    out.push(' ');
    push_term(&mut out, &triple.object);
    let _ = write!(out, " . # t={}", triple.timestamp);
    out
}

pub fn write_ntriples<'a, W: Write>(
    mut writer: W,
    triples: impl IntoIterator<Item = &'a TimestampedTriple>,
) -> io::Result<()> {
    for triple in triples {
        writer.write_all(format_triple(triple).as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Streaming reader over a log.
pub struct NTriplesReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Iterator for NTriplesReader<R> {
    type Item = Result<TimestampedTriple, NTriplesError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            match parse_triple_line(&line, self.line_no) {
                Ok(Some(triple)) => return Some(Ok(triple)),
                Ok(None) => continue,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

pub fn read_ntriples<R: BufRead>(reader: R) -> NTriplesReader<R> {
    NTriplesReader {
        lines: reader.lines(),
        line_no: 0,
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, NTriplesError> {
        Err(NTriplesError::Parse {
            line: self.line,
            message: format!("column {}: {}", self.pos + 1, message.into()),
        })
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start_matches([' ', '\t']);
        self.pos = self.text.len() - trimmed.len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn expect(&mut self, c: char) -> Result<(), NTriplesError> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn hex_escape(&mut self, digits: usize) -> Result<char, NTriplesError> {
        let hex = match self.rest().get(..digits) {
            Some(h) if h.bytes().all(|b| b.is_ascii_hexdigit()) => h,
            _ => return self.err("bad \\u escape"),
        };
        self.pos += digits;
        let code = u32::from_str_radix(hex, 16).expect("validated hex digits");
        match char::from_u32(code) {
            Some(c) => Ok(c),
            None => self.err("escape is not a scalar value"),
        }
    }

    fn iri(&mut self) -> Result<Iri, NTriplesError> {
        self.expect('<')?;
        let mut value = String::new();
        loop {
            match self.bump() {
                None => return self.err("unterminated IRI"),
                Some('>') => break,
                Some('\\') => match self.bump() {
                    Some('u') => value.push(self.hex_escape(4)?),
                    Some('U') => value.push(self.hex_escape(8)?),
                    _ => return self.err("bad escape in IRI"),
                },
                Some(c) if c <= ' ' || matches!(c, '<' | '"' | '{' | '}' | '|' | '^' | '`') => {
                    return self.err(format!("character {c:?} not allowed in IRI"))
                }
                Some(c) => value.push(c),
            }
        }
        Ok(Iri::new(value))
    }

    fn blank(&mut self) -> Result<Term, NTriplesError> {
        self.expect('_')?;
        self.expect(':')?;
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
        {
            self.bump();
        }
        let mut label = &self.text[start..self.pos];
        // A trailing '.' belongs to the statement terminator.
        while let Some(stripped) = label.strip_suffix('.') {
            label = stripped;
            self.pos -= 1;
        }
        if label.is_empty() {
            return self.err("empty blank node label");
        }
        Ok(Term::Blank(label.to_string()))
    }

    fn literal(&mut self) -> Result<Literal, NTriplesError> {
        self.expect('"')?;
        let mut lexical = String::new();
        loop {
            match self.bump() {
                None => return self.err("unterminated literal"),
                Some('"') => break,
                Some('\\') => {
                    let c = match self.bump() {
                        Some('t') => '\t',
                        Some('b') => '\u{8}',
                        Some('n') => '\n',
                        Some('r') => '\r',
                        Some('f') => '\u{c}',
                        Some('"') => '"',
                        Some('\'') => '\'',
                        Some('\\') => '\\',
                        Some('u') => self.hex_escape(4)?,
                        Some('U') => self.hex_escape(8)?,
                        _ => return self.err("bad escape in literal"),
                    };
                    lexical.push(c);
                }
                Some(c) => lexical.push(c),
            }
        }
        let datatype = if self.rest().starts_with("^^") {
            self.pos += 2;
            let iri = self.iri()?;
            match Datatype::from_iri(iri.as_str()) {
                Some(dt) => dt,
                None => return self.err(format!("unsupported datatype <{iri}>")),
            }
        } else if self.peek() == Some('@') {
            return self.err("language-tagged literals are not supported");
        } else {
            Datatype::String
        };
        Ok(Literal { lexical, datatype })
    }

    fn subject(&mut self) -> Result<Term, NTriplesError> {
        match self.peek() {
            Some('<') => Ok(Term::Iri(self.iri()?)),
            Some('_') => self.blank(),
            _ => self.err("expected IRI or blank node as subject"),
        }
    }

    fn object(&mut self) -> Result<Term, NTriplesError> {
        match self.peek() {
            Some('<') => Ok(Term::Iri(self.iri()?)),
            Some('_') => self.blank(),
            Some('"') => Ok(Term::Literal(self.literal()?)),
            _ => self.err("expected IRI, blank node or literal as object"),
        }
    }
}

/// Parses one log line. Returns `Ok(None)` for blank and comment-only lines.
pub fn parse_triple_line(
    line: &str,
    line_no: usize,
) -> Result<Option<TimestampedTriple>, NTriplesError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut cur = Cursor {
        text: line,
        pos: 0,
        line: line_no,
    };
    cur.skip_ws();
    if cur.peek().is_none() || cur.peek() == Some('#') {
        return Ok(None);
    }
    let subject = cur.subject()?;
    cur.skip_ws();
    let predicate = cur.iri()?;
    cur.skip_ws();
    let object = cur.object()?;
    cur.skip_ws();
    if cur.peek() != Some('.') {
        return cur.err("missing terminating `.`");
    }
    cur.bump();
    cur.skip_ws();
    let comment = cur.rest();
    let Some(stamp) = comment
        .strip_prefix('#')
        .map(str::trim)
        .and_then(|c| c.strip_prefix("t="))
    else {
        return cur.err("missing `# t=<ms>` timestamp");
    };
    let timestamp = match stamp.trim().parse::<u64>() {
        Ok(t) => t,
        Err(_) => return cur.err(format!("bad timestamp `{stamp}`")),
    };
    Ok(Some(TimestampedTriple {
        subject,
        predicate,
        object,
        timestamp,
    }))
}
