use super::ast::CompareOp;
use super::QueryError;
use crate::duration::unit_millis;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Bare word; keywords are recognised by the parser, case-insensitively.
    Ident(String),
    Var(String),
    IriRef(String),
    PName { prefix: String, local: String },
    Integer(i64),
    Decimal(f64),
    Duration(u64),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Dot,
    Semicolon,
    Comma,
    Star,
    DoubleCaret,
    Op(CompareOp),
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Var(v) => format!("`?{v}`"),
            Tok::IriRef(i) => format!("`<{i}>`"),
            Tok::PName { prefix, local } => format!("`{prefix}:{local}`"),
            Tok::Integer(i) => format!("`{i}`"),
            Tok::Decimal(d) => format!("`{d}`"),
            Tok::Duration(ms) => format!("duration {ms}ms"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Op(op) => format!("`{}`", op.symbol()),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", punct_text(other)),
        }
    }
}

fn punct_text(tok: &Tok) -> &'static str {
    match tok {
        Tok::LBrace => "{",
        Tok::RBrace => "}",
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::LBracket => "[",
        Tok::RBracket => "]",
        Tok::Dot => ".",
        Tok::Semicolon => ";",
        Tok::Comma => ",",
        Tok::Star => "*",
        Tok::DoubleCaret => "^^",
        _ => "?",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
    line: usize,
    col: usize,
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

impl<'a> Lexer<'a> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.chars.clone();
        it.next();
        it.next().map(|(_, c)| c)
    }

    fn offset(&mut self) -> usize {
        self.chars.peek().map(|&(i, _)| i).unwrap_or(self.src.len())
    }

    fn bump(&mut self) -> Option<char> {
        let (_, c) = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err<T>(&self, line: usize, col: usize, message: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::Lexical {
            line,
            col,
            message: message.into(),
        })
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &'a str {
        let start = self.offset();
        while matches!(self.peek(), Some(c) if pred(c)) {
            self.bump();
        }
        let end = self.offset();
        &self.src[start..end]
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => {
                    while !matches!(self.peek(), None | Some('\n')) {
                        self.bump();
                    }
                }
                _ => return,
            }
        }
    }

    /// Local part of a prefixed name; a trailing `.` is left for the parser.
    fn local_name(&mut self) -> String {
        let mut local = String::new();
        loop {
            match self.peek() {
                Some(c) if is_name_char(c) => {
                    local.push(c);
                    self.bump();
                }
                Some('.') if matches!(self.peek2(), Some(c) if is_name_char(c)) => {
                    local.push('.');
                    self.bump();
                }
                _ => return local,
            }
        }
    }

    fn number(&mut self, line: usize, col: usize) -> Result<Tok, QueryError> {
        let mut text = String::new();
        if let Some(sign @ ('-' | '+')) = self.peek() {
            text.push(sign);
            self.bump();
        }
        text.push_str(self.take_while(|c| c.is_ascii_digit()));
        let mut decimal = false;
        if self.peek() == Some('.') && matches!(self.peek2(), Some(c) if c.is_ascii_digit()) {
            decimal = true;
            text.push('.');
            self.bump();
            text.push_str(self.take_while(|c| c.is_ascii_digit()));
        }
        if matches!(self.peek(), Some('e' | 'E'))
            && matches!(self.peek2(), Some(c) if c.is_ascii_digit() || c == '-' || c == '+')
        {
            decimal = true;
            text.push('e');
            self.bump();
            if let Some(sign @ ('-' | '+')) = self.peek() {
                text.push(sign);
                self.bump();
            }
            text.push_str(self.take_while(|c| c.is_ascii_digit()));
        }
        if matches!(self.peek(), Some(c) if c.is_alphabetic()) {
            let unit = self.take_while(|c| c.is_alphabetic());
            if decimal || text.starts_with(['-', '+']) {
                return self.err(line, col, format!("invalid duration `{text}{unit}`"));
            }
            let Some(factor) = unit_millis(unit) else {
                return self.err(line, col, format!("unknown duration unit `{unit}`"));
            };
            return match text.parse::<u64>().ok().and_then(|v| v.checked_mul(factor)) {
                Some(ms) => Ok(Tok::Duration(ms)),
                None => self.err(line, col, format!("duration `{text}{unit}` overflows")),
            };
        }
        if decimal {
            match text.parse::<f64>() {
                Ok(d) if d.is_finite() => Ok(Tok::Decimal(d)),
                _ => self.err(line, col, format!("invalid number `{text}`")),
            }
        } else {
            match text.parse::<i64>() {
                Ok(i) => Ok(Tok::Integer(i)),
                Err(_) => self.err(line, col, format!("invalid integer `{text}`")),
            }
        }
    }

    fn string(&mut self, line: usize, col: usize) -> Result<Tok, QueryError> {
        let quote = self.bump().expect("caller saw a quote");
        let mut value = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return self.err(line, col, "unterminated string"),
                Some(c) if c == quote => return Ok(Tok::Str(value)),
                Some('\\') => match self.bump() {
                    Some('n') => value.push('\n'),
                    Some('t') => value.push('\t'),
                    Some('r') => value.push('\r'),
                    Some(c @ ('"' | '\'' | '\\')) => value.push(c),
                    _ => return self.err(self.line, self.col, "bad escape in string"),
                },
                Some(c) => value.push(c),
            }
        }
    }

    fn next_token(&mut self) -> Result<Token, QueryError> {
        self.skip_trivia();
        let (line, col) = (self.line, self.col);
        let Some(c) = self.peek() else {
            return Ok(Token {
                tok: Tok::Eof,
                line,
                col,
            });
        };
        let tok = match c {
            '{' | '}' | '(' | ')' | '[' | ']' | '.' | ';' | ',' | '*' | '=' => {
                self.bump();
                match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    '.' => Tok::Dot,
                    ';' => Tok::Semicolon,
                    ',' => Tok::Comma,
                    '*' => Tok::Star,
                    _ => Tok::Op(CompareOp::Eq),
                }
            }
            '^' => {
                self.bump();
                if self.peek() != Some('^') {
                    return self.err(line, col, "expected `^^`");
                }
                self.bump();
                Tok::DoubleCaret
            }
            '>' => {
                self.bump();
                if self.peek() == Some('=') {
                    self.bump();
                    Tok::Op(CompareOp::Ge)
                } else {
                    Tok::Op(CompareOp::Gt)
                }
            }
            '<' => {
                // An IRI reference if a closing '>' follows with no whitespace.
                let rest = &self.src[self.offset() + 1..];
                let iri_end = rest.find(|c: char| c == '>' || c.is_whitespace() || c == '<');
                match iri_end {
                    Some(end) if rest[end..].starts_with('>') => {
                        let iri = rest[..end].to_string();
                        for _ in 0..iri.chars().count() + 2 {
                            self.bump();
                        }
                        Tok::IriRef(iri)
                    }
                    _ if looks_like_iri(rest) => {
                        return self.err(line, col, "unterminated IRI reference (missing `>`)");
                    }
                    _ => {
                        self.bump();
                        if self.peek() == Some('=') {
                            self.bump();
                            Tok::Op(CompareOp::Le)
                        } else {
                            Tok::Op(CompareOp::Lt)
                        }
                    }
                }
            }
            '?' | '$' => {
                self.bump();
                let name = self.take_while(is_name_char);
                if name.is_empty() || name.starts_with('-') {
                    return self.err(line, col, "empty variable name");
                }
                Tok::Var(name.to_string())
            }
            '"' | '\'' => self.string(line, col)?,
            '0'..='9' => self.number(line, col)?,
            '-' | '+' if matches!(self.peek2(), Some(d) if d.is_ascii_digit()) => {
                self.number(line, col)?
            }
            ':' => {
                self.bump();
                let local = self.local_name();
                Tok::PName {
                    prefix: String::new(),
                    local,
                }
            }
            c if c.is_alphabetic() || c == '_' => {
                let word = self.take_while(is_name_char);
                if self.peek() == Some(':') {
                    self.bump();
                    let local = self.local_name();
                    Tok::PName {
                        prefix: word.to_string(),
                        local,
                    }
                } else {
                    Tok::Ident(word.to_string())
                }
            }
            other => return self.err(line, col, format!("unexpected character {other:?}")),
        };
        Ok(Token { tok, line, col })
    }
}

/// `scheme:` right after a `<`, as in `<http://...`.
fn looks_like_iri(rest: &str) -> bool {
    let scheme_len = rest
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '+' || c == '-' || c == '.'))
        .unwrap_or(rest.len());
    scheme_len > 0 && rest.as_bytes()[0].is_ascii_alphabetic() && rest[scheme_len..].starts_with(':')
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, QueryError> {
    let mut lexer = Lexer {
        chars: src.char_indices().peekable(),
        src,
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    loop {
        let token = lexer.next_token()?;
        let done = token.tok == Tok::Eof;
        out.push(token);
        if done {
            return Ok(out);
        }
    }
}
