//! Tokenizer and arithmetic expressions over species counts and constants.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Syntax error with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at offset {pos}: {message}")]
pub struct SyntaxError {
    pub pos: usize,
    pub message: String,
}

impl SyntaxError {
    pub(crate) fn new(pos: usize, message: impl Into<String>) -> Self {
        SyntaxError {
            pos,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Le,
    Gt,
    Ge,
    Amp,
    Bar,
    Bang,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: usize,
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, SyntaxError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = |t: Tok| Token { tok: t, pos: start };
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push(single(Tok::LParen)),
            b')' => out.push(single(Tok::RParen)),
            b'[' => out.push(single(Tok::LBracket)),
            b']' => out.push(single(Tok::RBracket)),
            b',' => out.push(single(Tok::Comma)),
            b'+' => out.push(single(Tok::Plus)),
            b'-' => out.push(single(Tok::Minus)),
            b'*' => out.push(single(Tok::Star)),
            b'/' => out.push(single(Tok::Slash)),
            b'&' => {
                if bytes.get(i + 1) == Some(&b'&') {
                    i += 1;
                }
                out.push(single(Tok::Amp))
            }
            b'|' => {
                if bytes.get(i + 1) == Some(&b'|') {
                    i += 1;
                }
                out.push(single(Tok::Bar))
            }
            b'!' => out.push(single(Tok::Bang)),
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                let tok = match (c, eq) {
                    (b'<', false) => Tok::Lt,
                    (b'<', true) => Tok::Le,
                    (_, false) => Tok::Gt,
                    (_, true) => Tok::Ge,
                };
                if eq {
                    i += 1;
                }
                out.push(single(tok));
            }
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let s = &text[i..j];
                let v: f64 = s
                    .parse()
                    .map_err(|_| SyntaxError::new(i, format!("malformed number `{s}`")))?;
                out.push(Token {
                    tok: Tok::Num(v),
                    pos: start,
                });
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(text[i..j].to_string()),
                    pos: start,
                });
                i = j;
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(SyntaxError::new(i, format!("unexpected character `{ch}`")));
            }
        }
        i += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Arithmetic expression. Species are referenced by index into the state
/// vector; named constants are folded to numbers at parse time.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Species(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, counts: &[u32]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Species(i) => f64::from(counts[*i]),
            Expr::Neg(e) => -e.eval(counts),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(counts), b.eval(counts));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
        }
    }

    /// Value if the expression mentions no species.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            Expr::Species(_) => None,
            Expr::Neg(e) => e.constant_value().map(|v| -v),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.constant_value()?, b.constant_value()?);
                Some(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                })
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Species(i) => write!(f, "x{i}"),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({a} {s} {b})")
            }
        }
    }
}

/// Names visible inside expressions.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    pub species: Vec<String>,
    pub constants: BTreeMap<String, f64>,
}

impl Scope {
    pub fn new(species: Vec<String>) -> Self {
        Scope {
            species,
            constants: BTreeMap::new(),
        }
    }

    pub fn with_constant(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    fn resolve(&self, name: &str) -> Option<Expr> {
        if let Some(i) = self.species.iter().position(|s| s == name) {
            return Some(Expr::Species(i));
        }
        self.constants.get(name).map(|v| Expr::Num(*v))
    }
}

/// Recursive-descent cursor over a token stream.
pub(crate) struct Cursor<'a> {
    pub toks: &'a [Token],
    pub i: usize,
    pub end_pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(toks: &'a [Token], end_pos: usize) -> Self {
        Cursor { toks, i: 0, end_pos }
    }

    pub fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.tok)
    }


    pub fn pos(&self) -> usize {
        self.toks.get(self.i).map_or(self.end_pos, |t| t.pos)
    }

    pub fn bump(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.i).map(|t| &t.tok);
        self.i += 1;
        t
    }

    pub fn expect(&mut self, want: &Tok, what: &str) -> Result<(), SyntaxError> {
        if self.peek() == Some(want) {
            self.i += 1;
            Ok(())
        } else {
            Err(SyntaxError::new(self.pos(), format!("expected {what}")))
        }
    }

    pub fn parse_expr(&mut self, scope: &Scope) -> Result<Expr, SyntaxError> {
        let mut lhs = self.parse_term(scope)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.i += 1;
            let rhs = self.parse_term(scope)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_term(&mut self, scope: &Scope) -> Result<Expr, SyntaxError> {
        let mut lhs = self.parse_unary(scope)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.i += 1;
            let rhs = self.parse_unary(scope)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_unary(&mut self, scope: &Scope) -> Result<Expr, SyntaxError> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.i += 1;
                Ok(Expr::Neg(Box::new(self.parse_unary(scope)?)))
            }
            Some(Tok::Plus) => {
                self.i += 1;
                self.parse_unary(scope)
            }
            _ => self.parse_primary(scope),
        }
    }

    fn parse_primary(&mut self, scope: &Scope) -> Result<Expr, SyntaxError> {
        let pos = self.pos();
        match self.bump().cloned() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Ident(name)) => scope
                .resolve(&name)
                .ok_or_else(|| SyntaxError::new(pos, format!("unknown name `{name}`"))),
            Some(Tok::LParen) => {
                let e = self.parse_expr(scope)?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            _ => Err(SyntaxError::new(pos, "expected a number, name or `(`")),
        }
    }
}

/// Parses a standalone arithmetic expression.
pub fn parse_expr(text: &str, scope: &Scope) -> Result<Expr, SyntaxError> {
    let toks = tokenize(text)?;
    let mut c = Cursor::new(&toks, text.len());
    let e = c.parse_expr(scope)?;
    if c.peek().is_some() {
        return Err(SyntaxError::new(c.pos(), "unexpected trailing input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sirs() -> Scope {
        Scope::new(vec!["S".into(), "I".into(), "R".into()]).with_constant("N", 100.0)
    }

    #[test]
    fn precedence_and_names() {
        let e = parse_expr("0.4*N + I - -2", &sirs()).unwrap();
        assert_eq!(e.eval(&[0, 3, 0]), 45.0);
        let e = parse_expr("(S + I) / 2", &sirs()).unwrap();
        assert_eq!(e.eval(&[4, 6, 0]), 5.0);
        assert_eq!(parse_expr("beta/5", &Scope::default().with_constant("beta", 0.01)).unwrap().constant_value(), Some(0.002));
    }

    #[test]
    fn errors_report_position() {
        let err = parse_expr("S + Q", &sirs()).unwrap_err();
        assert_eq!(err.pos, 4);
        let err = parse_expr("S + ", &sirs()).unwrap_err();
        assert_eq!(err.pos, 4);
        let err = parse_expr("S $ 1", &sirs()).unwrap_err();
        assert_eq!(err.pos, 2);
    }

    #[test]
    fn scientific_notation() {
        assert_eq!(parse_expr("1e-3", &Scope::default()).unwrap().constant_value(), Some(1e-3));
    }
}
