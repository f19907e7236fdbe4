//! Concrete syntax:
//!
//! ```text
//! φ := tt | ff | expr cmp expr [cmp expr] | !φ | φ & φ | φ | φ
//!    | φ U[a,b] φ | F[a,b] φ | G[a,b] φ | (φ)
//! ```
//!
//! Binding, loosest first: `|`, `U`, `&`, prefix operators. `U` is right
//! associative. A chained comparison `a <= x <= b` is the conjunction of its
//! two comparisons.

use super::{Atom, CmpOp, Formula, MitlError};
use crate::expr::{tokenize, Cursor, Scope, SyntaxError, Tok};

pub fn parse_formula(text: &str, scope: &Scope) -> Result<Formula, MitlError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        c: Cursor::new(&toks, text.len()),
        scope,
    };
    let f = p.or()?;
    if p.c.peek().is_some() {
        return Err(SyntaxError::new(p.c.pos(), "unexpected trailing input").into());
    }
    Ok(f)
}

struct Parser<'a> {
    c: Cursor<'a>,
    scope: &'a Scope,
}

impl Parser<'_> {
    fn keyword(&self, kw: &str) -> bool {
        matches!(self.c.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn temporal_keyword(&self, kw: &str) -> bool {
        self.keyword(kw) && self.c.toks.get(self.c.i + 1).map(|t| &t.tok) == Some(&Tok::LBracket)
    }

    fn or(&mut self) -> Result<Formula, MitlError> {
        let mut lhs = self.until()?;
        while self.c.peek() == Some(&Tok::Bar) {
            self.c.bump();
            let rhs = self.until()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Formula, MitlError> {
        let lhs = self.and()?;
        if self.temporal_keyword("U") {
            self.c.bump();
            let (lo, hi) = self.interval()?;
            let rhs = self.until()?;
            return Ok(Formula::until(lhs, rhs, lo, hi));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, MitlError> {
        let mut lhs = self.unary()?;
        while self.c.peek() == Some(&Tok::Amp) {
            self.c.bump();
            let rhs = self.unary()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, MitlError> {
        if self.c.peek() == Some(&Tok::Bang) {
            self.c.bump();
            return Ok(Formula::negate(self.unary()?));
        }
        for kw in ["F", "G"] {
            if self.temporal_keyword(kw) {
                self.c.bump();
                let (lo, hi) = self.interval()?;
                let body = self.unary()?;
                return Ok(if kw == "F" {
                    Formula::eventually(body, lo, hi)
                } else {
                    Formula::always(body, lo, hi)
                });
            }
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Formula, MitlError> {
        if self.keyword("tt") {
            self.c.bump();
            return Ok(Formula::True);
        }
        if self.keyword("ff") {
            self.c.bump();
            return Ok(Formula::negate(Formula::True));
        }
        if self.c.peek() == Some(&Tok::LParen) {
            // `(` opens either an arithmetic term or a nested formula
            let save = self.c.i;
            match self.comparison() {
                Ok(f) => return Ok(f),
                Err(_) => self.c.i = save,
            }
            self.c.bump();
            let f = self.or()?;
            self.c.expect(&Tok::RParen, "`)`")?;
            return Ok(f);
        }
        self.comparison()
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        match self.c.peek() {
            Some(Tok::Lt) => Some(CmpOp::Lt),
            Some(Tok::Le) => Some(CmpOp::Le),
            Some(Tok::Gt) => Some(CmpOp::Gt),
            Some(Tok::Ge) => Some(CmpOp::Ge),
            _ => None,
        }
    }

    fn comparison(&mut self) -> Result<Formula, MitlError> {
        let lhs = self.c.parse_expr(self.scope)?;
        let op = self
            .cmp_op()
            .ok_or_else(|| SyntaxError::new(self.c.pos(), "expected a comparison operator"))?;
        self.c.bump();
        let mid = self.c.parse_expr(self.scope)?;
        let first = Formula::Atom(Atom {
            lhs,
            op,
            rhs: mid.clone(),
        });
        if let Some(op2) = self.cmp_op() {
            self.c.bump();
            let rhs = self.c.parse_expr(self.scope)?;
            let second = Formula::Atom(Atom {
                lhs: mid,
                op: op2,
                rhs,
            });
            return Ok(Formula::and(first, second));
        }
        Ok(first)
    }

    fn interval(&mut self) -> Result<(f64, f64), MitlError> {
        let pos = self.c.pos();
        self.c.expect(&Tok::LBracket, "`[`")?;
        let lo = self.bound()?;
        self.c.expect(&Tok::Comma, "`,`")?;
        let hi = self.bound()?;
        self.c.expect(&Tok::RBracket, "`]`")?;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return Err(MitlError::Interval { pos, lo, hi });
        }
        Ok((lo, hi))
    }

    fn bound(&mut self) -> Result<f64, MitlError> {
        let pos = self.c.pos();
        let consts = Scope {
            species: Vec::new(),
            constants: self.scope.constants.clone(),
        };
        let e = self.c.parse_expr(&consts)?;
        e.constant_value()
            .ok_or_else(|| SyntaxError::new(pos, "time bound must be constant").into())
    }
}
