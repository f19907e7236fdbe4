//! Metric interval temporal logic over piecewise-constant trajectories.
//!
//! Formulae are monitored exactly: atomic propositions only change value at
//! jump times, so every subformula is a finite union of intervals and the
//! temporal operators are computed by interval arithmetic on those sets.
//!
//! Conventions: the until witness window `[t+T1, t+T2]` is closed, and the
//! left operand must hold on `[t, t')` (not at the witness itself).

mod parse;
pub mod signal;

use std::fmt;

use thiserror::Error;

use crate::expr::{Expr, SyntaxError};
use crate::model::Trajectory;
pub use parse::parse_formula;
use signal::{Interval, Signal};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MitlError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("malformed interval at offset {pos}: [{lo}, {hi}] (need 0 <= T1 <= T2 < inf)")]
    Interval { pos: usize, lo: f64, hi: f64 },
    #[error("trajectory horizon {horizon} is shorter than the required window {needed}")]
    HorizonTooShort { needed: f64, horizon: f64 },
    #[error("a formula set needs between 1 and {max} formulae, got {got}")]
    FormulaCount { got: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub lhs: Expr,
    pub op: CmpOp,
    pub rhs: Expr,
}

impl Atom {
    pub fn holds(&self, counts: &[u32]) -> bool {
        self.op.apply(self.lhs.eval(counts), self.rhs.eval(counts))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    Atom(Atom),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Until {
        lhs: Box<Formula>,
        rhs: Box<Formula>,
        lo: f64,
        hi: f64,
    },
    /// `F[lo,hi] φ`, equivalent to `tt U[lo,hi] φ`.
    Eventually { body: Box<Formula>, lo: f64, hi: f64 },
    /// `G[lo,hi] φ`, equivalent to `!F[lo,hi] !φ`.
    Always { body: Box<Formula>, lo: f64, hi: f64 },
}

impl Formula {
    pub fn negate(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::negate(Formula::and(Formula::negate(a), Formula::negate(b)))
    }

    pub fn until(lhs: Formula, rhs: Formula, lo: f64, hi: f64) -> Formula {
        Formula::Until {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            lo,
            hi,
        }
    }

    pub fn eventually(body: Formula, lo: f64, hi: f64) -> Formula {
        Formula::Eventually {
            body: Box::new(body),
            lo,
            hi,
        }
    }

    pub fn always(body: Formula, lo: f64, hi: f64) -> Formula {
        Formula::Always {
            body: Box::new(body),
            lo,
            hi,
        }
    }

    /// Length of trajectory needed past the evaluation time: the largest
    /// sum of upper bounds along any path of nested temporal operators.
    pub fn horizon_needed(&self) -> f64 {
        match self {
            Formula::True | Formula::Atom(_) => 0.0,
            Formula::Not(f) => f.horizon_needed(),
            Formula::And(a, b) => a.horizon_needed().max(b.horizon_needed()),
            Formula::Until { lhs, rhs, hi, .. } => {
                hi + lhs.horizon_needed().max(rhs.horizon_needed())
            }
            Formula::Eventually { body, hi, .. } | Formula::Always { body, hi, .. } => {
                hi + body.horizon_needed()
            }
        }
    }

    /// Nesting depth of the formula tree.
    pub fn depth(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) => 0,
            Formula::Not(f) => 1 + f.depth(),
            Formula::And(a, b) => 1 + a.depth().max(b.depth()),
            Formula::Until { lhs, rhs, .. } => 1 + lhs.depth().max(rhs.depth()),
            Formula::Eventually { body, .. } | Formula::Always { body, .. } => 1 + body.depth(),
        }
    }

    /// True-set of the formula over `[0, horizon - horizon_needed]`.
    pub fn signal(&self, x: &Trajectory) -> Signal {
        match self {
            Formula::True => Signal::always_true(x.horizon()),
            Formula::Atom(atom) => atom_signal(atom, x),
            Formula::Not(f) => f.signal(x).complement(),
            Formula::And(a, b) => a.signal(x).intersect(&b.signal(x)),
            Formula::Until { lhs, rhs, lo, hi } => {
                Signal::until(&lhs.signal(x), &rhs.signal(x), *lo, *hi)
            }
            Formula::Eventually { body, lo, hi } => body.signal(x).dilate(*lo, *hi),
            Formula::Always { body, lo, hi } => body.signal(x).erode(*lo, *hi),
        }
    }
}

fn atom_signal(atom: &Atom, x: &Trajectory) -> Signal {
    let h = x.horizon();
    let mut ivs = Vec::new();
    let mut open: Option<f64> = None;
    for (t, counts) in x.segments() {
        let v = atom.holds(counts);
        match (v, open) {
            (true, None) => open = Some(t),
            (false, Some(start)) => {
                ivs.push(Interval {
                    lo: start,
                    hi: t,
                    lo_closed: true,
                    hi_closed: false,
                });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        ivs.push(Interval::closed(start, h));
    }
    Signal::from_intervals(h, ivs)
}

/// Boolean satisfaction of `f` by `x` at time `t`.
pub fn eval_formula(f: &Formula, x: &Trajectory, t: f64) -> Result<bool, MitlError> {
    let needed = t + f.horizon_needed();
    if needed > x.horizon() {
        return Err(MitlError::HorizonTooShort {
            needed,
            horizon: x.horizon(),
        });
    }
    Ok(f.signal(x).contains(t))
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(f, "tt"),
            Formula::Atom(a) => write!(f, "({} {} {})", a.lhs, a.op.symbol(), a.rhs),
            Formula::Not(g) => write!(f, "!{g}"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Until { lhs, rhs, lo, hi } => write!(f, "({lhs} U[{lo},{hi}] {rhs})"),
            Formula::Eventually { body, lo, hi } => write!(f, "F[{lo},{hi}] {body}"),
            Formula::Always { body, lo, hi } => write!(f, "G[{lo},{hi}] {body}"),
        }
    }
}

/// Index into the `2^n` joint truth patterns; bit `i` is formula `i`
/// (formula 0 is the least significant bit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TruthPattern(pub u32);

impl TruthPattern {
    pub fn from_bits(bits: &[bool]) -> Self {
        TruthPattern(
            bits.iter()
                .enumerate()
                .fold(0, |acc, (i, &b)| acc | (u32::from(b) << i)),
        )
    }

    pub fn bit(self, i: usize) -> bool {
        (self.0 >> i) & 1 == 1
    }
}

/// Ordered, named list of formulae; the order fixes the bit positions of
/// truth patterns.
#[derive(Debug, Clone)]
pub struct FormulaSet {
    names: Vec<String>,
    formulas: Vec<Formula>,
}

impl FormulaSet {
    pub const MAX_FORMULAS: usize = 16;

    pub fn new(named: Vec<(String, Formula)>) -> Result<Self, MitlError> {
        if named.is_empty() || named.len() > Self::MAX_FORMULAS {
            return Err(MitlError::FormulaCount {
                got: named.len(),
                max: Self::MAX_FORMULAS,
            });
        }
        let (names, formulas) = named.into_iter().unzip();
        Ok(FormulaSet { names, formulas })
    }

    pub fn len(&self) -> usize {
        self.formulas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.formulas.is_empty()
    }

    pub fn num_patterns(&self) -> usize {
        1 << self.formulas.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn formulas(&self) -> &[Formula] {
        &self.formulas
    }

    /// Horizon needed to evaluate every formula at time 0.
    pub fn horizon_needed(&self) -> f64 {
        self.formulas
            .iter()
            .map(Formula::horizon_needed)
            .fold(0.0, f64::max)
    }

    /// Joint truth pattern of all formulae at time 0.
    pub fn joint_pattern(&self, x: &Trajectory) -> Result<TruthPattern, MitlError> {
        let mut idx = 0u32;
        for (i, f) in self.formulas.iter().enumerate() {
            if eval_formula(f, x, 0.0)? {
                idx |= 1 << i;
            }
        }
        Ok(TruthPattern(idx))
    }
}
