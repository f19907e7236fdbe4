//! Brute-force MITL semantics on a time lattice.
//!
//! When every jump time and every interval bound is a multiple of `delta`,
//! each subformula is constant on the lattice points `j*delta` and on the
//! open cells between them. Class `k` stands for the point `j*delta` when
//! `k = 2j` and for the open cell `(j*delta, (j+1)*delta)` when `k = 2j+1`;
//! `k*delta/2` is a representative time for either. The scan below walks
//! classes one by one, straight from the textual definitions.

use std::collections::HashMap;

use coarseqest::mitl::{eval_formula, Formula};
use coarseqest::model::Trajectory;
use coarseqest::rng::Seed;
use rand::Rng as _;

pub struct LatticeOracle<'a> {
    x: &'a Trajectory,
    delta: f64,
    memo: HashMap<(usize, usize), bool>,
}

impl<'a> LatticeOracle<'a> {
    pub fn new(x: &'a Trajectory, delta: f64) -> Self {
        for &t in x.jump_times() {
            assert_eq!((t / delta).round() * delta, t, "jump off the lattice");
        }
        LatticeOracle {
            x,
            delta,
            memo: HashMap::new(),
        }
    }

    pub fn time_of(&self, class: usize) -> f64 {
        class as f64 * self.delta / 2.0
    }

    fn steps(&self, v: f64) -> usize {
        let s = (v / self.delta).round();
        assert_eq!(s * self.delta, v, "bound off the lattice");
        s as usize
    }

    pub fn holds(&mut self, f: &Formula, k: usize) -> bool {
        let key = (f as *const Formula as usize, k);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let v = match f {
            Formula::True => true,
            Formula::Atom(a) => a.holds(self.x.state_at(self.time_of(k))),
            Formula::Not(g) => !self.holds(g, k),
            Formula::And(a, b) => self.holds(a, k) && self.holds(b, k),
            Formula::Eventually { body, lo, hi } => {
                let (a, b) = (self.steps(*lo), self.steps(*hi));
                (k + 2 * a..=k + 2 * b).any(|c| self.holds(body, c))
            }
            Formula::Always { body, lo, hi } => {
                let (a, b) = (self.steps(*lo), self.steps(*hi));
                (k + 2 * a..=k + 2 * b).all(|c| self.holds(body, c))
            }
            Formula::Until { lhs, rhs, lo, hi } => {
                let (a, b) = (self.steps(*lo), self.steps(*hi));
                self.until(lhs, rhs, k, a, b)
            }
        };
        self.memo.insert(key, v);
        v
    }

    // exists t' in [t+a, t+b] with rhs(t') and lhs on [t, t')
    fn until(&mut self, lhs: &Formula, rhs: &Formula, k: usize, a: usize, b: usize) -> bool {
        if a == 0 && self.holds(rhs, k) {
            return true;
        }
        for c in k..=k + 2 * b {
            if c >= k + 2 * a && self.holds(rhs, c) {
                // a witness inside an open cell also needs lhs on part of it
                if c % 2 == 0 || self.holds(lhs, c) {
                    return true;
                }
            }
            if !self.holds(lhs, c) {
                return false;
            }
        }
        false
    }
}

/// Compares the interval monitor against the lattice scan on `cases`
/// random (trajectory, formula) pairs; returns the number of disagreements.
pub fn disagreements(cases: usize, seed: Seed) -> usize {
    let net = super::sirs();
    let states = net.enumerate_states().unwrap();
    let (horizon, delta) = (40.0, 0.25);
    let mut rng = seed.rng();
    let mut bad = 0;
    for _ in 0..cases {
        let x = super::gen::lattice_trajectory(&net, &states, &mut rng, horizon, delta);
        let f = super::gen::formula(&mut rng, 3, 30.0, delta, 3, 100);
        let mut oracle = LatticeOracle::new(&x, delta);
        let last_class = (2.0 * (horizon - f.horizon_needed()) / delta) as usize;
        let mut classes = vec![0, rng.random_range(0..=last_class), rng.random_range(0..=last_class)];
        classes.push(last_class);
        for k in classes {
            let t = oracle.time_of(k);
            if eval_formula(&f, &x, t).unwrap() != oracle.holds(&f, k) {
                eprintln!("mismatch at t = {t} for {f}");
                bad += 1;
            }
        }
    }
    bad
}
