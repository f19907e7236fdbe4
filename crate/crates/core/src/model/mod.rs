//! Population CTMC reaction networks.

mod file;
mod ssa;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::parse_model;
pub use ssa::{simulate_ssa, simulate_ssa_with, Trajectory};

/// Upper bound on the size of an enumerated state-space.
pub const MAX_ENUMERATED_STATES: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown species `{0}`")]
    UnknownSpecies(String),
    #[error("duplicate species `{0}`")]
    DuplicateSpecies(String),
    #[error("reaction `{reaction}`: rate constant must be positive and finite, got {rate}")]
    NonPositiveRate { reaction: String, rate: f64 },
    #[error("reaction `{reaction}`: rate expression: {message}")]
    BadRate { reaction: String, message: String },
    #[error("reaction `{reaction}` changes the total population ({consumed} consumed, {produced} produced)")]
    ConservationViolation {
        reaction: String,
        consumed: u32,
        produced: u32,
    },
    #[error("stoichiometry vector of `{reaction}` has length {got}, expected {expected}")]
    StoichiometryLength {
        reaction: String,
        got: usize,
        expected: usize,
    },
    #[error("state has {got} species, network has {expected}")]
    StateDimension { got: usize, expected: usize },
    #[error("state total {got} differs from the conserved population {expected}")]
    StateConservation { got: u64, expected: u32 },
    #[error("state-space is unbounded: set a conserved population or per-species bounds")]
    UnboundedStateSpace,
    #[error("state-space has more than {0} states")]
    StateSpaceTooLarge(usize),
    #[error("simulation horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
}

/// Vector of species counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemState(pub Vec<u32>);

impl SystemState {
    pub fn new(counts: Vec<u32>) -> Self {
        SystemState(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| u64::from(c)).sum()
    }
}

impl fmt::Display for SystemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<u32>> for SystemState {
    fn from(v: Vec<u32>) -> Self {
        SystemState(v)
    }
}

/// A mass-action reaction. Stoichiometry vectors are indexed like the
/// network's species list.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub name: String,
    pub reactants: Vec<u32>,
    pub products: Vec<u32>,
    pub rate_constant: f64,
}

impl Reaction {
    pub fn net_change(&self) -> Vec<i64> {
        self.reactants
            .iter()
            .zip(&self.products)
            .map(|(&r, &p)| i64::from(p) - i64::from(r))
            .collect()
    }
}

/// Compiled form of a reaction used on the simulation hot path.
#[derive(Debug, Clone)]
struct CompiledReaction {
    rate: f64,
    // (species, order) for every species with nonzero reactant count
    reactants: Vec<(usize, u32)>,
    // (species, delta) for every species whose count changes
    delta: Vec<(usize, i64)>,
}

#[derive(Debug, Clone)]
pub struct ReactionNetwork {
    species: Vec<String>,
    reactions: Vec<Reaction>,
    conservation: Option<u32>,
    bounds: Option<Vec<u32>>,
    compiled: Vec<CompiledReaction>,
}

impl ReactionNetwork {
    /// Validates and builds a network.
    pub fn new(
        species: Vec<String>,
        reactions: Vec<Reaction>,
        conservation: Option<u32>,
    ) -> Result<Self, ModelError> {
        for (i, s) in species.iter().enumerate() {
            if species[..i].contains(s) {
                return Err(ModelError::DuplicateSpecies(s.clone()));
            }
        }
        let d = species.len();
        for r in &reactions {
            for v in [&r.reactants, &r.products] {
                if v.len() != d {
                    return Err(ModelError::StoichiometryLength {
                        reaction: r.name.clone(),
                        got: v.len(),
                        expected: d,
                    });
                }
            }
            if !(r.rate_constant.is_finite() && r.rate_constant > 0.0) {
                return Err(ModelError::NonPositiveRate {
                    reaction: r.name.clone(),
                    rate: r.rate_constant,
                });
            }
            if conservation.is_some() {
                let consumed: u32 = r.reactants.iter().sum();
                let produced: u32 = r.products.iter().sum();
                if consumed != produced {
                    return Err(ModelError::ConservationViolation {
                        reaction: r.name.clone(),
                        consumed,
                        produced,
                    });
                }
            }
        }
        let compiled = reactions
            .iter()
            .map(|r| CompiledReaction {
                rate: r.rate_constant,
                reactants: r
                    .reactants
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(i, &c)| (i, c))
                    .collect(),
                delta: r
                    .net_change()
                    .into_iter()
                    .enumerate()
                    .filter(|(_, d)| *d != 0)
                    .collect(),
            })
            .collect();
        Ok(ReactionNetwork {
            species,
            reactions,
            conservation,
            bounds: None,
            compiled,
        })
    }

    /// Adds inclusive per-species upper bounds used by state enumeration.
    pub fn with_bounds(mut self, bounds: Vec<u32>) -> Result<Self, ModelError> {
        if bounds.len() != self.species.len() {
            return Err(ModelError::StateDimension {
                got: bounds.len(),
                expected: self.species.len(),
            });
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn conservation(&self) -> Option<u32> {
        self.conservation
    }

    pub fn bounds(&self) -> Option<&[u32]> {
        self.bounds.as_deref()
    }

    pub fn num_species(&self) -> usize {
        self.species.len()
    }

    /// Checks dimension, and conservation when the network has one.
    pub fn validate_state(&self, state: &SystemState) -> Result<(), ModelError> {
        if state.0.len() != self.species.len() {
            return Err(ModelError::StateDimension {
                got: state.0.len(),
                expected: self.species.len(),
            });
        }
        if let Some(n) = self.conservation {
            let total = state.total();
            if total != u64::from(n) {
                return Err(ModelError::StateConservation {
                    got: total,
                    expected: n,
                });
            }
        }
        Ok(())
    }

    /// Mass-action propensity of every reaction. A reactant of order `r`
    /// contributes the falling factorial `x (x-1) ... (x-r+1)`, which is zero
    /// whenever fewer than `r` molecules are present.
    pub fn propensities(&self, counts: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.compiled.len()];
        self.propensities_into(counts, &mut out);
        out
    }

    pub(crate) fn propensities_into(&self, counts: &[u32], out: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (slot, r) in out.iter_mut().zip(&self.compiled) {
            let mut a = r.rate;
            for &(s, order) in &r.reactants {
                let x = counts[s];
                if x < order {
                    a = 0.0;
                    break;
                }
                for k in 0..order {
                    a *= f64::from(x - k);
                }
            }
            *slot = a;
            total += a;
        }
        total
    }

    pub(crate) fn apply(&self, reaction: usize, counts: &mut [u32]) {
        for &(s, d) in &self.compiled[reaction].delta {
            let v = i64::from(counts[s]) + d;
            debug_assert!(v >= 0, "reaction drove a count negative");
            counts[s] = v as u32;
        }
    }

    /// Every state admitted by the conservation constant and/or bounds, in
    /// ascending lexicographic order of the count vectors.
    pub fn enumerate_states(&self) -> Result<Vec<SystemState>, ModelError> {
        let d = self.species.len();
        if d == 0 {
            return Ok(vec![SystemState(Vec::new())]);
        }
        let caps: Vec<u32> = match (&self.bounds, self.conservation) {
            (Some(b), Some(n)) => b.iter().map(|&x| x.min(n)).collect(),
            (Some(b), None) => b.clone(),
            (None, Some(n)) => vec![n; d],
            (None, None) => return Err(ModelError::UnboundedStateSpace),
        };
        let count = match self.conservation {
            Some(n) => count_compositions(n, &caps),
            None => caps
                .iter()
                .try_fold(1u128, |acc, &c| acc.checked_mul(u128::from(c) + 1)),
        };
        match count {
            Some(c) if c <= MAX_ENUMERATED_STATES as u128 => {}
            _ => return Err(ModelError::StateSpaceTooLarge(MAX_ENUMERATED_STATES)),
        }
        let mut out = Vec::with_capacity(count.unwrap_or(0) as usize);
        let mut cur = vec![0u32; d];
        enumerate_rec(0, &caps, self.conservation, &mut cur, &mut out);
        Ok(out)
    }
}

fn count_compositions(total: u32, caps: &[u32]) -> Option<u128> {
    // ways[t] = number of ways to fill the species seen so far summing to t
    let n = total as usize;
    let mut ways = vec![0u128; n + 1];
    ways[0] = 1;
    for &cap in caps {
        let mut next = vec![0u128; n + 1];
        for (t, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for c in 0..=(cap as usize).min(n - t) {
                next[t + c] = next[t + c].checked_add(w)?;
            }
        }
        ways = next;
    }
    Some(ways[n])
}

fn enumerate_rec(
    i: usize,
    caps: &[u32],
    conservation: Option<u32>,
    cur: &mut Vec<u32>,
    out: &mut Vec<SystemState>,
) {
    let d = caps.len();
    let used: u32 = cur[..i].iter().sum();
    if let Some(n) = conservation {
        let rem = n - used;
        if i == d - 1 {
            if rem <= caps[i] {
                cur[i] = rem;
                out.push(SystemState(cur.clone()));
            }
            return;
        }
        for c in 0..=caps[i].min(rem) {
            cur[i] = c;
            enumerate_rec(i + 1, caps, conservation, cur, out);
        }
    } else {
        for c in 0..=caps[i] {
            cur[i] = c;
            if i == d - 1 {
                out.push(SystemState(cur.clone()));
            } else {
                enumerate_rec(i + 1, caps, conservation, cur, out);
            }
        }
    }
    cur[i] = 0;
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sirs(n: u32) -> ReactionNetwork {
        let (alpha, beta) = (0.005, 0.01);
        let r = |name: &str, re: [u32; 3], pr: [u32; 3], k: f64| Reaction {
            name: name.into(),
            reactants: re.to_vec(),
            products: pr.to_vec(),
            rate_constant: k,
        };
        ReactionNetwork::new(
            vec!["S".into(), "I".into(), "R".into()],
            vec![
                r("infection", [1, 1, 0], [0, 2, 0], alpha),
                r("spontaneous infection", [1, 0, 0], [0, 1, 0], beta / 5.0),
                r("recovery", [0, 1, 0], [0, 0, 1], beta),
                r("relapsing", [0, 0, 1], [1, 0, 0], beta),
            ],
            Some(n),
        )
        .unwrap()
    }

    #[test]
    fn sirs_propensities_by_hand() {
        let net = sirs(100);
        let p = net.propensities(&[100, 0, 0]);
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.2).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
        assert_eq!(p[3], 0.0);
        let p = net.propensities(&[0, 0, 100]);
        assert_eq!(&p[..3], &[0.0, 0.0, 0.0]);
        assert!((p[3] - 1.0).abs() < 1e-12);
        assert!(net.propensities(&[0, 0, 0]).iter().all(|&a| a == 0.0));
        let p = net.propensities(&[50, 20, 30]);
        assert!((p[0] - 0.005 * 50.0 * 20.0).abs() < 1e-12);
    }

    #[test]
    fn higher_order_reactant_uses_falling_factorial() {
        let net = ReactionNetwork::new(
            vec!["A".into()],
            vec![Reaction {
                name: "dimer".into(),
                reactants: vec![2],
                products: vec![0],
                rate_constant: 0.5,
            }],
            None,
        )
        .unwrap();
        assert_eq!(net.propensities(&[1]), vec![0.0]);
        assert_eq!(net.propensities(&[0]), vec![0.0]);
        assert_eq!(net.propensities(&[4]), vec![0.5 * 4.0 * 3.0]);
    }

    #[test]
    fn rejects_bad_networks() {
        let bad_rate = ReactionNetwork::new(
            vec!["A".into()],
            vec![Reaction {
                name: "r".into(),
                reactants: vec![1],
                products: vec![0],
                rate_constant: 0.0,
            }],
            None,
        );
        assert!(matches!(bad_rate, Err(ModelError::NonPositiveRate { .. })));
        let not_conserved = ReactionNetwork::new(
            vec!["A".into()],
            vec![Reaction {
                name: "decay".into(),
                reactants: vec![1],
                products: vec![0],
                rate_constant: 1.0,
            }],
            Some(5),
        );
        assert!(matches!(
            not_conserved,
            Err(ModelError::ConservationViolation { .. })
        ));
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(sirs(100).enumerate_states().unwrap().len(), 5151);
        let one = sirs(1).enumerate_states().unwrap();
        assert_eq!(
            one,
            vec![
                SystemState(vec![0, 0, 1]),
                SystemState(vec![0, 1, 0]),
                SystemState(vec![1, 0, 0]),
            ]
        );
        assert_eq!(sirs(2).enumerate_states().unwrap().len(), 6);
        for n in 1..=20u32 {
            let mut brute = 0;
            for s in 0..=n {
                for _i in 0..=(n - s) {
                    brute += 1;
                }
            }
            let states = sirs(n).enumerate_states().unwrap();
            assert_eq!(states.len(), brute);
            assert_eq!(states.len() as u32, (n + 1) * (n + 2) / 2);
            assert!(states.windows(2).all(|w| w[0] < w[1]));
            assert!(states.iter().all(|s| s.total() == u64::from(n)));
        }
    }

    #[test]
    fn enumeration_needs_bounds() {
        let open = ReactionNetwork::new(
            vec!["A".into()],
            vec![Reaction {
                name: "decay".into(),
                reactants: vec![1],
                products: vec![0],
                rate_constant: 1.0,
            }],
            None,
        )
        .unwrap();
        assert_eq!(open.enumerate_states(), Err(ModelError::UnboundedStateSpace));
        let bounded = open.with_bounds(vec![4]).unwrap();
        assert_eq!(bounded.enumerate_states().unwrap().len(), 5);
    }
}
