//! Statistical model checking of joint formula satisfaction, and the
//! property map from initial states to satisfaction distributions.

use std::collections::HashMap;

use rand::seq::index;
use thiserror::Error;

use crate::exec;
use crate::mitl::{FormulaSet, MitlError};
use crate::model::{simulate_ssa_with, ModelError, ReactionNetwork, SystemState};
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmcError {
    #[error("cannot sample from an empty state list")]
    EmptyStates,
    #[error("sample fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("trajectory count must be at least 1")]
    NoTrajectories,
    #[error("duplicate state {0} in property map")]
    DuplicateState(SystemState),
    #[error("distribution has {got} entries, expected {expected}")]
    PatternCount { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mitl(#[from] MitlError),
}

/// Probability of each of the `2^n` joint truth patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct SatisfactionDistribution {
    pub probs: Vec<f64>,
    /// Number of simulated trajectories behind the estimate; 0 when imputed.
    pub sample_count: u64,
}

impl SatisfactionDistribution {
    pub fn from_counts(counts: &[u64]) -> Self {
        let m: u64 = counts.iter().sum();
        SatisfactionDistribution {
            probs: counts.iter().map(|&c| c as f64 / m as f64).collect(),
            sample_count: m,
        }
    }

    pub fn point_mass(n_patterns: usize, at: usize) -> Self {
        let mut probs = vec![0.0; n_patterns];
        probs[at] = 1.0;
        SatisfactionDistribution {
            probs,
            sample_count: 0,
        }
    }

    /// Marginal probability that formula `i` holds.
    pub fn marginal(&self, i: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(p, _)| (p >> i) & 1 == 1)
            .map(|(_, v)| v)
            .sum()
    }

    /// Binomial standard error of every entry.
    pub fn std_errors(&self) -> Vec<f64> {
        let m = self.sample_count.max(1) as f64;
        self.probs
            .iter()
            .map(|&p| (p * (1.0 - p) / m).sqrt())
            .collect()
    }

    pub fn l1_distance(&self, other: &SatisfactionDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Simulated,
    Imputed,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Simulated => "simulated",
            Provenance::Imputed => "imputed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub state: SystemState,
    pub dist: SatisfactionDistribution,
    pub provenance: Provenance,
}

/// Initial state → satisfaction distribution, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyMap {
    n_patterns: usize,
    entries: Vec<MapEntry>,
    index: HashMap<SystemState, usize>,
}

impl PropertyMap {
    pub fn new(n_patterns: usize) -> Self {
        PropertyMap {
            n_patterns,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, entry: MapEntry) -> Result<(), SmcError> {
        if entry.dist.probs.len() != self.n_patterns {
            return Err(SmcError::PatternCount {
                got: entry.dist.probs.len(),
                expected: self.n_patterns,
            });
        }
        if self.index.contains_key(&entry.state) {
            return Err(SmcError::DuplicateState(entry.state));
        }
        self.index.insert(entry.state.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn n_patterns(&self) -> usize {
        self.n_patterns
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn get(&self, state: &SystemState) -> Option<&MapEntry> {
        self.index.get(state).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, state: &SystemState) -> bool {
        self.index.contains_key(state)
    }

    pub fn simulated(&self) -> impl Iterator<Item = &MapEntry> {
        self.entries
            .iter()
            .filter(|e| e.provenance == Provenance::Simulated)
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.entries.iter().filter(|e| e.provenance == provenance).count()
    }
}

/// Number of states drawn for `fraction` of `n`: `floor(fraction * n)`,
/// at least one.
pub fn sample_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).floor() as usize).clamp(1, n)
}

/// Uniform sample without replacement, returned in the original order.
pub fn sample_states(
    all: &[SystemState],
    fraction: f64,
    seed: Seed,
) -> Result<Vec<SystemState>, SmcError> {
    if all.is_empty() {
        return Err(SmcError::EmptyStates);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SmcError::BadFraction(fraction));
    }
    let k = sample_size(all.len(), fraction);
    if k == all.len() {
        return Ok(all.to_vec());
    }
    let mut picked = index::sample(&mut seed.rng(), all.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| all[i].clone()).collect())
}

/// Monte Carlo estimate of the joint-pattern distribution from `m`
/// trajectories started at `init`.
pub fn estimate_distribution(
    network: &ReactionNetwork,
    init: &SystemState,
    formulas: &FormulaSet,
    m: u64,
    horizon: f64,
    seed: Seed,
) -> Result<SatisfactionDistribution, SmcError> {
    if m == 0 {
        return Err(SmcError::NoTrajectories);
    }
    let mut rng = seed.rng();
    let mut counts = vec![0u64; formulas.num_patterns()];
    for _ in 0..m {
        let x = simulate_ssa_with(network, init, horizon, &mut rng)?;
        let p = formulas.joint_pattern(&x)?;
        counts[p.0 as usize] += 1;
    }
    Ok(SatisfactionDistribution::from_counts(&counts))
}

/// Simulated property map over `states`; state `i` uses seed
/// `seed.child(i)`, so the result does not depend on scheduling.
pub fn build_property_map(
    network: &ReactionNetwork,
    states: &[SystemState],
    formulas: &FormulaSet,
    m: u64,
    horizon: f64,
    seed: Seed,
) -> Result<PropertyMap, SmcError> {
    if states.is_empty() {
        return Err(SmcError::EmptyStates);
    }
    let dists = exec::try_map_range(states.len(), |i| {
        estimate_distribution(network, &states[i], formulas, m, horizon, seed.child(i as u64))
    })?;
    let mut map = PropertyMap::new(formulas.num_patterns());
    for (state, dist) in states.iter().zip(dists) {
        map.insert(MapEntry {
            state: state.clone(),
            dist,
            provenance: Provenance::Simulated,
        })?;
    }
    Ok(map)
}
