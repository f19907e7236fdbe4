//! Gillespie direct-method simulation.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};

use super::{ModelError, ReactionNetwork, SystemState};
use crate::rng::{Rng, Seed};

/// Piecewise-constant, right-continuous sample path. The state at time `t`
/// is the state of the latest jump at or before `t` (or the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    initial: SystemState,
    times: Vec<f64>,
    // row-major, one row of `dim` counts per jump
    states: Vec<u32>,
    reactions: Vec<u32>,
    horizon: f64,
    dim: usize,
}

impl Trajectory {
    /// Builds a trajectory from explicit jumps. Used by tests and by callers
    /// that construct signals by hand; no reaction bookkeeping is kept.
    pub fn from_jumps(
        initial: SystemState,
        jumps: Vec<(f64, SystemState)>,
        horizon: f64,
    ) -> Trajectory {
        let dim = initial.0.len();
        let mut times = Vec::with_capacity(jumps.len());
        let mut states = Vec::with_capacity(jumps.len() * dim);
        for (t, s) in jumps {
            assert_eq!(s.0.len(), dim, "jump state dimension mismatch");
            assert!(t >= 0.0 && t <= horizon, "jump time outside [0, horizon]");
            if let Some(&last) = times.last() {
                assert!(t > last, "jump times must be strictly increasing");
            }
            times.push(t);
            states.extend_from_slice(&s.0);
        }
        Trajectory {
            initial,
            times,
            states,
            reactions: Vec::new(),
            horizon,
            dim,
        }
    }

    pub fn initial_state(&self) -> &SystemState {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_jumps(&self) -> usize {
        self.times.len()
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.times
    }

    /// Counts right after jump `i`.
    pub fn jump_state(&self, i: usize) -> &[u32] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// Index of the reaction that fired at jump `i`, when recorded.
    pub fn jump_reaction(&self, i: usize) -> Option<usize> {
        self.reactions.get(i).map(|&r| r as usize)
    }

    /// Piecewise-constant segments: `(start, counts)` for the initial state
    /// and every jump, in time order.
    pub fn segments(&self) -> impl Iterator<Item = (f64, &[u32])> + '_ {
        std::iter::once((0.0, self.initial.0.as_slice())).chain(
            self.times
                .iter()
                .enumerate()
                .map(move |(i, &t)| (t, self.jump_state(i))),
        )
    }

    /// Counts at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> &[u32] {
        // number of jumps with time <= t
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            &self.initial.0
        } else {
            self.jump_state(k - 1)
        }
    }
}

/// Exact SSA sample path on `[0, horizon]`, deterministic in `seed`.
pub fn simulate_ssa(
    network: &ReactionNetwork,
    init: &SystemState,
    horizon: f64,
    seed: Seed,
) -> Result<Trajectory, ModelError> {
    simulate_ssa_with(network, init, horizon, &mut seed.rng())
}

/// Same as [`simulate_ssa`] but drawing from a caller-provided generator.
pub fn simulate_ssa_with(
    network: &ReactionNetwork,
    init: &SystemState,
    horizon: f64,
    rng: &mut Rng,
) -> Result<Trajectory, ModelError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(ModelError::InvalidHorizon(horizon));
    }
    network.validate_state(init)?;
    let dim = network.num_species();
    let mut counts = init.0.clone();
    let mut props = vec![0.0; network.reactions().len()];
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut reactions = Vec::new();
    let mut t = 0.0;
    loop {
        let total = network.propensities_into(&counts, &mut props);
        if total <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        let next = t + wait / total;
        if next > horizon {
            break;
        }
        if next <= t {
            // waiting time below float resolution at this magnitude
            continue;
        }
        t = next;
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (j, &a) in props.iter().enumerate() {
            if a > 0.0 {
                acc += a;
                chosen = Some(j);
                if target < acc {
                    break;
                }
            }
        }
        // `chosen` is the last enabled reaction if rounding left target >= acc
        let j = chosen.expect("positive total propensity implies an enabled reaction");
        network.apply(j, &mut counts);
        times.push(t);
        states.extend_from_slice(&counts);
        reactions.push(j as u32);
    }
    Ok(Trajectory {
        initial: init.clone(),
        times,
        states,
        reactions,
        horizon,
        dim,
    })
}
