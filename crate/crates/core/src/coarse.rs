//! Empirical semi-Markov dynamics on macro-states, and validation of the
//! coarse process against coarsened fine trajectories.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterError, CoarseningMap};
use crate::exec;
use crate::model::Trajectory;
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoarseError {
    #[error("no completed sojourn in any trajectory")]
    NoSojourns,
    #[error("bin width must be positive and finite, got {0}")]
    BadBinWidth(f64),
    #[error("macro-state {id} out of range for k = {k}")]
    BadMacro { id: usize, k: usize },
    #[error("histograms have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no trajectories given")]
    Empty,
    #[error("time {t} lies past a trajectory horizon {horizon}")]
    PastHorizon { t: f64, horizon: f64 },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Piecewise-constant macro-state path; consecutive ids always differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroTrajectory {
    pub initial: usize,
    pub jumps: Vec<(f64, usize)>,
    pub horizon: f64,
}

impl MacroTrajectory {
    pub fn num_transitions(&self) -> usize {
        self.jumps.len()
    }

    /// Macro-state at `t` (right-continuous).
    pub fn macro_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|&(s, _)| s <= t);
        if k == 0 {
            self.initial
        } else {
            self.jumps[k - 1].1
        }
    }

    /// Completed sojourns as `(macro, length, successor)`. The final,
    /// censored sojourn is left out.
    pub fn sojourns(&self) -> impl Iterator<Item = (usize, f64, usize)> + '_ {
        let mut from = (0.0, self.initial);
        self.jumps.iter().map(move |&(t, m)| {
            let s = (from.1, t - from.0, m);
            from = (t, m);
            s
        })
    }
}

pub fn coarsen_trajectory(x: &Trajectory, cmap: &CoarseningMap) -> Result<MacroTrajectory, ClusterError> {
    let initial = cmap.lookup(x.initial_state())?;
    let mut jumps = Vec::new();
    let mut current = initial;
    for i in 0..x.num_jumps() {
        let m = cmap.lookup_counts(x.jump_state(i))?;
        if m != current {
            jumps.push((x.jump_times()[i], m));
            current = m;
        }
    }
    Ok(MacroTrajectory {
        initial,
        jumps,
        horizon: x.horizon(),
    })
}

/// Histogram approximation of `p(t | k)` and `p(k' | k, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseDynamics {
    pub k: usize,
    pub bin_width: f64,
    /// Bin `i` covers `[i w, (i+1) w)`; the last bin holds the longest
    /// observed sojourn.
    pub n_bins: usize,
    pub time_bins: Vec<f64>,
    /// `[k][bin]` completed sojourns.
    pub sojourn_counts: Vec<Vec<u64>>,
    /// `[k][bin][k']` successors of those sojourns.
    pub trans_counts: Vec<Vec<Vec<u64>>>,
    pub sojourn_hist: Vec<Vec<f64>>,
    pub trans: Vec<Vec<Vec<f64>>>,
    /// `p(k' | k)` over all bins; used for bins without support.
    pub marginal: Vec<Vec<f64>>,
    /// `(k, bin)` cells without observed sojourns.
    pub zero_support: Vec<Vec<bool>>,
}

fn normalize(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

pub fn build_dynamics(trajs: &[MacroTrajectory], k: usize, bin_width: f64) -> Result<CoarseDynamics, CoarseError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(CoarseError::BadBinWidth(bin_width));
    }
    for t in trajs {
        let ids = std::iter::once(t.initial).chain(t.jumps.iter().map(|j| j.1));
        if let Some(id) = ids.into_iter().find(|&id| id >= k) {
            return Err(CoarseError::BadMacro { id, k });
        }
    }
    let longest = trajs
        .iter()
        .flat_map(|t| t.sojourns().map(|s| s.1))
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
        .ok_or(CoarseError::NoSojourns)?;
    let n_bins = (longest / bin_width).floor() as usize + 1;
    let bin = |s: f64| ((s / bin_width).floor() as usize).min(n_bins - 1);

    // per-chunk count tables, merged in chunk order
    let chunk = 256;
    let n_chunks = trajs.len().div_ceil(chunk);
    let partial = exec::map_range(n_chunks, |c| {
        let mut soj = vec![vec![0u64; n_bins]; k];
        let mut tr = vec![vec![vec![0u64; k]; n_bins]; k];
        for t in &trajs[c * chunk..((c + 1) * chunk).min(trajs.len())] {
            for (m, len, next) in t.sojourns() {
                let b = bin(len);
                soj[m][b] += 1;
                tr[m][b][next] += 1;
            }
        }
        (soj, tr)
    });
    let mut sojourn_counts = vec![vec![0u64; n_bins]; k];
    let mut trans_counts = vec![vec![vec![0u64; k]; n_bins]; k];
    for (soj, tr) in partial {
        for m in 0..k {
            for b in 0..n_bins {
                sojourn_counts[m][b] += soj[m][b];
                for n in 0..k {
                    trans_counts[m][b][n] += tr[m][b][n];
                }
            }
        }
    }
    let sojourn_hist = sojourn_counts.iter().map(|r| normalize(r)).collect();
    let trans = trans_counts
        .iter()
        .map(|rows| rows.iter().map(|r| normalize(r)).collect())
        .collect();
    let marginal = trans_counts
        .iter()
        .map(|rows| {
            let mut tot = vec![0u64; k];
            for r in rows {
                for (a, b) in tot.iter_mut().zip(r) {
                    *a += b;
                }
            }
            normalize(&tot)
        })
        .collect();
    let zero_support = sojourn_counts.iter().map(|r| r.iter().map(|&c| c == 0).collect()).collect();
    Ok(CoarseDynamics {
        k,
        bin_width,
        n_bins,
        time_bins: (0..=n_bins).map(|i| i as f64 * bin_width).collect(),
        zero_support,
        sojourn_counts,
        trans_counts,
        sojourn_hist,
        trans,
        marginal,
    })
}

impl CoarseDynamics {
    /// Macro-states that were never seen leaving.
    pub fn is_absorbing(&self, m: usize) -> bool {
        self.sojourn_counts[m].iter().all(|&c| c == 0)
    }

    pub fn sampler(&self) -> CoarseSampler<'_> {
        let w = |row: &[u64]| WeightedIndex::new(row.iter().map(|&c| c as f64)).ok();
        CoarseSampler {
            dynamics: self,
            sojourn: self.sojourn_counts.iter().map(|r| w(r)).collect(),
            trans: self
                .trans_counts
                .iter()
                .map(|rows| rows.iter().map(|r| w(r)).collect())
                .collect(),
            marginal: self
                .trans_counts
                .iter()
                .map(|rows| {
                    let tot: Vec<u64> = (0..self.k).map(|n| rows.iter().map(|r| r[n]).sum()).collect();
                    w(&tot)
                })
                .collect(),
        }
    }
}

/// Precomputed categorical samplers for [`CoarseDynamics`].
pub struct CoarseSampler<'a> {
    dynamics: &'a CoarseDynamics,
    sojourn: Vec<Option<WeightedIndex<f64>>>,
    trans: Vec<Vec<Option<WeightedIndex<f64>>>>,
    marginal: Vec<Option<WeightedIndex<f64>>>,
}

impl CoarseSampler<'_> {
    pub fn simulate(&self, init: usize, horizon: f64, seed: Seed) -> Result<MacroTrajectory, CoarseError> {
        let k = self.dynamics.k;
        if init >= k {
            return Err(CoarseError::BadMacro { id: init, k });
        }
        let mut rng = seed.rng();
        let mut t = 0.0;
        let mut m = init;
        let mut jumps = Vec::new();
        while let Some(soj) = &self.sojourn[m] {
            let b = soj.sample(&mut rng);
            // uniform in (b w, (b+1) w]
            let u = 1.0 - rng.random::<f64>();
            t += self.dynamics.bin_width * (b as f64 + u);
            if t > horizon {
                break;
            }
            let next = match (&self.trans[m][b], &self.marginal[m]) {
                (Some(d), _) | (None, Some(d)) => d.sample(&mut rng),
                (None, None) => break,
            };
            jumps.push((t, next));
            m = next;
        }
        Ok(MacroTrajectory {
            initial: init,
            jumps,
            horizon,
        })
    }
}

/// One coarse sample path; see [`CoarseSampler`] for repeated use.
pub fn simulate_coarse(dyn_: &CoarseDynamics, init: usize, horizon: f64, seed: Seed) -> Result<MacroTrajectory, CoarseError> {
    dyn_.sampler().simulate(init, horizon, seed)
}

/// Empirical macro-state occupancy at time `t`.
pub fn macro_histogram(trajs: &[MacroTrajectory], k: usize, t: f64) -> Result<Vec<f64>, CoarseError> {
    if trajs.is_empty() {
        return Err(CoarseError::Empty);
    }
    let mut h = vec![0u64; k];
    for x in trajs {
        if t > x.horizon {
            return Err(CoarseError::PastHorizon { t, horizon: x.horizon });
        }
        let m = x.macro_at(t);
        if m >= k {
            return Err(CoarseError::BadMacro { id: m, k });
        }
        h[m] += 1;
    }
    Ok(normalize(&h))
}

/// L1 distance between two histograms.
pub fn histogram_distance(a: &[f64], b: &[f64]) -> Result<f64, CoarseError> {
    if a.len() != b.len() {
        return Err(CoarseError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

/// Upper bound on the mean L1 self-distance of `k`-cell histograms built
/// from `n` samples.
pub fn self_distance_bound(k: usize, n: usize) -> f64 {
    (4.0 * k as f64 / (std::f64::consts::PI * n as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub times: Vec<f64>,
    pub fine_hist: Vec<Vec<f64>>,
    pub coarse_hist: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    pub bound: f64,
    /// Start of the steady-state window; earlier times are transient.
    pub steady_from: f64,
}

impl ValidationReport {
    pub fn below_bound(&self, i: usize) -> bool {
        self.distances[i] < self.bound
    }

    /// Fraction of steady-state time points whose distance is below the
    /// bound.
    pub fn steady_fraction_below(&self) -> f64 {
        let idx: Vec<usize> = (0..self.times.len()).filter(|&i| self.times[i] >= self.steady_from).collect();
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter().filter(|&&i| self.below_bound(i)).count() as f64 / idx.len() as f64
    }
}

/// Compares fine (already coarsened) and coarse macro trajectories on a
/// time grid. The bound uses the smaller of the two sample sizes.
pub fn validate(
    fine: &[MacroTrajectory],
    coarse: &[MacroTrajectory],
    k: usize,
    times: &[f64],
    steady_from: f64,
) -> Result<ValidationReport, CoarseError> {
    if fine.is_empty() || coarse.is_empty() {
        return Err(CoarseError::Empty);
    }
    let mut fine_hist = Vec::with_capacity(times.len());
    let mut coarse_hist = Vec::with_capacity(times.len());
    let mut distances = Vec::with_capacity(times.len());
    for &t in times {
        let f = macro_histogram(fine, k, t)?;
        let c = macro_histogram(coarse, k, t)?;
        distances.push(histogram_distance(&f, &c)?);
        fine_hist.push(f);
        coarse_hist.push(c);
    }
    Ok(ValidationReport {
        times: times.to_vec(),
        fine_hist,
        coarse_hist,
        distances,
        bound: self_distance_bound(k, fine.len().min(coarse.len())),
        steady_from,
    })
}
