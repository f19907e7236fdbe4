//! k-means macro-states and the fine-to-macro coarsening map.

use std::collections::HashMap;
use std::sync::RwLock;

use nalgebra::DMatrix;
use rand::Rng as _;
use thiserror::Error;

use crate::embed::{jsd, EmbedError, MdsEmbedding};
use crate::exec;
use crate::gp::{GpError, GpModel};
use crate::model::SystemState;
use crate::rng::Seed;

pub const DEFAULT_RESTARTS: usize = 10;
const MAX_LLOYD_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("cannot form {k} clusters from {m} points")]
    TooManyClusters { k: usize, m: usize },
    #[error("cannot form {k} clusters from {distinct} distinct points")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("coordinate has {got} dimensions, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("non-finite coordinate in row {0}")]
    NonFinite(usize),
    #[error("state {0} has no macro-state")]
    Unmapped(SystemState),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Partition of training points into `k` non-empty macro-states.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// `k x n`; row `j` is the mean of cluster `j`'s members.
    pub centroids: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub sse: f64,
}

fn dist2(coords: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..coords.ncols()).map(|q| (coords[(i, q)] - c[(j, q)]).powi(2)).sum()
}

fn nearest(coords: &DMatrix<f64>, i: usize, c: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..c.nrows() {
        let d = dist2(coords, i, c, j);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(coords: &DMatrix<f64>, k: usize, seed: Seed) -> DMatrix<f64> {
    let (m, n) = coords.shape();
    let mut rng = seed.rng();
    let mut c = DMatrix::zeros(k, n);
    let first = rng.random_range(0..m);
    c.set_row(0, &coords.row(first));
    let mut d2: Vec<f64> = (0..m).map(|i| dist2(coords, i, &c, 0)).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        c.set_row(j, &coords.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(coords, i, &c, j));
        }
    }
    c
}

fn centroids_of(coords: &DMatrix<f64>, labels: &[usize], k: usize) -> (DMatrix<f64>, Vec<usize>) {
    let n = coords.ncols();
    let mut sums = DMatrix::zeros(k, n);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for q in 0..n {
            sums[(l, q)] += coords[(i, q)];
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            for q in 0..n {
                sums[(j, q)] /= counts[j] as f64;
            }
        }
    }
    (sums, counts)
}

/// Lloyd iterations from `init` until labels stop changing. Returns the
/// partition and the SSE after every assignment step.
fn lloyd(coords: &DMatrix<f64>, init: DMatrix<f64>) -> (Partition, Vec<f64>) {
    let (m, k) = (coords.nrows(), init.nrows());
    let mut c = init;
    let mut labels = vec![usize::MAX; m];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let assigned: Vec<(usize, f64)> = exec::map_range(m, |i| nearest(coords, i, &c));
        let changed = assigned.iter().zip(&labels).any(|(a, &l)| a.0 != l);
        labels = assigned.iter().map(|a| a.0).collect();
        history.push(assigned.iter().map(|a| a.1).sum());
        let (mut next, counts) = centroids_of(coords, &labels, k);
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if empty.is_empty() && !changed {
            break;
        }
        if !empty.is_empty() {
            // move each empty centroid onto the point farthest from its own
            let mut far: Vec<(usize, f64)> = assigned.iter().map(|a| a.1).enumerate().collect();
            far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (slot, j) in empty.into_iter().enumerate() {
                let i = far[slot % m].0;
                next.set_row(j, &coords.row(i));
            }
            labels.fill(usize::MAX);
        }
        c = next;
    }
    let (centroids, _) = centroids_of(coords, &labels, k);
    let sse = (0..m).map(|i| dist2(coords, i, &centroids, labels[i])).sum();
    (
        Partition {
            centroids,
            labels,
            sse,
        },
        history,
    )
}

fn count_distinct(coords: &DMatrix<f64>, cap: usize) -> usize {
    let mut seen: Vec<Vec<u64>> = Vec::new();
    for i in 0..coords.nrows() {
        let key: Vec<u64> = coords.row(i).iter().map(|v| v.to_bits()).collect();
        if !seen.contains(&key) {
            seen.push(key);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

/// k-means with k-means++ seeding; the restart with the lowest SSE wins,
/// ties going to the earliest restart.
pub fn kmeans(coords: &DMatrix<f64>, k: usize, restarts: usize, seed: Seed) -> Result<Partition, ClusterError> {
    let m = coords.nrows();
    if k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if k > m {
        return Err(ClusterError::TooManyClusters { k, m });
    }
    if let Some(i) = (0..m).find(|&i| coords.row(i).iter().any(|v| !v.is_finite())) {
        return Err(ClusterError::NonFinite(i));
    }
    let distinct = count_distinct(coords, k);
    if distinct < k {
        return Err(ClusterError::TooFewDistinct { k, distinct });
    }
    let runs = exec::map_range(restarts.max(1), |r| {
        lloyd(coords, plus_plus_init(coords, k, seed.child(r as u64))).0
    });
    let mut best = 0;
    for (i, p) in runs.iter().enumerate() {
        if p.sse < runs[best].sse {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one restart"))
}

impl Partition {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    /// Nearest centroid, lowest id on ties.
    pub fn assign(&self, coord: &[f64]) -> Result<usize, ClusterError> {
        if coord.len() != self.dim() {
            return Err(ClusterError::Dimension {
                got: coord.len(),
                expected: self.dim(),
            });
        }
        let mut best = (0, f64::INFINITY);
        for j in 0..self.k() {
            let d: f64 = coord
                .iter()
                .enumerate()
                .map(|(q, v)| (v - self.centroids[(j, q)]).powi(2))
                .sum();
            if d < best.1 {
                best = (j, d);
            }
        }
        Ok(best.0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// Everything needed to place a state that was not in the training table.
#[derive(Debug, Clone)]
pub struct Extension {
    pub gp: GpModel,
    /// Distributions of the embedded training states, in embedding order.
    pub train_dists: Vec<Vec<f64>>,
    pub embedding: MdsEmbedding,
    pub partition: Partition,
}

impl Extension {
    pub fn place(&self, state: &SystemState) -> Result<usize, ClusterError> {
        let dist = self.gp.predict_one(state)?;
        let row = self
            .train_dists
            .iter()
            .map(|t| jsd(&dist.probs, t))
            .collect::<Result<Vec<_>, _>>()?;
        let coord = self.embedding.extend(&row)?;
        self.partition.assign(&coord)
    }
}

/// Total map from fine states to macro-state ids, memoizing out-of-sample
/// placements.
#[derive(Debug)]
pub struct CoarseningMap {
    k: usize,
    table: HashMap<SystemState, usize>,
    extension: Option<Extension>,
    memo: RwLock<HashMap<SystemState, usize>>,
}

impl CoarseningMap {
    pub fn new(k: usize, table: HashMap<SystemState, usize>) -> Self {
        CoarseningMap {
            k,
            table,
            extension: None,
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_extension(mut self, ext: Extension) -> Self {
        self.extension = Some(ext);
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn table(&self) -> &HashMap<SystemState, usize> {
        &self.table
    }

    pub fn lookup(&self, state: &SystemState) -> Result<usize, ClusterError> {
        self.lookup_counts(state.counts())
    }

    pub fn lookup_counts(&self, counts: &[u32]) -> Result<usize, ClusterError> {
        let key = SystemState(counts.to_vec());
        if let Some(&m) = self.table.get(&key) {
            return Ok(m);
        }
        if let Some(&m) = self.memo.read().expect("memo lock").get(&key) {
            return Ok(m);
        }
        let ext = self
            .extension
            .as_ref()
            .ok_or_else(|| ClusterError::Unmapped(key.clone()))?;
        let m = ext.place(&key)?;
        self.memo.write().expect("memo lock").insert(key, m);
        Ok(m)
    }

    /// Number of distinct macro-states hit by the table.
    pub fn distinct_macros(&self) -> usize {
        let mut seen = vec![false; self.k];
        for &m in self.table.values() {
            seen[m] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}
