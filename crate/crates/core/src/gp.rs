//! Gaussian-process regression from states to satisfaction distributions.
//!
//! One squared-exponential kernel with per-dimension lengthscales is shared
//! by all output columns, so a single Cholesky factor serves every column.
//! Inputs are standardized per dimension and targets are centered per
//! column before fitting.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::model::SystemState;
use crate::rng::Seed;
use crate::smc::{MapEntry, PropertyMap, Provenance, SatisfactionDistribution};

/// Floor applied to imputed probabilities before renormalization.
pub const PROB_FLOOR: f64 = 1e-6;
/// Largest diagonal jitter tried before giving up on a factorization.
pub const JITTER_CAP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("need at least 2 training points, got {0}")]
    TooFewPoints(usize),
    #[error("training inputs {0} and {1} coincide")]
    DuplicateInput(usize, usize),
    #[error("kernel matrix is not positive definite even with jitter {JITTER_CAP}")]
    NotPositiveDefinite,
    #[error("input has {got} dimensions, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("{0} lengthscales given for {1} input dimensions")]
    LengthscaleCount(usize, usize),
    #[error("hyperparameter {name} must be positive and finite, got {value}")]
    NotPositive { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lengthscales: Vec<f64>,
    pub variance: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lengthscale: (f64, f64),
    pub variance: (f64, f64),
    pub noise: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            lengthscale: (1e-2, 1e3),
            variance: (1e-4, 1e2),
            noise: (1e-6, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// Maximize the log marginal likelihood within `bounds`; otherwise use
    /// `fixed` as given.
    pub optimize: bool,
    pub fixed: Option<Hyper>,
    pub bounds: Bounds,
    pub restarts: usize,
    pub max_iters: u64,
    /// Hyperparameters are optimized on at most this many training points.
    pub max_opt_points: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            optimize: true,
            fixed: None,
            bounds: Bounds::default(),
            restarts: 1,
            max_iters: 100,
            max_opt_points: 600,
        }
    }
}

/// Standardized training inputs, centered targets and the kernel state.
#[derive(Debug, Clone)]
pub struct GpRegressor {
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    x: DMatrix<f64>,
    y_mean: Vec<f64>,
    alpha: DMatrix<f64>,
    hyper: Hyper,
    jitter: f64,
    lml: f64,
}

fn standardize(inputs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
    let m = inputs.len();
    let d = inputs[0].len();
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for j in 0..d {
        mean[j] = inputs.iter().map(|r| r[j]).sum::<f64>() / m as f64;
        let var = inputs.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / m as f64;
        scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let x = DMatrix::from_fn(m, d, |i, j| (inputs[i][j] - mean[j]) / scale[j]);
    (mean, scale, x)
}

fn se(x: &DMatrix<f64>, i: usize, z: &[f64], h: &Hyper) -> f64 {
    let mut r2 = 0.0;
    for (j, l) in h.lengthscales.iter().enumerate() {
        let u = (x[(i, j)] - z[j]) / l;
        r2 += u * u;
    }
    h.variance * (-0.5 * r2).exp()
}

fn kernel_matrix(x: &DMatrix<f64>, h: &Hyper) -> DMatrix<f64> {
    let m = x.nrows();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        k[(i, i)] = h.variance + h.noise;
        for j in 0..i {
            let v = se(x, j, &xi, h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky factor of `k`, adding diagonal jitter from 1e-10 up to the cap
/// when needed.
fn factor(mut k: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let mut added = 0.0;
    let mut next = 1e-10;
    loop {
        if let Some(c) = Cholesky::new(k.clone()) {
            return Ok((c, added));
        }
        if next > JITTER_CAP * 1.000001 {
            return Err(GpError::NotPositiveDefinite);
        }
        for i in 0..k.nrows() {
            k[(i, i)] += next - added;
        }
        added = next;
        next *= 10.0;
    }
}

/// `K^{-1}` from the Cholesky factor as `L^{-T} L^{-1}`, skipping the
/// structural zeros of `L^{-1}`.
fn spd_inverse(chol: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
    let l = chol.l_dirty();
    let n = l.nrows();
    let mut li = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut col = li.column_mut(j);
        col[j] = 1.0;
        for k in j..n {
            let xk = col[k] / l[(k, k)];
            col[k] = xk;
            if xk != 0.0 {
                let lk = l.column(k);
                for i in k + 1..n {
                    col[i] -= lk[i] * xk;
                }
            }
        }
    }
    li.tr_mul(&li)
}

struct Fit {
    chol: Cholesky<f64, Dyn>,
    alpha: DMatrix<f64>,
    jitter: f64,
    lml: f64,
}

fn fit_fixed(x: &DMatrix<f64>, y: &DMatrix<f64>, h: &Hyper) -> Result<Fit, GpError> {
    let (chol, jitter) = factor(kernel_matrix(x, h))?;
    let alpha = chol.solve(y);
    let (m, p) = (y.nrows() as f64, y.ncols() as f64);
    let fit_term = y.component_mul(&alpha).sum();
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * fit_term - 0.5 * p * log_det - 0.5 * m * p * (2.0 * std::f64::consts::PI).ln();
    Ok(Fit {
        chol,
        alpha,
        jitter,
        lml,
    })
}

/// Log marginal likelihood summed over output columns, with its gradient
/// with respect to `(ln l_1..ln l_D, ln variance, ln noise)`.
fn lml_and_gradient(x: &DMatrix<f64>, y: &DMatrix<f64>, h: &Hyper) -> Result<(f64, Vec<f64>), GpError> {
    let fit = fit_fixed(x, y, h)?;
    let (m, d) = x.shape();
    let p = y.ncols() as f64;
    // W = alpha alpha^T - p K^{-1}; dL/dtheta = tr(W dK/dtheta) / 2
    let mut w = &fit.alpha * fit.alpha.transpose();
    w -= spd_inverse(&fit.chol) * p;
    let mut grad = vec![0.0; d + 2];
    let mut u2 = vec![0.0; d];
    for i in 0..m {
        for j in 0..m {
            let wij = w[(i, j)];
            let mut r2 = 0.0;
            for (q, l) in h.lengthscales.iter().enumerate() {
                let u = (x[(i, q)] - x[(j, q)]) / l;
                u2[q] = u * u;
                r2 += u2[q];
            }
            let wk = wij * h.variance * (-0.5 * r2).exp();
            for q in 0..d {
                grad[q] += wk * u2[q];
            }
            grad[d] += wk;
            if i == j {
                grad[d + 1] += wij * h.noise;
            }
        }
    }
    grad.iter_mut().for_each(|g| *g *= 0.5);
    Ok((fit.lml, grad))
}

/// Box constraints in log space, mapped onto the real line by a logistic.
struct Reparam {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Reparam {
    fn new(bounds: &Bounds, d: usize) -> Self {
        let mut lo = vec![bounds.lengthscale.0.ln(); d];
        let mut hi = vec![bounds.lengthscale.1.ln(); d];
        lo.extend([bounds.variance.0.ln(), bounds.noise.0.ln()]);
        hi.extend([bounds.variance.1.ln(), bounds.noise.1.ln()]);
        Reparam { lo, hi }
    }

    fn to_hyper(&self, u: &[f64]) -> Hyper {
        let logs: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(i, &v)| self.lo[i] + (self.hi[i] - self.lo[i]) / (1.0 + (-v).exp()))
            .collect();
        let d = logs.len() - 2;
        Hyper {
            lengthscales: logs[..d].iter().map(|v| v.exp()).collect(),
            variance: logs[d].exp(),
            noise: logs[d + 1].exp(),
        }
    }

    fn encode(&self, h: &Hyper) -> Vec<f64> {
        let logs = h
            .lengthscales
            .iter()
            .chain([&h.variance, &h.noise])
            .map(|v| v.ln());
        logs.enumerate()
            .map(|(i, l)| {
                let s = ((l - self.lo[i]) / (self.hi[i] - self.lo[i])).clamp(1e-6, 1.0 - 1e-6);
                (s / (1.0 - s)).ln()
            })
            .collect()
    }

    // d(log theta)/du
    fn jacobian(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = 1.0 / (1.0 + (-v).exp());
                (self.hi[i] - self.lo[i]) * s * (1.0 - s)
            })
            .collect()
    }
}

type CostAndGradient = (Vec<f64>, f64, Vec<f64>);

struct NegLml<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DMatrix<f64>,
    map: &'a Reparam,
    scale: f64,
    // line searches ask for cost and gradient at the same point
    last: RefCell<Option<CostAndGradient>>,
}

impl NegLml<'_> {
    fn eval(&self, u: &[f64]) -> (f64, Vec<f64>) {
        if let Some((p, c, g)) = self.last.borrow().as_ref() {
            if p.as_slice() == u {
                return (*c, g.clone());
            }
        }
        let (c, g) = self.eval_uncached(u);
        *self.last.borrow_mut() = Some((u.to_vec(), c, g.clone()));
        (c, g)
    }

    fn eval_uncached(&self, u: &[f64]) -> (f64, Vec<f64>) {
        match lml_and_gradient(self.x, self.y, &self.map.to_hyper(u)) {
            Ok((v, g)) => {
                let jac = self.map.jacobian(u);
                let grad = g.iter().zip(jac).map(|(g, j)| -g * j / self.scale).collect();
                (-v / self.scale, grad)
            }
            Err(_) => (f64::MAX / 4.0, vec![0.0; u.len()]),
        }
    }
}

impl CostFunction for NegLml<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        Ok(self.eval(u).0)
    }
}

impl Gradient for NegLml<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Vec<f64>) -> Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(u).1)
    }
}

fn default_start(d: usize, y: &DMatrix<f64>, b: &Bounds) -> Hyper {
    let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    let variance = var.clamp(b.variance.0, b.variance.1);
    Hyper {
        lengthscales: vec![1.0_f64.clamp(b.lengthscale.0, b.lengthscale.1); d],
        variance,
        noise: (1e-2 * variance).clamp(b.noise.0, b.noise.1),
    }
}

fn optimize(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &KernelConfig, seed: Seed) -> Hyper {
    let d = x.ncols();
    let map = Reparam::new(&cfg.bounds, d);
    let mut starts = vec![map.encode(cfg.fixed.as_ref().unwrap_or(&default_start(d, y, &cfg.bounds)))];
    let mut rng = seed.named("starts").rng();
    for _ in 1..cfg.restarts.max(1) {
        starts.push((0..d + 2).map(|_| rng.random_range(-3.0..3.0)).collect());
    }
    let problem_scale = (y.len() as f64).max(1.0);
    let results = exec::map_slice(&starts, |_, u0| {
        let problem = NegLml {
            x,
            y,
            map: &map,
            scale: problem_scale,
            last: RefCell::new(None),
        };
        let start_cost = problem.eval(u0).0;
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7)
            .with_tolerance_grad(1e-6)
            .and_then(|s| s.with_tolerance_cost(1e-9))
            .expect("positive tolerance");
        let best = Executor::new(problem, solver)
            .configure(|s| s.param(u0.clone()).max_iters(cfg.max_iters))
            .run()
            .ok()
            .and_then(|r| {
                let s = r.state();
                s.get_best_param().map(|p| (s.get_best_cost(), p.clone()))
            });
        match best {
            Some((c, p)) if c.is_finite() && c <= start_cost => (c, p),
            _ => (start_cost, u0.clone()),
        }
    });
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 < results[best].0 {
            best = i;
        }
    }
    map.to_hyper(&results[best].1)
}

fn check_fixed(h: &Hyper, d: usize) -> Result<(), GpError> {
    if h.lengthscales.len() != d {
        return Err(GpError::LengthscaleCount(h.lengthscales.len(), d));
    }
    let named = h
        .lengthscales
        .iter()
        .map(|&v| ("lengthscale", v))
        .chain([("variance", h.variance), ("noise", h.noise)]);
    for (name, value) in named {
        if !(value > 0.0 && value.is_finite()) {
            return Err(GpError::NotPositive { name, value });
        }
    }
    Ok(())
}

impl GpRegressor {
    /// Fits on `inputs` (one row per point) and `targets` (one row per
    /// point, one column per output).
    pub fn fit(
        inputs: &[Vec<f64>],
        targets: &DMatrix<f64>,
        cfg: &KernelConfig,
        seed: Seed,
    ) -> Result<GpRegressor, GpError> {
        let m = inputs.len();
        if m < 2 {
            return Err(GpError::TooFewPoints(m));
        }
        let d = inputs[0].len();
        if let Some(r) = inputs.iter().find(|r| r.len() != d) {
            return Err(GpError::Dimension {
                got: r.len(),
                expected: d,
            });
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            inputs[a]
                .iter()
                .zip(&inputs[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in order.windows(2) {
            if inputs[w[0]] == inputs[w[1]] {
                return Err(GpError::DuplicateInput(w[0].min(w[1]), w[0].max(w[1])));
            }
        }

        let (x_mean, x_scale, x) = standardize(inputs);
        let y_mean: Vec<f64> = targets.column_iter().map(|c| c.mean()).collect();
        let y = DMatrix::from_fn(m, targets.ncols(), |i, j| targets[(i, j)] - y_mean[j]);

        let hyper = if cfg.optimize {
            if m > cfg.max_opt_points {
                let mut pick = index::sample(&mut seed.named("subset").rng(), m, cfg.max_opt_points).into_vec();
                pick.sort_unstable();
                let xs = x.select_rows(&pick);
                let ys = y.select_rows(&pick);
                optimize(&xs, &ys, cfg, seed)
            } else {
                optimize(&x, &y, cfg, seed)
            }
        } else {
            let h = cfg.fixed.clone().unwrap_or_else(|| default_start(d, &y, &cfg.bounds));
            check_fixed(&h, d)?;
            h
        };
        let fit = fit_fixed(&x, &y, &hyper)?;
        Ok(GpRegressor {
            x_mean,
            x_scale,
            x,
            y_mean,
            alpha: fit.alpha,
            hyper,
            jitter: fit.jitter,
            lml: fit.lml,
        })
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Posterior mean at one point, one entry per output.
    pub fn mean_at(&self, point: &[f64]) -> Result<Vec<f64>, GpError> {
        if point.len() != self.dim() {
            return Err(GpError::Dimension {
                got: point.len(),
                expected: self.dim(),
            });
        }
        let z: Vec<f64> = point
            .iter()
            .zip(self.x_mean.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let kstar = DVector::from_fn(self.x.nrows(), |i, _| se(&self.x, i, &z, &self.hyper));
        let mean = self.alpha.tr_mul(&kstar);
        Ok(mean.iter().zip(&self.y_mean).map(|(a, b)| a + b).collect())
    }

    /// Posterior means for many points, one row per point.
    pub fn predict_mean(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>, GpError> {
        let rows = exec::try_map_range(points.len(), |i| self.mean_at(&points[i]))?;
        let p = self.y_mean.len();
        Ok(DMatrix::from_fn(points.len(), p, |i, j| rows[i][j]))
    }
}

fn coords(s: &SystemState) -> Vec<f64> {
    s.counts().iter().map(|&c| f64::from(c)).collect()
}

/// Clips to `[PROB_FLOOR, 1]` and renormalizes.
pub fn to_simplex(raw: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = raw.iter().map(|v| v.clamp(PROB_FLOOR, 1.0)).collect();
    let total: f64 = clipped.iter().sum();
    clipped.iter().map(|v| v / total).collect()
}

/// GP surrogate of the property map over state counts.
#[derive(Debug, Clone)]
pub struct GpModel {
    reg: GpRegressor,
}

/// Fits on the simulated entries of `map`, ordered by state so the result
/// does not depend on insertion order.
pub fn fit_gp(map: &PropertyMap, cfg: &KernelConfig, seed: Seed) -> Result<GpModel, GpError> {
    let mut train: Vec<&MapEntry> = map.simulated().collect();
    train.sort_by(|a, b| a.state.cmp(&b.state));
    let inputs: Vec<Vec<f64>> = train.iter().map(|e| coords(&e.state)).collect();
    let targets = DMatrix::from_fn(train.len(), map.n_patterns(), |i, j| train[i].dist.probs[j]);
    Ok(GpModel {
        reg: GpRegressor::fit(&inputs, &targets, cfg, seed)?,
    })
}

impl GpModel {
    pub fn regressor(&self) -> &GpRegressor {
        &self.reg
    }

    pub fn predict_one(&self, state: &SystemState) -> Result<SatisfactionDistribution, GpError> {
        let raw = self.reg.mean_at(&coords(state))?;
        Ok(SatisfactionDistribution {
            probs: to_simplex(&raw),
            sample_count: 0,
        })
    }

    pub fn predict(&self, states: &[SystemState]) -> Result<Vec<SatisfactionDistribution>, GpError> {
        exec::try_map_range(states.len(), |i| self.predict_one(&states[i]))
    }
}

/// Extends `map` with imputed entries for every state of `all_states` it
/// lacks. The model is only fitted when something is missing.
pub fn impute_map(
    map: &PropertyMap,
    all_states: &[SystemState],
    cfg: &KernelConfig,
    seed: Seed,
) -> Result<(PropertyMap, Option<GpModel>), GpError> {
    let missing: Vec<SystemState> = all_states
        .iter()
        .filter(|s| !map.contains(s))
        .cloned()
        .collect();
    if missing.is_empty() {
        return Ok((map.clone(), None));
    }
    let model = fit_gp(map, cfg, seed)?;
    let dists = model.predict(&missing)?;
    let mut out = map.clone();
    for (state, dist) in missing.into_iter().zip(dists) {
        out.insert(MapEntry {
            state,
            dist,
            provenance: Provenance::Imputed,
        })
        .expect("missing states are new and correctly sized");
    }
    Ok((out, Some(model)))
}
