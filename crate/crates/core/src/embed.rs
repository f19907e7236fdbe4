//! Jensen-Shannon dissimilarities and classical multidimensional scaling
//! with out-of-sample extension.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use thiserror::Error;

use crate::exec;
use crate::model::SystemState;
use crate::rng::Seed;
use crate::smc::PropertyMap;

/// Above this size the top eigenpairs are found by Lanczos iteration
/// instead of a full decomposition.
pub const FULL_EIGEN_MAX: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("distributions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("state {0} is not in the property map")]
    MissingState(SystemState),
    #[error("target dimension {n} must lie in 1..={max}")]
    BadDimension { n: usize, max: usize },
    #[error("expected {expected} dissimilarities, got {got}")]
    RowLength { got: usize, expected: usize },
    #[error("empty input")]
    Empty,
}

fn neg_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum()
}

fn jsd_with(p: &[f64], q: &[f64], hp: f64, hq: f64) -> f64 {
    let mix: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let m = 0.5 * (a + b);
            if m > 0.0 {
                m * m.log2()
            } else {
                0.0
            }
        })
        .sum();
    (0.5 * (hp + hq) - mix).clamp(0.0, 1.0)
}

/// Jensen-Shannon divergence in bits.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, EmbedError> {
    if p.len() != q.len() {
        return Err(EmbedError::LengthMismatch(p.len(), q.len()));
    }
    Ok(jsd_with(p, q, neg_entropy(p), neg_entropy(q)))
}

/// Symmetric matrix with zero diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    m: usize,
    values: Vec<f64>,
}

impl DissimilarityMatrix {
    pub fn from_fn(m: usize, f: impl Fn(usize, usize) -> f64 + Sync + Send) -> Self {
        let mut values = vec![0.0; m * m];
        exec::for_each_chunk_mut(&mut values, m.max(1), |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j { 0.0 } else { f(i, j) };
            }
        });
        DissimilarityMatrix { m, values }
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }
}

/// Pairwise JSD between distributions, rows computed in parallel.
pub fn jsd_rows(dists: &[&[f64]]) -> Result<DissimilarityMatrix, EmbedError> {
    if let Some(first) = dists.first() {
        if let Some(bad) = dists.iter().find(|d| d.len() != first.len()) {
            return Err(EmbedError::LengthMismatch(first.len(), bad.len()));
        }
    }
    let h: Vec<f64> = dists.iter().map(|d| neg_entropy(d)).collect();
    Ok(DissimilarityMatrix::from_fn(dists.len(), |i, j| {
        jsd_with(dists[i], dists[j], h[i], h[j])
    }))
}

/// JSD matrix over `states`, in the given order.
pub fn jsd_matrix(map: &PropertyMap, states: &[SystemState]) -> Result<DissimilarityMatrix, EmbedError> {
    let dists = states
        .iter()
        .map(|s| {
            map.get(s)
                .map(|e| e.dist.probs.as_slice())
                .ok_or_else(|| EmbedError::MissingState(s.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    jsd_rows(&dists)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenSolver {
    Auto,
    Full,
    Lanczos,
}

/// Classical MDS embedding of `m` training points into `n` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MdsEmbedding {
    /// `m x n`; column `i` is eigenvector `i` scaled by `sqrt(eigenvalue i)`.
    pub coords: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors, `m x n`.
    vectors: DMatrix<f64>,
    /// Row means of the squared training dissimilarities.
    row_means: Vec<f64>,
    grand_mean: f64,
    /// Fewer than `n` positive eigenvalues; missing columns are zero.
    pub deficient: bool,
}

/// Double-centered Gram matrix `-1/2 J D^2 J` and the centering statistics.
fn gram(d: &DissimilarityMatrix) -> (DMatrix<f64>, Vec<f64>, f64) {
    let m = d.size();
    let row_means: Vec<f64> = exec::map_range(m, |i| d.row(i).iter().map(|v| v * v).sum::<f64>() / m as f64);
    let grand_mean = row_means.iter().sum::<f64>() / m as f64;
    let mut b = vec![0.0; m * m];
    exec::for_each_chunk_mut(&mut b, m, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            let dij = d.get(i, j);
            *v = -0.5 * (dij * dij - row_means[i] - row_means[j] + grand_mean);
        }
    });
    // row-major data of a symmetric matrix is its own column-major layout
    (DMatrix::from_vec(m, m, b), row_means, grand_mean)
}

fn sym_matvec(b: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let m = b.nrows();
    let out = exec::map_range(m, |i| b.column(i).dot(x));
    DVector::from_vec(out)
}

/// Largest algebraic eigenpairs of a symmetric matrix by Lanczos iteration
/// with full reorthogonalization.
fn lanczos_top(b: &DMatrix<f64>, n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = b.nrows();
    let mut rng = Seed(0x6d64_735f_6c61_6e63).rng();
    let mut q0 = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    q0 /= q0.norm();
    let scale = b.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE) * m as f64;
    let max_steps = m;
    let mut steps = (4 * n + 40).min(m);
    loop {
        let mut q: Vec<DVector<f64>> = vec![q0.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut breakdown = false;
        for k in 0..steps {
            let mut w = sym_matvec(b, &q[k]);
            let a = q[k].dot(&w);
            alpha.push(a);
            for _ in 0..2 {
                for qj in &q {
                    let c = qj.dot(&w);
                    w.axpy(-c, qj, 1.0);
                }
            }
            let bn = w.norm();
            if k + 1 == steps {
                beta.push(bn);
                break;
            }
            if bn <= 1e-12 * scale {
                beta.push(0.0);
                breakdown = true;
                break;
            }
            beta.push(bn);
            q.push(w / bn);
        }
        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
        let take = n.min(k);
        let last_beta = *beta.last().unwrap_or(&0.0);
        let converged = breakdown
            || k >= max_steps
            || order[..take]
                .iter()
                .all(|&i| (last_beta * eig.eigenvectors[(k - 1, i)]).abs() <= 1e-10 * scale);
        if converged {
            let basis = DMatrix::from_columns(&q[..k]);
            let mut vals = Vec::with_capacity(take);
            let mut vecs = DMatrix::zeros(m, take);
            for (c, &i) in order[..take].iter().enumerate() {
                vals.push(eig.eigenvalues[i]);
                let v = &basis * eig.eigenvectors.column(i);
                vecs.set_column(c, &(&v / v.norm()));
            }
            return (vals, vecs);
        }
        steps = (steps * 2).min(max_steps);
    }
}

fn full_top(b: DMatrix<f64>, n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = b.nrows();
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let take = n.min(m);
    let vals = order[..take].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m, take, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Fits classical MDS on squared dissimilarities.
pub fn mds_fit(d: &DissimilarityMatrix, n: usize) -> Result<MdsEmbedding, EmbedError> {
    mds_fit_with(d, n, EigenSolver::Auto)
}

pub fn mds_fit_with(d: &DissimilarityMatrix, n: usize, solver: EigenSolver) -> Result<MdsEmbedding, EmbedError> {
    let m = d.size();
    if m == 0 {
        return Err(EmbedError::Empty);
    }
    if n == 0 || (m > 1 && n > m - 1) {
        return Err(EmbedError::BadDimension { n, max: m.saturating_sub(1).max(1) });
    }
    let (b, row_means, grand_mean) = gram(d);
    let use_full = match solver {
        EigenSolver::Auto => m <= FULL_EIGEN_MAX,
        EigenSolver::Full => true,
        EigenSolver::Lanczos => false,
    };
    let (vals, mut vecs) = if use_full { full_top(b, n) } else { lanczos_top(&b, n) };

    let tol = vals.first().map_or(0.0, |v| v.abs()) * 1e-12 + 1e-300;
    let mut eigenvalues = vec![0.0; n];
    let mut vectors = DMatrix::zeros(m, n);
    let mut deficient = false;
    for (c, ev) in eigenvalues.iter_mut().enumerate() {
        match vals.get(c) {
            Some(&l) if l > tol => {
                let mut v = vecs.column_mut(c);
                // sign: the largest-magnitude entry (first on ties) is positive
                let mut at = 0;
                for r in 1..m {
                    if v[r].abs() > v[at].abs() {
                        at = r;
                    }
                }
                if v[at] < 0.0 {
                    v.neg_mut();
                }
                vectors.set_column(c, &v);
                *ev = l;
            }
            _ => deficient = true,
        }
    }
    let coords = DMatrix::from_fn(m, n, |r, c| vectors[(r, c)] * eigenvalues[c].sqrt());
    Ok(MdsEmbedding {
        coords,
        eigenvalues,
        vectors,
        row_means,
        grand_mean,
        deficient,
    })
}

impl MdsEmbedding {
    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).iter().copied().collect()
    }

    /// Out-of-sample coordinates of a point given its (unsquared)
    /// dissimilarities to every training point.
    pub fn extend(&self, dissim: &[f64]) -> Result<Vec<f64>, EmbedError> {
        let m = self.len();
        if dissim.len() != m {
            return Err(EmbedError::RowLength {
                got: dissim.len(),
                expected: m,
            });
        }
        let d2: Vec<f64> = dissim.iter().map(|v| v * v).collect();
        let mean_a = d2.iter().sum::<f64>() / m as f64;
        let k: Vec<f64> = (0..m)
            .map(|b| -0.5 * (d2[b] - mean_a - self.row_means[b] + self.grand_mean))
            .collect();
        Ok((0..self.dim())
            .map(|c| {
                let l = self.eigenvalues[c];
                if l <= 0.0 {
                    return 0.0;
                }
                let dot: f64 = self.vectors.column(c).iter().zip(&k).map(|(v, kb)| v * kb).sum();
                dot / l.sqrt()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn euclid(points: &[Vec<f64>]) -> DissimilarityMatrix {
        DissimilarityMatrix::from_fn(points.len(), |i, j| {
            points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
    }

    fn embedded_dist(e: &MdsEmbedding, i: usize, j: usize) -> f64 {
        (e.coords.row(i) - e.coords.row(j)).norm()
    }

    // textbook definition, written out separately from the library form
    fn jsd_direct(p: &[f64], q: &[f64]) -> f64 {
        let kl = |a: &[f64], m: &[f64]| -> f64 {
            a.iter().zip(m).map(|(x, y)| if *x == 0.0 { 0.0 } else { x * (x / y).log2() }).sum()
        };
        let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
        0.5 * (kl(p, &m) + kl(q, &m))
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(jsd(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(jsd(&[1.0], &[0.5, 0.5]), Err(EmbedError::LengthMismatch(1, 2)));
        let d: [&[f64]; 3] = [&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]];
        let mat = jsd_rows(&d).unwrap();
        for i in 0..3 {
            assert_eq!(mat.get(i, i), 0.0);
            for j in 0..3 {
                assert!((mat.get(i, j) - jsd_direct(d[i], d[j])).abs() < 1e-12);
            }
        }
        // 1 - (3/4) log2(4/3) ... written via the mixture (3/4, 1/4)
        let want = 0.5 * ((4.0f64 / 3.0).log2() + 0.5 * (2.0f64 / 3.0).log2() + 0.5);
        assert!((mat.get(0, 2) - want).abs() < 1e-12);
        assert_eq!(jsd_rows(&d[..1]).unwrap().row(0), &[0.0]);
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-12;
            v.iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn jsd_is_a_bounded_symmetric_divergence(p in simplex(8), q in simplex(8)) {
            let a = jsd(&p, &q).unwrap();
            let b = jsd(&q, &p).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - jsd_direct(&p, &q)).abs() < 1e-12);
            prop_assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn mds_recovers_euclidean_clouds(
            pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 4..40),
            dim in 1usize..=3,
        ) {
            let pts: Vec<Vec<f64>> = pts.into_iter().map(|p| p[..dim].to_vec()).collect();
            let d = euclid(&pts);
            let e = mds_fit(&d, dim).unwrap();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    prop_assert!((embedded_dist(&e, i, j) - d.get(i, j)).abs() < 1e-6);
                }
                let back = e.extend(d.row(i)).unwrap();
                for (c, b) in back.iter().enumerate().take(dim) {
                    prop_assert!((b - e.coords[(i, c)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn equilateral_triangle() {
        let d = DissimilarityMatrix::from_fn(3, |_, _| 1.0);
        let e = mds_fit(&d, 2).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((embedded_dist(&e, i, j) - 1.0).abs() < 1e-8);
        }
        for c in 0..2 {
            assert!((e.coords.column(c).norm_squared() - e.eigenvalues[c]).abs() < 1e-8);
        }
        // equidistant from all three vertices of a centered configuration
        let centre = e.extend(&[1.0 / 3f64.sqrt(); 3]).unwrap();
        assert!(centre.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn coincident_points_embed_at_origin() {
        let e = mds_fit(&DissimilarityMatrix::from_fn(4, |_, _| 0.0), 2).unwrap();
        assert!(e.coords.iter().all(|&v| v == 0.0));
        assert!(e.deficient);
    }

    #[test]
    fn new_point_keeps_true_distances() {
        let mut rng = Seed(4).rng();
        let pts: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
        let e = mds_fit(&euclid(&pts), 2).unwrap();
        let a = [1.7, -2.2];
        let row: Vec<f64> = pts.iter().map(|p| ((p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2)).sqrt()).collect();
        let y = e.extend(&row).unwrap();
        for (i, want) in row.iter().enumerate() {
            let got = ((y[0] - e.coords[(i, 0)]).powi(2) + (y[1] - e.coords[(i, 1)]).powi(2)).sqrt();
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn lanczos_matches_full_decomposition() {
        let mut rng = Seed(9).rng();
        let dists: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let v: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = dists.iter().map(|d| d.as_slice()).collect();
        let d = jsd_rows(&refs).unwrap();
        let full = mds_fit_with(&d, 3, EigenSolver::Full).unwrap();
        let lan = mds_fit_with(&d, 3, EigenSolver::Lanczos).unwrap();
        for c in 0..3 {
            assert!((full.eigenvalues[c] - lan.eigenvalues[c]).abs() < 1e-9);
        }
        assert!((&full.coords - &lan.coords).amax() < 1e-6);
    }

    #[test]
    fn dimension_checks() {
        let d = DissimilarityMatrix::from_fn(3, |_, _| 1.0);
        assert!(matches!(mds_fit(&d, 3), Err(EmbedError::BadDimension { .. })));
        assert!(matches!(mds_fit(&d, 0), Err(EmbedError::BadDimension { .. })));
        let e = mds_fit(&d, 1).unwrap();
        assert!(matches!(e.extend(&[1.0]), Err(EmbedError::RowLength { .. })));
    }
}
