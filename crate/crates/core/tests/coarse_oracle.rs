//! Empirical sojourn histograms against analytic phase-type bin masses on a
//! three-state chain lumped into two macro-states.

use std::collections::HashMap;

use coarseqest::cluster::CoarseningMap;
use coarseqest::coarse::{build_dynamics, coarsen_trajectory, CoarseDynamics, MacroTrajectory};
use coarseqest::model::{parse_model, simulate_ssa, SystemState};
use coarseqest::rng::Seed;
use nalgebra::{DMatrix, DVector};

// 0 -> 1 (a), 1 -> 0 (b), 0 -> 2 (c), 1 -> 2 (d), 2 -> 0 (e)
const RATES: [f64; 5] = [1.0, 0.5, 0.3, 0.8, 1.0];

fn chain() -> String {
    let [a, b, c, d, e] = RATES;
    let r = |name: &str, from: &str, to: &str, k: f64| {
        format!("[[reactions]]\nname = \"{name}\"\nreactants = {{ {from} = 1 }}\nproducts = {{ {to} = 1 }}\nrate = \"{k}\"\n\n")
    };
    let mut s = String::from("species = [\"X0\", \"X1\", \"X2\"]\npopulation = 1\n\n");
    s += &r("a", "X0", "X1", a);
    s += &r("b", "X1", "X0", b);
    s += &r("c", "X0", "X2", c);
    s += &r("d", "X1", "X2", d);
    s += &r("e", "X2", "X0", e);
    s
}

/// Survival function of the sojourn in macro 0, always entered at fine state 0.
fn survival_a(t: f64) -> f64 {
    let [a, b, c, d, _] = RATES;
    let sub = DMatrix::from_row_slice(2, 2, &[-(a + c), a, b, -(b + d)]);
    let p = (sub * t).exp() * DVector::from_element(2, 1.0);
    p[0]
}

fn bin_masses(survival: impl Fn(f64) -> f64, dynamics: &CoarseDynamics) -> Vec<f64> {
    let edges = &dynamics.time_bins;
    (0..dynamics.n_bins)
        .map(|i| {
            let hi = if i + 1 == dynamics.n_bins { 0.0 } else { survival(edges[i + 1]) };
            survival(edges[i]) - hi
        })
        .collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[test]
fn sojourn_histograms_match_phase_type() {
    let net = parse_model(&chain()).unwrap();
    let mut table = HashMap::new();
    table.insert(SystemState(vec![1, 0, 0]), 0);
    table.insert(SystemState(vec![0, 1, 0]), 0);
    table.insert(SystemState(vec![0, 0, 1]), 1);
    let cmap = CoarseningMap::new(2, table);
    let init = SystemState(vec![1, 0, 0]);

    let mut trajs: Vec<MacroTrajectory> = Vec::new();
    let mut sojourns_a = 0;
    let mut i = 0;
    while sojourns_a < 100_000 {
        let x = simulate_ssa(&net, &init, 5000.0, Seed(17).child(i)).unwrap();
        let m = coarsen_trajectory(&x, &cmap).unwrap();
        sojourns_a += m.sojourns().filter(|s| s.0 == 0).count();
        trajs.push(m);
        i += 1;
    }
    let dynamics = build_dynamics(&trajs, 2, 1.0).unwrap();

    for m in 0..2 {
        let total: u64 = dynamics.sojourn_counts[m].iter().sum();
        assert!((dynamics.sojourn_hist[m].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for b in 0..dynamics.n_bins {
            let row: u64 = dynamics.trans_counts[m][b].iter().sum();
            assert_eq!(row, dynamics.sojourn_counts[m][b]);
            assert_eq!(dynamics.trans_counts[m][b][m], 0);
            if row > 0 {
                assert!((dynamics.trans[m][b].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert_eq!(dynamics.zero_support[m][b], row == 0);
        }
        assert!(total > 0);
    }

    let expected_a = bin_masses(survival_a, &dynamics);
    let e = RATES[4];
    let expected_b = bin_masses(|t| (-e * t).exp(), &dynamics);
    let da = l1(&dynamics.sojourn_hist[0], &expected_a);
    let db = l1(&dynamics.sojourn_hist[1], &expected_b);
    assert!(da <= 0.02, "macro 0 L1 {da}");
    assert!(db <= 0.02, "macro 1 L1 {db}");
}
