//! Random formulae and lattice-aligned SIRS trajectories.

use rand::Rng as _;

use coarseqest::expr::Expr;
use coarseqest::mitl::{Atom, CmpOp, Formula};
use coarseqest::model::{simulate_ssa_with, ReactionNetwork, SystemState, Trajectory};
use coarseqest::rng::Rng;

fn bound(rng: &mut Rng, max: f64, delta: f64) -> f64 {
    let steps = (max / delta).floor() as u32;
    f64::from(rng.random_range(0..=steps)) * delta
}

fn atom(rng: &mut Rng, dim: usize, scale: u32) -> Formula {
    let op = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge][rng.random_range(0..4)];
    let lhs = if rng.random_bool(0.2) && dim > 1 {
        Expr::Bin(
            coarseqest::expr::BinOp::Add,
            Box::new(Expr::Species(0)),
            Box::new(Expr::Species(1)),
        )
    } else {
        Expr::Species(rng.random_range(0..dim))
    };
    let rhs = Expr::Num(f64::from(rng.random_range(0..=scale)));
    Formula::Atom(Atom { lhs, op, rhs })
}

/// Random formula of nesting depth at most `depth` whose required horizon
/// is at most `budget`, with bounds on the `delta` lattice.
pub fn formula(rng: &mut Rng, depth: usize, budget: f64, delta: f64, dim: usize, scale: u32) -> Formula {
    if depth == 0 || rng.random_bool(0.15) {
        return if rng.random_bool(0.05) {
            Formula::True
        } else {
            atom(rng, dim, scale)
        };
    }
    let choice = rng.random_range(0..5);
    if choice < 3 {
        let hi = bound(rng, budget, delta);
        let lo = bound(rng, hi, delta);
        let rest = budget - hi;
        return match choice {
            0 => Formula::until(
                formula(rng, depth - 1, rest, delta, dim, scale),
                formula(rng, depth - 1, rest, delta, dim, scale),
                lo,
                hi,
            ),
            1 => Formula::eventually(formula(rng, depth - 1, rest, delta, dim, scale), lo, hi),
            _ => Formula::always(formula(rng, depth - 1, rest, delta, dim, scale), lo, hi),
        };
    }
    match choice {
        3 => Formula::negate(formula(rng, depth - 1, budget, delta, dim, scale)),
        _ => Formula::and(
            formula(rng, depth - 1, budget, delta, dim, scale),
            formula(rng, depth - 1, budget, delta, dim, scale),
        ),
    }
}

/// SSA path from a random state with jump times rounded up to the `delta`
/// lattice; jumps landing on the same lattice point keep the last state.
pub fn lattice_trajectory(
    net: &ReactionNetwork,
    states: &[SystemState],
    rng: &mut Rng,
    horizon: f64,
    delta: f64,
) -> Trajectory {
    let init = states[rng.random_range(0..states.len())].clone();
    let x = simulate_ssa_with(net, &init, horizon, rng).unwrap();
    let mut jumps: Vec<(f64, SystemState)> = Vec::new();
    for i in 0..x.num_jumps() {
        let t = ((x.jump_times()[i] / delta).ceil() * delta).min(horizon);
        let s = SystemState(x.jump_state(i).to_vec());
        match jumps.last_mut() {
            Some(last) if last.0 == t => last.1 = s,
            _ => jumps.push((t, s)),
        }
    }
    Trajectory::from_jumps(init, jumps, horizon)
}
