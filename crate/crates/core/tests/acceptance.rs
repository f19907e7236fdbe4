//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod support;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use coarseqest::embed::{mds_fit, DissimilarityMatrix};
use coarseqest::exec;
use coarseqest::expr::Scope;
use coarseqest::gp::{fit_gp, KernelConfig};
use coarseqest::mitl::{parse_formula, FormulaSet};
use coarseqest::model::{parse_model, SystemState};
use coarseqest::pipeline::{Pipeline, RunConfig, COARSE_DYNAMICS, MANIFEST, TIMINGS};
use coarseqest::rng::Seed;
use coarseqest::smc::{build_property_map, estimate_distribution, sample_states, PropertyMap};
use nalgebra::DMatrix;
use rand::Rng as _;

const REPO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sirs_formulas(n: f64) -> FormulaSet {
    let scope = Scope::new(vec!["S".into(), "I".into(), "R".into()])
        .with_constant("N", n)
        .with_constant("lambda", 0.4);
    let f = |t: &str| parse_formula(t, &scope).unwrap();
    FormulaSet::new(vec![
        ("phi1".into(), f("G[0,100] (I < lambda*N)")),
        ("phi2".into(), f("F[0,60] G[0,40] (I >= 0.05*N & I <= 0.2*N)")),
        ("phi3".into(), f("F[30,50] (I > 0.3*N)")),
    ])
    .unwrap()
}

fn shipped_config(run_dir: &Path) -> RunConfig {
    let text = fs::read_to_string(Path::new(REPO).join("run.toml")).unwrap();
    let mut cfg = RunConfig::from_toml(&text, Path::new(REPO)).unwrap();
    cfg.run_dir = run_dir.to_path_buf();
    cfg
}

fn run_pipeline(cfg: RunConfig, workers: usize) -> (Pipeline, f64) {
    let p = Pipeline::new(cfg, false).unwrap();
    let start = Instant::now();
    exec::with_workers(workers, || p.run_all()).unwrap();
    (p, start.elapsed().as_secs_f64())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let n = support::sirs().enumerate_states().unwrap().len();
    let secs = start.elapsed().as_secs_f64();
    outcome(n == 5151 && secs < 1.0, format!("{n} states in {secs:.3}s"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let bad = support::mitl_oracle::disagreements(1000, Seed(2016));
    let secs = start.elapsed().as_secs_f64();
    outcome(bad == 0 && secs < 60.0, format!("{bad} disagreements over 1000 cases in {secs:.1}s"))
}

/// Birth-death chain on `X + Y = 40`; the oracle makes `X > c` absorbing and
/// exponentiates the dense generator.
fn criterion_3() -> Outcome {
    let (pop, birth, death, x0, c, t) = (40u32, 0.12, 0.1, 10u32, 22u32, 10.0);
    let text = format!(
        "species = [\"X\", \"Y\"]\npopulation = {pop}\n\n\
         [[reactions]]\nname = \"birth\"\nreactants = {{ Y = 1 }}\nproducts = {{ X = 1 }}\nrate = \"{birth}\"\n\n\
         [[reactions]]\nname = \"death\"\nreactants = {{ X = 1 }}\nproducts = {{ Y = 1 }}\nrate = \"{death}\"\n"
    );
    let net = parse_model(&text).unwrap();
    let n = pop as usize + 1;
    let mut q = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        if x as u32 > c {
            continue;
        }
        let up = birth * f64::from(pop - x as u32);
        let down = death * x as f64;
        if x + 1 < n {
            q[(x, x + 1)] = up;
        }
        if x > 0 {
            q[(x, x - 1)] = down;
        }
        q[(x, x)] = -(up + down);
    }
    let p_t = (q * t).exp();
    let exact: f64 = ((c as usize + 1)..n).map(|j| p_t[(x0 as usize, j)]).sum();

    let scope = Scope::new(vec!["X".into(), "Y".into()]);
    let formulas = FormulaSet::new(vec![("reach".into(), parse_formula(&format!("F[0,{t}] (X > {c})"), &scope).unwrap())]).unwrap();
    let m = 10_000;
    let est = estimate_distribution(&net, &SystemState(vec![x0, pop - x0]), &formulas, m, t, Seed(3)).unwrap().marginal(0);
    let se = (exact * (1.0 - exact) / m as f64).sqrt();
    let z = (est - exact).abs() / se;
    outcome(z <= 4.0, format!("exact {exact:.5}, SMC {est:.5}, |z| = {z:.2}"))
}

fn criterion_4() -> Outcome {
    let net = support::sirs();
    let formulas = sirs_formulas(100.0);
    let all = net.enumerate_states().unwrap();
    let seed = Seed(44);
    let train = sample_states(&all, 0.1, seed.named("sample")).unwrap();
    let map = build_property_map(&net, &train, &formulas, 1000, 100.0, seed.named("smc")).unwrap();
    let gp = fit_gp(&map, &KernelConfig::default(), seed.named("gp")).unwrap();

    let unseen: Vec<SystemState> = all.iter().filter(|s| !map.contains(s)).cloned().collect();
    let held = sample_states(&unseen, 200.0 / unseen.len() as f64, seed.named("held")).unwrap();
    let fresh = build_property_map(&net, &held, &formulas, 1000, 100.0, seed.named("fresh")).unwrap();
    let again = build_property_map(&net, &held, &formulas, 1000, 100.0, seed.named("again")).unwrap();
    let pred = gp.predict(&held).unwrap();
    let mean = |f: &dyn Fn(usize) -> f64| (0..held.len()).map(f).sum::<f64>() / held.len() as f64;
    let d_gp = mean(&|i| l1(&pred[i].probs, &fresh.entries()[i].dist.probs));
    let d_smc = mean(&|i| l1(&again.entries()[i].dist.probs, &fresh.entries()[i].dist.probs));
    outcome(
        d_gp <= 0.15 && d_gp <= 3.0 * d_smc,
        format!("{} held-out states: mean L1 GP vs SMC {d_gp:.4}, SMC vs SMC {d_smc:.4} (ratio {:.2})", held.len(), d_gp / d_smc),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = Seed(5).rng();
    let (mut worst_d, mut worst_x) = (0.0f64, 0.0f64);
    for _ in 0..40 {
        let m = rng.random_range(4..=50);
        let dim = rng.random_range(1..=3).min(m - 1);
        let pts: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d = DissimilarityMatrix::from_fn(m, |i, j| dist(&pts[i], &pts[j]));
        let emb = mds_fit(&d, dim).unwrap();
        for i in 0..m {
            for j in 0..m {
                let got = dist(&emb.point(i), &emb.point(j));
                worst_d = worst_d.max((got - d.get(i, j)).abs());
            }
            let back = emb.extend(d.row(i)).unwrap();
            worst_x = worst_x.max(l1(&back, &emb.point(i)));
        }
    }
    outcome(
        worst_d <= 1e-6 && worst_x <= 1e-8,
        format!("40 clouds: max distance error {worst_d:.2e}, max extension error {worst_x:.2e}"),
    )
}

// JSD in bits straight from the KL definition.
fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).log2())
            .sum::<f64>()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn criterion_6(p: &Pipeline) -> Outcome {
    let map: PropertyMap = p.read_property_map(coarseqest::pipeline::IMPUTED_MAP).unwrap();
    let emb = p.read_embedding().unwrap();
    let m = emb.states.len();
    let mut rng = Seed(6).rng();
    let (mut js, mut eu) = (Vec::new(), Vec::new());
    for _ in 0..100_000 {
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        let pi = &map.get(&emb.states[i]).unwrap().dist.probs;
        let pj = &map.get(&emb.states[j]).unwrap().dist.probs;
        js.push(jsd_oracle(pi, pj));
        let d: f64 = (0..emb.coords.ncols())
            .map(|c| (emb.coords[(i, c)] - emb.coords[(j, c)]).powi(2))
            .sum();
        eu.push(d.sqrt());
    }
    let rho = pearson(&ranks(&js), &ranks(&eu));
    outcome(rho >= 0.7, format!("Spearman {rho:.4} over 100000 pairs of {m} states"))
}

fn criterion_7(p: &Pipeline) -> Outcome {
    let part = p.read_partition().unwrap();
    let distinct: BTreeSet<usize> = part.macros.iter().copied().collect();
    let coarse = p.read_coarse().unwrap();
    let c = coarse.corpus;
    let ratio = c.mean_fine_events / c.mean_macro_transitions;
    outcome(
        part.embedding.states.len() == 5151 && distinct.len() == 10 && ratio >= 3.0,
        format!(
            "{} states onto {} macro-states; {} trajectories: fine events {:.1} ± {:.1}, macro transitions {:.2} ± {:.2}, ratio {ratio:.1}",
            part.embedding.states.len(),
            distinct.len(),
            c.trajectories,
            c.mean_fine_events,
            c.sd_fine_events,
            c.mean_macro_transitions,
            c.sd_macro_transitions
        ),
    )
}

fn criterion_8(p: &Pipeline, label: &str) -> Outcome {
    let r = p.read_validation().unwrap();
    let frac = r.steady_fraction_below();
    let steady: Vec<usize> = (0..r.times.len()).filter(|&i| r.times[i] >= r.steady_from).collect();
    let mean_steady = steady.iter().map(|&i| r.distances[i]).sum::<f64>() / steady.len() as f64;
    let transient_max = (0..r.times.len())
        .filter(|&i| r.times[i] < r.steady_from)
        .map(|i| r.distances[i])
        .fold(0.0, f64::max);
    outcome(
        frac > 0.5,
        format!(
            "{label}: bound {:.4}, {:.1}% of t >= {} below it, mean steady L1 {mean_steady:.4}, max transient L1 {transient_max:.4}",
            r.bound,
            100.0 * frac,
            r.steady_from
        ),
    )
}

fn reduced_sirs(dir: &Path) -> Pipeline {
    let model = fs::read_to_string(Path::new(REPO).join("sirs.model")).unwrap().replace("population = 100", "population = 40");
    let model_path = dir.join("sirs40.model");
    fs::create_dir_all(dir).unwrap();
    fs::write(&model_path, model).unwrap();
    let mut cfg = shipped_config(&dir.join("run"));
    cfg.model = model_path;
    cfg.validate.init = vec![38, 2, 0];
    run_pipeline(cfg, exec::workers()).0
}

fn criterion_9(t_tenth: f64, t_full: f64) -> Outcome {
    let r = t_tenth / t_full;
    outcome(
        r <= 0.25,
        format!("fraction 0.1: {t_tenth:.1}s, fraction 1.0: {t_full:.1}s, ratio {:.1}%", 100.0 * r),
    )
}

fn artifact_files(dir: &Path) -> HashMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != TIMINGS)
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn criterion_10(a: &Path, b: &Path) -> Outcome {
    let fa = artifact_files(a);
    let fb = artifact_files(b);
    let mut names: Vec<&String> = fa.keys().collect();
    names.sort();
    let differing: Vec<&String> = names.iter().copied().filter(|n| fa.get(*n) != fb.get(*n)).collect();
    let complete = fa.contains_key(MANIFEST) && fa.contains_key(COARSE_DYNAMICS) && fa.len() == fb.len();
    outcome(
        complete && differing.is_empty(),
        format!("{} artifacts compared at 1 and 2 workers, {} differ {:?}", names.len(), differing.len(), differing),
    )
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| -> PathBuf { tmp.path().join(name) };
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let mut report = |name: &str, o: Outcome| {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name.to_string(), o));
    };

    report("1", criterion_1());
    report("2", criterion_2());
    report("3", criterion_3());
    report("4", criterion_4());
    report("5", criterion_5());

    let (main_run, t_tenth) = run_pipeline(shipped_config(&dir("w1")), 1);
    report("6", criterion_6(&main_run));
    report("7", criterion_7(&main_run));
    report("8", criterion_8(&main_run, "SIRS N=100"));
    report("8 (reduced)", criterion_8(&reduced_sirs(&dir("n40")), "SIRS N=40"));

    let mut full = shipped_config(&dir("full"));
    full.smc.fraction = 1.0;
    let (_, t_full) = run_pipeline(full, 1);
    report("9", criterion_9(t_tenth, t_full));

    run_pipeline(shipped_config(&dir("w2")), 2);
    report("10", criterion_10(&dir("w1"), &dir("w2")));

    let failed = results.iter().filter(|r| !r.1.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
