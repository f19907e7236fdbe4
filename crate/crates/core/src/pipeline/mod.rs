//! Stage orchestration: each stage reads its upstream artifacts from the
//! run directory, checks their config hash and writes its own.

mod config;
mod table;
mod timing;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ClusterConfig, CoarsenConfig, EmbedConfig, FormulaSpec, RunConfig, SmcConfig, ValidateConfig};
pub use table::Table;
pub use timing::{report_timings, StageTimings, TimingReport, TimingRow};

use crate::cluster::{kmeans, ClusterError, CoarseningMap};
use crate::coarse::{build_dynamics, coarsen_trajectory, validate, CoarseDynamics, CoarseError, ValidationReport};
use crate::embed::{jsd, jsd_rows, mds_fit, EmbedError};
use crate::exec;
use crate::expr::Scope;
use crate::gp::{impute_map, GpError, Hyper};
use crate::mitl::{parse_formula, FormulaSet, MitlError};
use crate::model::{parse_model, simulate_ssa, ModelError, ReactionNetwork, SystemState};
use crate::rng::Seed;
use crate::smc::{build_property_map, sample_states, MapEntry, PropertyMap, Provenance, SatisfactionDistribution, SmcError};
use table::{malformed, parse_field};

pub const PROPERTY_MAP: &str = "property_map.tsv";
pub const IMPUTED_MAP: &str = "property_map_imputed.tsv";
pub const GP_KERNEL: &str = "gp_kernel.json";
pub const EMBEDDING: &str = "embedding.tsv";
pub const PARTITION: &str = "partition.tsv";
pub const COARSE_DYNAMICS: &str = "coarse_dynamics.json";
pub const VALIDATION: &str = "validation.tsv";
pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("missing upstream artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("{path} was produced by config {found}, current config is {expected} (use --force to ignore)")]
    StaleArtifact { path: PathBuf, found: String, expected: String },
    #[error("{path}:{line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mitl(#[from] MitlError),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Coarse(#[from] CoarseError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Smc,
    Impute,
    Embed,
    Cluster,
    Coarsen,
    Validate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Smc,
        Stage::Impute,
        Stage::Embed,
        Stage::Cluster,
        Stage::Coarsen,
        Stage::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Smc => "smc",
            Stage::Impute => "impute",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Coarsen => "coarsen",
            Stage::Validate => "validate",
        }
    }

    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Smc => &[PROPERTY_MAP],
            Stage::Impute => &[IMPUTED_MAP, GP_KERNEL],
            Stage::Embed => &[EMBEDDING],
            Stage::Cluster => &[PARTITION],
            Stage::Coarsen => &[COARSE_DYNAMICS],
            Stage::Validate => &[VALIDATION],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpKernelArtifact {
    pub config_hash: String,
    /// False when every state was simulated and nothing was imputed.
    pub fitted: bool,
    pub hyper: Option<Hyper>,
    pub jitter: Option<f64>,
    pub log_marginal_likelihood: Option<f64>,
    pub training_points: usize,
    pub imputed_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub trajectories: usize,
    pub horizon: f64,
    pub mean_fine_events: f64,
    pub sd_fine_events: f64,
    pub mean_macro_transitions: f64,
    pub sd_macro_transitions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseArtifact {
    pub config_hash: String,
    pub corpus: CorpusStats,
    pub dynamics: CoarseDynamics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: BTreeMap<String, String>,
}

/// Embedded states with coordinates, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub states: Vec<SystemState>,
    pub provenance: Vec<Provenance>,
    pub coords: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Embedded states with their macro-state.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTable {
    pub embedding: EmbeddingTable,
    pub macros: Vec<usize>,
    pub centroids: DMatrix<f64>,
    pub k: usize,
}

impl PartitionTable {
    pub fn coarsening_map(&self) -> CoarseningMap {
        let table: HashMap<SystemState, usize> = self.embedding.states.iter().cloned().zip(self.macros.iter().copied()).collect();
        CoarseningMap::new(self.k, table)
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    hash: String,
    network: ReactionNetwork,
    formulas: FormulaSet,
    horizon: f64,
    dir: PathBuf,
    force: bool,
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

impl Pipeline {
    pub fn new(cfg: RunConfig, force: bool) -> Result<Pipeline, PipelineError> {
        cfg.check()?;
        let text = fs::read_to_string(&cfg.model).map_err(|e| PipelineError::io(&cfg.model, e))?;
        let network = parse_model(&text)?;
        let mut scope = Scope::new(network.species().to_vec());
        if let Some(n) = network.conservation() {
            scope = scope.with_constant("N", f64::from(n));
        }
        for (k, v) in &cfg.constants {
            scope = scope.with_constant(k, *v);
        }
        let named = cfg
            .formulas
            .iter()
            .map(|f| Ok((f.name.clone(), parse_formula(&f.text, &scope)?)))
            .collect::<Result<Vec<_>, MitlError>>()?;
        let formulas = FormulaSet::new(named)?;
        let horizon = cfg.smc.horizon.unwrap_or_else(|| formulas.horizon_needed());
        if cfg.validate.init.len() != network.num_species() {
            return Err(PipelineError::Config(format!(
                "validate.init has {} counts, the model has {} species",
                cfg.validate.init.len(),
                network.num_species()
            )));
        }
        network.validate_state(&SystemState(cfg.validate.init.clone()))?;
        let hash = cfg.hash()?;
        let dir = cfg.run_dir.clone();
        Ok(Pipeline {
            cfg,
            hash,
            network,
            formulas,
            horizon,
            dir,
            force,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn network(&self) -> &ReactionNetwork {
        &self.network
    }

    pub fn formulas(&self) -> &FormulaSet {
        &self.formulas
    }

    pub fn run_dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn seed(&self, name: &str) -> Seed {
        Seed(self.cfg.seed).named(name)
    }

    /// Runs one stage and records its wall time and artifact digests.
    pub fn run(&self, stage: Stage) -> Result<f64, PipelineError> {
        fs::create_dir_all(&self.dir).map_err(|e| PipelineError::io(&self.dir, e))?;
        let start = Instant::now();
        match stage {
            Stage::Smc => self.smc()?,
            Stage::Impute => self.impute()?,
            Stage::Embed => self.embed()?,
            Stage::Cluster => self.cluster()?,
            Stage::Coarsen => self.coarsen()?,
            Stage::Validate => self.validate()?,
        }
        let secs = start.elapsed().as_secs_f64();
        self.record(stage, secs)?;
        Ok(secs)
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, f64)>, PipelineError> {
        Stage::ALL.into_iter().map(|s| Ok((s, self.run(s)?))).collect()
    }

    fn record(&self, stage: Stage, secs: f64) -> Result<(), PipelineError> {
        let mpath = self.path(MANIFEST);
        let mut manifest = match read_json::<Manifest>(&mpath) {
            Ok(m) if m.config_hash == self.hash => m,
            _ => Manifest {
                tool: "coarseqest".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config_hash: self.hash.clone(),
                seed: self.cfg.seed,
                artifacts: BTreeMap::new(),
            },
        };
        for name in stage.artifacts() {
            manifest.artifacts.insert((*name).to_string(), config::file_digest(&self.path(name))?);
        }
        write_json(&mpath, &manifest)?;

        let tpath = self.path(TIMINGS);
        let mut t = match read_json::<StageTimings>(&tpath) {
            Ok(t) if t.config_hash == self.hash => t,
            _ => StageTimings {
                config_hash: self.hash.clone(),
                fraction: self.cfg.smc.fraction,
                workers: exec::workers(),
                seconds: BTreeMap::new(),
            },
        };
        t.workers = exec::workers();
        t.seconds.insert(stage.name().to_string(), secs);
        write_json(&tpath, &t)
    }

    fn check_hash(&self, path: &Path, found: Option<&str>) -> Result<(), PipelineError> {
        let found = found.unwrap_or("");
        if found != self.hash && !self.force {
            return Err(PipelineError::StaleArtifact {
                path: path.to_path_buf(),
                found: found.to_string(),
                expected: self.hash.clone(),
            });
        }
        Ok(())
    }

    fn species_header(&self) -> Vec<String> {
        self.network.species().to_vec()
    }

    fn parse_state(&self, path: &Path, row_no: usize, row: &[String]) -> Result<SystemState, PipelineError> {
        let d = self.network.num_species();
        let counts = row[..d]
            .iter()
            .map(|s| parse_field::<u32>(path, row_no, s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SystemState(counts))
    }

    fn map_table(&self, map: &PropertyMap) -> Table {
        let mut header = self.species_header();
        header.extend(["provenance".to_string(), "samples".to_string()]);
        header.extend((0..map.n_patterns()).map(|p| format!("p{p}")));
        let mut t = Table::new(header)
            .meta("config_hash", &self.hash)
            .meta("formulas", self.formulas.names().join(","));
        for e in map.entries() {
            let mut row: Vec<String> = e.state.0.iter().map(u32::to_string).collect();
            row.push(e.provenance.as_str().to_string());
            row.push(e.dist.sample_count.to_string());
            row.extend(e.dist.probs.iter().map(f64::to_string));
            t.rows.push(row);
        }
        t
    }

    pub fn read_property_map(&self, name: &str) -> Result<PropertyMap, PipelineError> {
        let path = self.path(name);
        let t = Table::read(&path)?;
        self.check_hash(&path, t.get_meta("config_hash"))?;
        let d = self.network.num_species();
        let n_patterns = self.formulas.num_patterns();
        if t.header.len() != d + 2 + n_patterns {
            return Err(malformed(&path, 0, "unexpected column count"));
        }
        let mut map = PropertyMap::new(n_patterns);
        for (i, row) in t.rows.iter().enumerate() {
            let state = self.parse_state(&path, i, row)?;
            let provenance = parse_provenance(&path, i, &row[d])?;
            let sample_count = parse_field(&path, i, &row[d + 1])?;
            let probs = row[d + 2..]
                .iter()
                .map(|s| parse_field::<f64>(&path, i, s))
                .collect::<Result<Vec<_>, _>>()?;
            map.insert(MapEntry {
                state,
                dist: SatisfactionDistribution { probs, sample_count },
                provenance,
            })?;
        }
        Ok(map)
    }

    fn smc(&self) -> Result<(), PipelineError> {
        let all = self.network.enumerate_states()?;
        let states = sample_states(&all, self.cfg.smc.fraction, self.seed("sample"))?;
        let map = build_property_map(
            &self.network,
            &states,
            &self.formulas,
            self.cfg.smc.trajectories,
            self.horizon,
            self.seed("smc"),
        )?;
        self.map_table(&map)
            .meta("total_states", all.len())
            .meta("horizon", self.horizon)
            .write(&self.path(PROPERTY_MAP))
    }

    fn impute(&self) -> Result<(), PipelineError> {
        let map = self.read_property_map(PROPERTY_MAP)?;
        let all = self.network.enumerate_states()?;
        let (full, model) = impute_map(&map, &all, &self.cfg.gp, self.seed("gp"))?;
        let kernel = GpKernelArtifact {
            config_hash: self.hash.clone(),
            fitted: model.is_some(),
            hyper: model.as_ref().map(|m| m.regressor().hyper().clone()),
            jitter: model.as_ref().map(|m| m.regressor().jitter()),
            log_marginal_likelihood: model.as_ref().map(|m| m.regressor().log_marginal_likelihood()),
            training_points: map.len(),
            imputed_points: full.count(Provenance::Imputed),
        };
        self.map_table(&full).write(&self.path(IMPUTED_MAP))?;
        write_json(&self.path(GP_KERNEL), &kernel)
    }

    fn embed(&self) -> Result<(), PipelineError> {
        let map = self.read_property_map(IMPUTED_MAP)?;
        let train: Vec<&MapEntry> = map.simulated().collect();
        let train_probs: Vec<&[f64]> = train.iter().map(|e| e.dist.probs.as_slice()).collect();
        let d = jsd_rows(&train_probs)?;
        let emb = mds_fit(&d, self.cfg.embed.dimension)?;
        let others: Vec<&MapEntry> = map.entries().iter().filter(|e| e.provenance == Provenance::Imputed).collect();
        let placed = exec::try_map_range(others.len(), |i| {
            let row = train_probs
                .iter()
                .map(|t| jsd(&others[i].dist.probs, t))
                .collect::<Result<Vec<_>, _>>()?;
            emb.extend(&row)
        })?;

        let n = emb.dim();
        let mut header = self.species_header();
        header.push("provenance".into());
        header.extend((1..=n).map(|i| format!("x{i}")));
        let eig: Vec<String> = emb.eigenvalues.iter().map(f64::to_string).collect();
        let mut t = Table::new(header)
            .meta("config_hash", &self.hash)
            .meta("eigenvalues", eig.join(","))
            .meta("deficient", emb.deficient);
        let mut push = |e: &MapEntry, coord: Vec<f64>| {
            let mut row: Vec<String> = e.state.0.iter().map(u32::to_string).collect();
            row.push(e.provenance.as_str().into());
            row.extend(coord.iter().map(f64::to_string));
            t.rows.push(row);
        };
        for (i, e) in train.iter().enumerate() {
            push(e, emb.point(i));
        }
        for (e, c) in others.iter().zip(placed) {
            push(e, c);
        }
        t.write(&self.path(EMBEDDING))
    }

    pub fn read_embedding(&self) -> Result<EmbeddingTable, PipelineError> {
        let path = self.path(EMBEDDING);
        let t = Table::read(&path)?;
        self.check_hash(&path, t.get_meta("config_hash"))?;
        self.embedding_from(&path, &t)
    }

    fn embedding_from(&self, path: &Path, t: &Table) -> Result<EmbeddingTable, PipelineError> {
        let d = self.network.num_species();
        let n = (1..).take_while(|i| t.column(&format!("x{i}")).is_some()).count();
        if n == 0 {
            return Err(malformed(path, 0, "no coordinate columns"));
        }
        let mut states = Vec::with_capacity(t.rows.len());
        let mut provenance = Vec::with_capacity(t.rows.len());
        let mut coords = DMatrix::zeros(t.rows.len(), n);
        for (i, row) in t.rows.iter().enumerate() {
            states.push(self.parse_state(path, i, row)?);
            provenance.push(parse_provenance(path, i, &row[d])?);
            for j in 0..n {
                coords[(i, j)] = parse_field(path, i, &row[d + 1 + j])?;
            }
        }
        let eigenvalues = match t.get_meta("eigenvalues") {
            Some(s) if !s.is_empty() => s.split(',').map(|v| parse_field(path, 0, v)).collect::<Result<_, _>>()?,
            _ => Vec::new(),
        };
        Ok(EmbeddingTable {
            states,
            provenance,
            coords,
            eigenvalues,
        })
    }

    fn cluster(&self) -> Result<(), PipelineError> {
        let emb = self.read_embedding()?;
        let train: Vec<usize> = (0..emb.states.len())
            .filter(|&i| emb.provenance[i] == Provenance::Simulated)
            .collect();
        let n = emb.coords.ncols();
        let x = DMatrix::from_fn(train.len(), n, |i, j| emb.coords[(train[i], j)]);
        let part = kmeans(&x, self.cfg.cluster.k, self.cfg.cluster.restarts, self.seed("kmeans"))?;
        let mut macros = vec![0; emb.states.len()];
        for (i, &r) in train.iter().enumerate() {
            macros[r] = part.labels[i];
        }
        for (r, m) in macros.iter_mut().enumerate() {
            if emb.provenance[r] != Provenance::Simulated {
                let c: Vec<f64> = emb.coords.row(r).iter().copied().collect();
                *m = part.assign(&c)?;
            }
        }

        let mut header = self.species_header();
        header.push("provenance".into());
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.push("macro".into());
        let mut t = Table::new(header)
            .meta("config_hash", &self.hash)
            .meta("k", part.k())
            .meta("sse", part.sse);
        for j in 0..part.k() {
            let c: Vec<String> = part.centroids.row(j).iter().map(f64::to_string).collect();
            t = t.meta(&format!("centroid{j}"), c.join(","));
        }
        for (r, s) in emb.states.iter().enumerate() {
            let mut row: Vec<String> = s.0.iter().map(u32::to_string).collect();
            row.push(emb.provenance[r].as_str().into());
            row.extend(emb.coords.row(r).iter().map(f64::to_string));
            row.push(macros[r].to_string());
            t.rows.push(row);
        }
        t.write(&self.path(PARTITION))
    }

    pub fn read_partition(&self) -> Result<PartitionTable, PipelineError> {
        let path = self.path(PARTITION);
        let t = Table::read(&path)?;
        self.check_hash(&path, t.get_meta("config_hash"))?;
        let embedding = self.embedding_from(&path, &t)?;
        let col = t.column("macro").ok_or_else(|| malformed(&path, 0, "no macro column"))?;
        let k: usize = parse_field(&path, 0, t.get_meta("k").unwrap_or(""))?;
        let macros = t
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| parse_field::<usize>(&path, i, &r[col]))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(i) = macros.iter().position(|&m| m >= k) {
            return Err(malformed(&path, i + 1, "macro id out of range"));
        }
        let n = embedding.coords.ncols();
        let mut centroids = DMatrix::zeros(k, n);
        for j in 0..k {
            let s = t.get_meta(&format!("centroid{j}")).ok_or_else(|| malformed(&path, 0, "missing centroid"))?;
            for (c, v) in s.split(',').enumerate().take(n) {
                centroids[(j, c)] = parse_field(&path, 0, v)?;
            }
        }
        Ok(PartitionTable {
            embedding,
            macros,
            centroids,
            k,
        })
    }

    fn coarsen(&self) -> Result<(), PipelineError> {
        let part = self.read_partition()?;
        let cmap = part.coarsening_map();
        let starts: Vec<&SystemState> = part
            .embedding
            .states
            .iter()
            .zip(&part.embedding.provenance)
            .filter(|(_, p)| **p == Provenance::Simulated)
            .map(|(s, _)| s)
            .collect();
        let cc = &self.cfg.coarsen;
        let seed = self.seed("corpus");
        let corpus = exec::try_map_range(cc.trajectories, |i| {
            let x = simulate_ssa(&self.network, starts[i % starts.len()], cc.horizon, seed.child(i as u64))?;
            let m = coarsen_trajectory(&x, &cmap)?;
            Ok::<_, PipelineError>((m, x.num_jumps()))
        })?;
        let (mean_fine, sd_fine) = mean_sd(corpus.iter().map(|c| c.1 as f64));
        let (mean_macro, sd_macro) = mean_sd(corpus.iter().map(|c| c.0.num_transitions() as f64));
        let macros: Vec<_> = corpus.into_iter().map(|c| c.0).collect();
        let dynamics = build_dynamics(&macros, part.k, cc.bin_width)?;
        let artifact = CoarseArtifact {
            config_hash: self.hash.clone(),
            corpus: CorpusStats {
                trajectories: cc.trajectories,
                horizon: cc.horizon,
                mean_fine_events: mean_fine,
                sd_fine_events: sd_fine,
                mean_macro_transitions: mean_macro,
                sd_macro_transitions: sd_macro,
            },
            dynamics,
        };
        write_json(&self.path(COARSE_DYNAMICS), &artifact)
    }

    pub fn read_coarse(&self) -> Result<CoarseArtifact, PipelineError> {
        let path = self.path(COARSE_DYNAMICS);
        let a: CoarseArtifact = read_json(&path)?;
        self.check_hash(&path, Some(&a.config_hash))?;
        Ok(a)
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let part = self.read_partition()?;
        let coarse = self.read_coarse()?;
        let cmap = part.coarsening_map();
        let v = &self.cfg.validate;
        let init = SystemState(v.init.clone());
        let init_macro = cmap.lookup(&init)?;
        let fine_seed = self.seed("validate-fine");
        let fine = exec::try_map_range(v.runs, |i| {
            let x = simulate_ssa(&self.network, &init, v.t_end, fine_seed.child(i as u64))?;
            Ok::<_, PipelineError>(coarsen_trajectory(&x, &cmap)?)
        })?;
        let sampler = coarse.dynamics.sampler();
        let coarse_seed = self.seed("validate-coarse");
        let coarse_runs = exec::try_map_range(v.runs, |i| sampler.simulate(init_macro, v.t_end, coarse_seed.child(i as u64)))?;
        let report = validate(&fine, &coarse_runs, part.k, &v.grid(), v.steady_from)?;
        self.validation_table(&report, init_macro).write(&self.path(VALIDATION))
    }

    fn validation_table(&self, r: &ValidationReport, init_macro: usize) -> Table {
        let k = r.fine_hist.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..k).map(|j| format!("fine{j}")));
        header.extend((0..k).map(|j| format!("coarse{j}")));
        header.extend(["distance".into(), "bound".into(), "below".into()]);
        let mut t = Table::new(header)
            .meta("config_hash", &self.hash)
            .meta("init_macro", init_macro)
            .meta("steady_from", r.steady_from)
            .meta("steady_fraction_below", r.steady_fraction_below());
        for i in 0..r.times.len() {
            let mut row = vec![r.times[i].to_string()];
            row.extend(r.fine_hist[i].iter().map(f64::to_string));
            row.extend(r.coarse_hist[i].iter().map(f64::to_string));
            row.push(r.distances[i].to_string());
            row.push(r.bound.to_string());
            row.push(u8::from(r.below_bound(i)).to_string());
            t.rows.push(row);
        }
        t
    }

    /// Renders `partition.svg` and `validation.svg` from existing artifacts;
    /// returns the files written.
    pub fn write_plots(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let mut out = Vec::new();
        let part = self.read_partition()?;
        let c = &part.embedding.coords;
        let pts: Vec<(f64, f64)> = (0..c.nrows())
            .map(|i| (c[(i, 0)], if c.ncols() > 1 { c[(i, 1)] } else { 0.0 }))
            .collect();
        let path = self.path("partition.svg");
        let svg = crate::plot::scatter_svg("MDS embedding by macro-state", &pts, &part.macros);
        fs::write(&path, svg).map_err(|e| PipelineError::io(&path, e))?;
        out.push(path);
        if self.path(VALIDATION).exists() {
            let r = self.read_validation()?;
            let path = self.path("validation.svg");
            let svg = crate::plot::lines_svg(
                "L1 distance between fine and coarse macro-state histograms",
                &r.times,
                &[("distance", r.distances.clone())],
                Some(r.bound),
            );
            fs::write(&path, svg).map_err(|e| PipelineError::io(&path, e))?;
            out.push(path);
        }
        Ok(out)
    }

    pub fn read_validation(&self) -> Result<ValidationReport, PipelineError> {
        let path = self.path(VALIDATION);
        let t = Table::read(&path)?;
        self.check_hash(&path, t.get_meta("config_hash"))?;
        read_validation_table(&path, &t)
    }
}

pub(crate) fn read_validation_table(path: &Path, t: &Table) -> Result<ValidationReport, PipelineError> {
    let k = t.header.iter().filter(|h| h.starts_with("fine")).count();
    let dcol = t.column("distance").ok_or_else(|| malformed(path, 0, "no distance column"))?;
    let f = |i: usize, s: &str| parse_field::<f64>(path, i, s);
    let mut r = ValidationReport {
        times: Vec::new(),
        fine_hist: Vec::new(),
        coarse_hist: Vec::new(),
        distances: Vec::new(),
        bound: 0.0,
        steady_from: f(0, t.get_meta("steady_from").unwrap_or(""))?,
    };
    for (i, row) in t.rows.iter().enumerate() {
        r.times.push(f(i, &row[0])?);
        r.fine_hist.push(row[1..=k].iter().map(|s| f(i, s)).collect::<Result<_, _>>()?);
        r.coarse_hist.push(row[k + 1..=2 * k].iter().map(|s| f(i, s)).collect::<Result<_, _>>()?);
        r.distances.push(f(i, &row[dcol])?);
        r.bound = f(i, &row[dcol + 1])?;
    }
    Ok(r)
}

fn parse_provenance(path: &Path, row: usize, s: &str) -> Result<Provenance, PipelineError> {
    match s {
        "simulated" => Ok(Provenance::Simulated),
        "imputed" => Ok(Provenance::Imputed),
        _ => Err(malformed(path, row, &format!("unknown provenance '{s}'"))),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    s.push('\n');
    fs::write(path, s).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let s = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}
