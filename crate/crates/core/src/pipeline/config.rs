use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::gp::KernelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulaSpec {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    pub fraction: f64,
    pub trajectories: u64,
    /// Defaults to the longest formula window.
    pub horizon: Option<f64>,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            fraction: 0.1,
            trajectories: 1000,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dimension: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { dimension: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub restarts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 10,
            restarts: crate::cluster::DEFAULT_RESTARTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarsenConfig {
    pub bin_width: f64,
    /// Fine trajectories behind the empirical dynamics, started round-robin
    /// from the simulated states.
    pub trajectories: usize,
    pub horizon: f64,
}

impl Default for CoarsenConfig {
    fn default() -> Self {
        CoarsenConfig {
            bin_width: 1.0,
            trajectories: 5000,
            horizon: 150.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub runs: usize,
    /// Fine initial state; the coarse runs start from its macro-state.
    pub init: Vec<u32>,
    pub t_start: f64,
    pub t_end: f64,
    pub t_step: f64,
    pub steady_from: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            runs: 10_000,
            init: Vec::new(),
            t_start: 0.0,
            t_end: 150.0,
            t_step: 1.0,
            steady_from: 60.0,
        }
    }
}

impl ValidateConfig {
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.t_end - self.t_start) / self.t_step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.t_start + i as f64 * self.t_step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: PathBuf,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Extra names usable in formulae; `N` is always the population size.
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    pub formulas: Vec<FormulaSpec>,
    #[serde(default)]
    pub smc: SmcConfig,
    #[serde(default)]
    pub gp: KernelConfig,
    #[serde(default)]
    pub embed: EmbedConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub coarsen: CoarsenConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
}

fn default_run_dir() -> PathBuf {
    PathBuf::from("run")
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl RunConfig {
    /// Parses `text`, resolving relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<RunConfig, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        if cfg.model.is_relative() {
            cfg.model = base.join(&cfg.model);
        }
        if cfg.run_dir.is_relative() {
            cfg.run_dir = base.join(&cfg.run_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        if !self.model.exists() {
            return Err(bad(format!("model file {} does not exist", self.model.display())));
        }
        if self.formulas.is_empty() {
            return Err(bad("at least one formula is required"));
        }
        let s = &self.smc;
        if !(s.fraction > 0.0 && s.fraction <= 1.0) {
            return Err(bad(format!("smc.fraction must lie in (0, 1], got {}", s.fraction)));
        }
        if s.trajectories == 0 {
            return Err(bad("smc.trajectories must be at least 1"));
        }
        if self.embed.dimension == 0 {
            return Err(bad("embed.dimension must be at least 1"));
        }
        if self.cluster.k == 0 || self.cluster.restarts == 0 {
            return Err(bad("cluster.k and cluster.restarts must be at least 1"));
        }
        let c = &self.coarsen;
        if !(c.bin_width > 0.0 && c.horizon > 0.0) || c.trajectories == 0 {
            return Err(bad("coarsen.bin_width, coarsen.horizon and coarsen.trajectories must be positive"));
        }
        let v = &self.validate;
        if v.runs == 0 || v.init.is_empty() {
            return Err(bad("validate.runs must be positive and validate.init must be given"));
        }
        if !(v.t_step > 0.0 && v.t_start >= 0.0 && v.t_end > v.t_start) {
            return Err(bad("validate time grid must satisfy 0 <= t_start < t_end and t_step > 0"));
        }
        Ok(())
    }

    /// SHA-256 over the settings and the model text; paths do not enter,
    /// so the same run in two directories hashes equally.
    pub fn hash(&self) -> Result<String, PipelineError> {
        let model = fs::read_to_string(&self.model).map_err(|e| PipelineError::io(&self.model, e))?;
        let mut canon = self.clone();
        canon.model = PathBuf::new();
        canon.run_dir = PathBuf::new();
        let text = toml::to_string(&canon).map_err(|e| bad(e.to_string()))?;
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.update([0u8]);
        h.update(model.as_bytes());
        Ok(format!("{:x}", h.finalize()))
    }
}

pub(crate) fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"
model = "m.model"
[[formulas]]
name = "a"
text = "F[0,1] (X > 0)"
[validate]
init = [1, 0]
"#;

    #[test]
    fn defaults_and_paths() {
        let cfg = RunConfig::from_toml(MIN, Path::new("/tmp/x")).unwrap();
        assert_eq!(cfg.model, PathBuf::from("/tmp/x/m.model"));
        assert_eq!(cfg.run_dir, PathBuf::from("/tmp/x/run"));
        assert_eq!(cfg.smc.fraction, 0.1);
        assert_eq!(cfg.smc.trajectories, 1000);
        assert_eq!(cfg.cluster.k, 10);
        assert_eq!(cfg.embed.dimension, 2);
        assert_eq!(cfg.validate.grid().len(), 151);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MIN}\n[smc]\nfractoin = 0.2\n");
        assert!(RunConfig::from_toml(&text, Path::new(".")).is_err());
    }
}
