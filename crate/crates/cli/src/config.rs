//! Run configuration: one strict JSON document per run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use retrocausal::ensemble::HiddenVariableDistribution;
use retrocausal::{Complex64, CollapseThresholds, Couplings, KernelSpec, ModeSpectrum, SolveConfig, TimeGrid};
use serde::{Deserialize, Serialize};

pub const OUT_ENV: &str = "RETROSIM_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub spectrum: ModeSpectrum,
    pub b: f64,
    pub mu: f64,
    pub nu: f64,
    #[serde(default = "one")]
    pub hbar: f64,
    /// `C_jk(t_i)` as `[re, im]` pairs in `(j, k)` row-major order.
    pub initial: Vec<Complex64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_i: f64,
    pub t_f: f64,
    pub n_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub distribution: HiddenVariableDistribution,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_min_converged")]
    pub min_converged_fraction: f64,
    #[serde(default)]
    pub thresholds: CollapseThresholds,
}

fn default_min_converged() -> f64 {
    0.9
}

/// Values to scan; an empty list keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub tau: Vec<f64>,
    pub duration: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub retain_trajectories: bool,
    pub csv: bool,
    pub json: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("retrosim-out"), retain_trajectories: false, csv: true, json: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub kernel: KernelSpec,
    pub grid: GridConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            if e.line() > 0 {
                anyhow::anyhow!("{origin}:{}:{}: {e}", e.line(), e.column())
            } else {
                anyhow::anyhow!("{origin}: {e}")
            }
        })?;
        cfg.validate().with_context(|| format!("{origin}: invalid configuration"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.couplings()?;
        self.time_grid()?;
        self.solve.validate()?;
        let m = self.model.spectrum.n_modes();
        if self.model.initial.len() != m {
            bail!("model.initial has {} coefficients, spectrum has {m} modes", self.model.initial.len());
        }
        let w: f64 = self.model.initial.iter().map(|c| c.norm_sqr()).sum();
        if (w - 1.0).abs() > 1e-10 {
            bail!("model.initial must have unit weight, got {w}");
        }
        if let Some(e) = &self.ensemble {
            e.distribution.validate()?;
            if e.n == 0 {
                bail!("ensemble.n must be >= 1");
            }
            if !(0.0..=1.0).contains(&e.min_converged_fraction) {
                bail!("ensemble.min_converged_fraction must lie in [0, 1]");
            }
            if e.distribution.t_center - e.distribution.t_halfwidth <= 0.0 {
                bail!("ensemble durations must stay positive");
            }
        }
        if let Some(s) = &self.sweep {
            if s.duration.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                bail!("sweep.duration values must be > 0");
            }
            for tau in &s.tau {
                KernelSpec::new(self.kernel.family(), *tau)?;
            }
        }
        Ok(())
    }

    pub fn couplings(&self) -> Result<Couplings> {
        let m = &self.model;
        Ok(Couplings::new(m.b, m.mu, m.nu, m.hbar, self.kernel.clone())?)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.grid.t_i, self.grid.t_f, self.grid.n_nodes)?)
    }

    /// `--out` beats the environment, which beats the config file.
    pub fn resolve_output(&mut self, cli_out: Option<PathBuf>) {
        if let Some(dir) = cli_out {
            self.output.directory = dir;
        } else if let Some(dir) = std::env::var_os(OUT_ENV) {
            self.output.directory = PathBuf::from(dir);
        }
    }
}
