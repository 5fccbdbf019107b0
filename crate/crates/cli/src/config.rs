//! Run configuration. Every command reads the same JSON schema; unknown keys
//! are rejected at every level.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gi_helmholtz::greens::SelfTermMode;
use gi_helmholtz::grid::{taper_perturbation, Grid2D, Medium, SourceSpec, SyntheticModel};
use gi_helmholtz::io::{read_velocity, velocity_sidecar};
use gi_helmholtz::operator::DEFAULT_DENSE_CAP;
use gi_helmholtz::training::TrainConfig;
use gi_helmholtz::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub medium: MediumConfig,
    pub source: SourceConfig,
    #[serde(default)]
    pub self_term: SelfTermMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taper: Option<TaperConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MediumConfig {
    Synthetic {
        grid: Grid2D,
        v0: f64,
        frequency_hz: f64,
        model: SyntheticModel,
    },
    /// Raw f32 velocity with a `<path>.json` sidecar.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub z: f64,
    pub x: f64,
    /// `[re, im]`
    #[serde(default = "unit_amplitude")]
    pub amplitude: [f64; 2],
}

fn unit_amplitude() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaperConfig {
    pub pad_cells: usize,
    pub taper_cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Direct,
    Born,
    Landweber,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: SolverMethod,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Landweber step; `1/σ̂²max` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default = "default_power_iters")]
    pub power_iters: usize,
    #[serde(default = "default_dense_cap")]
    pub dense_cap: usize,
}

fn default_max_iters() -> usize {
    500
}

fn default_tol() -> f64 {
    1e-8
}

fn default_power_iters() -> usize {
    100
}

fn default_dense_cap() -> usize {
    DEFAULT_DENSE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// Dense direct solve on the training grid.
    Direct {
        #[serde(default = "default_dense_cap")]
        dense_cap: usize,
    },
    /// A field file on the training grid.
    File { path: PathBuf },
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative input paths relative to `base` so the snapshot in the
    /// manifest stands alone.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                let joined = base.join(&*p);
                *p = std::path::absolute(&joined).unwrap_or(joined);
            }
        };
        if let MediumConfig::File { path } = &mut self.medium {
            fix(path);
        }
        if let Some(ReferenceConfig::File { path }) = &mut self.reference {
            fix(path);
        }
    }

    /// Files whose contents feed the run.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        if let MediumConfig::File { path } = &self.medium {
            out.push(path.clone());
            out.push(velocity_sidecar(path));
        }
        if let Some(ReferenceConfig::File { path }) = &self.reference {
            out.push(path.clone());
        }
        out
    }

    /// The medium after optional padding and tapering.
    pub fn build_medium(&self) -> anyhow::Result<Medium> {
        let medium = match &self.medium {
            MediumConfig::Synthetic {
                grid,
                v0,
                frequency_hz,
                model,
            } => {
                if !(*frequency_hz > 0.0) {
                    bail!("medium.frequency_hz must be positive");
                }
                model.build(*grid, *v0, 2.0 * PI * frequency_hz)?
            }
            MediumConfig::File { path } => {
                read_velocity(path).with_context(|| format!("cannot load velocity model {}", path.display()))?
            }
        };
        Ok(match self.taper {
            Some(t) => taper_perturbation(&medium, t.pad_cells, t.taper_cells)?,
            None => medium,
        })
    }

    pub fn build_source(&self, grid: &Grid2D) -> anyhow::Result<SourceSpec> {
        let s = self.source;
        SourceSpec::new(s.z, s.x, Complex64::new(s.amplitude[0], s.amplitude[1]), grid).context("invalid source")
    }

    pub fn solver(&self) -> anyhow::Result<SolverConfig> {
        self.solver.context("config has no `solver` section")
    }

    pub fn train(&self) -> anyhow::Result<TrainConfig> {
        self.train.clone().context("config has no `train` section")
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, epochs: Option<usize>) {
        if let Some(t) = &mut self.train {
            if let Some(s) = seed {
                t.seed = s;
            }
            if let Some(e) = epochs {
                t.epochs = e;
            }
        }
    }
}
