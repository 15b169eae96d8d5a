//! Run configuration: JSON on disk, validated on load.

use crate::error::{Result, SolverError};
use crate::nonlinearity::NonlinearityConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub r_max: f64,
    pub n_r: usize,
    pub dy: f64,
    /// initial y window for the minimizer (b > 0)
    pub y_window: (f64, f64),
    /// initial y window for b = 0 (asymmetric, long decay side); falls back
    /// to y_window when absent
    #[serde(default)]
    pub y_window_zero: Option<(f64, f64)>,
    /// radial resolution of the one-dimension-up cross-check solve
    #[serde(default = "default_crosscheck_n_r")]
    pub crosscheck_n_r: usize,
}

fn default_crosscheck_n_r() -> usize {
    2000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimizerConfig {
    pub max_iters: usize,
    pub tol_grad: f64,
    #[serde(default)]
    pub initial_step: Option<f64>,
    #[serde(default = "default_decay_target")]
    pub decay_target: f64,
}

fn default_decay_target() -> f64 {
    1e-4
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        MinimizerConfig {
            max_iters: 50_000,
            tol_grad: 1e-5,
            initial_step: None,
            decay_target: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub nonlinearity: NonlinearityConfig,
    pub dim: usize,
    pub grid: GridConfig,
    /// energy levels as fractions of the computed mountain-pass level c
    pub b_list: Vec<f64>,
    #[serde(default)]
    pub minimizer: MinimizerConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// worker pool width for the b sweep; 1 when absent
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| SolverError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(SolverError::Config("dim must be >= 1".into()));
        }
        if !(self.grid.r_max > 0.0) || self.grid.n_r < 8 || !(self.grid.dy > 0.0) {
            return Err(SolverError::Config(format!(
                "grid parameters must be positive: r_max={} n_r={} dy={}",
                self.grid.r_max, self.grid.n_r, self.grid.dy
            )));
        }
        let (a, b) = self.grid.y_window;
        if !(b > a) {
            return Err(SolverError::Config(format!("empty y_window: [{a}, {b}]")));
        }
        for &frac in &self.b_list {
            if !(0.0..1.0).contains(&frac) {
                return Err(SolverError::Config(format!(
                    "b fraction {frac} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Config used by the end-to-end examples: N = 1 cubic nonlinearity.
    pub fn example(output_dir: PathBuf) -> Self {
        RunConfig {
            nonlinearity: NonlinearityConfig::PurePower { p: 3.0 },
            dim: 1,
            grid: GridConfig {
                r_max: 12.0,
                n_r: 300,
                dy: 0.04,
                y_window: (0.0, 8.0),
                y_window_zero: Some((-14.0, 4.0)),
                crosscheck_n_r: 2000,
            },
            b_list: vec![0.0, 0.25, 0.5, 0.75],
            minimizer: MinimizerConfig::default(),
            output_dir,
            seed: 0x5eed,
            jobs: None,
        }
    }
}
