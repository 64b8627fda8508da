//! TOML run configuration. Every block is optional and unknown keys are
//! rejected before anything is computed.

use std::path::{Path, PathBuf};

use dckernel::estimator::{ConvolutionQuadrature, ExpTerm};
use dckernel::{KernelSpec, QuadratureConfig, TimeGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub convolution: ConvolutionQuadrature,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub expand: ExpandConfig,
    #[serde(default)]
    pub norm: NormConfig,
    #[serde(default)]
    pub tridiag: TridiagConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub io: IoConfig,
}

fn default_kernel() -> KernelSpec {
    KernelSpec::dc(0.2, 0.3).expect("valid default")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kernel: default_kernel(),
            quadrature: QuadratureConfig::default(),
            convolution: ConvolutionQuadrature::default(),
            estimation: EstimationConfig::default(),
            sampling: SamplingConfig::default(),
            expand: ExpandConfig::default(),
            norm: NormConfig::default(),
            tridiag: TridiagConfig::default(),
            verify: VerifyConfig::default(),
            io: IoConfig::default(),
        }
    }
}

/// Evenly spaced points unless `points` lists them explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub points: Option<Vec<f64>>,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn linspace(start: f64, stop: f64, count: usize) -> Self {
        Self {
            points: None,
            start,
            stop,
            count,
        }
    }

    pub fn resolve(&self) -> Vec<f64> {
        match &self.points {
            Some(p) => p.clone(),
            None => TimeGrid::linspace(self.start, self.stop, self.count),
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::linspace(0.0, 10.0, 101)
    }
}

/// Input declaration for `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    Impulse,
    Step,
    ExpSum { terms: Vec<ExpTerm> },
    /// Zero-order hold of the `u` column of the data file.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub input: InputConfig,
    pub noise_variance: f64,
    pub gamma: Option<f64>,
    /// Candidates for the held-out search; overrides `gamma` when present.
    pub gamma_grid: Option<Vec<f64>>,
    /// Times at which the estimate is written out.
    pub eval: GridSpec,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::Impulse,
            noise_variance: 0.0,
            gamma: None,
            gamma_grid: None,
            eval: GridSpec::linspace(0.0, 10.0, 201),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Anticausal white-noise sum for DC/TC kernels.
    Anticausal,
    /// Backward Markov recursion for DC/TC kernels.
    Markov,
    /// Generalized-spline process on a unit grid.
    Genspline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub seed: u64,
    pub count: usize,
    pub construction: Construction,
    pub grid: GridSpec,
    /// Exponent for the generalized-spline construction; defaults to the
    /// kernel's own ρ.
    pub rho: Option<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            count: 1000,
            construction: Construction::Markov,
            grid: GridSpec::linspace(0.0, 5.0, 6),
            rho: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpandConfig {
    pub truncation: usize,
    /// Points per axis of the evaluation grid.
    pub points: usize,
    /// Right end of the grid for half-line kernels.
    pub horizon: f64,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        Self {
            truncation: 1000,
            points: 100,
            horizon: 10.0,
        }
    }
}

/// Function whose RKHS norm `norm` computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionConfig {
    Exponential { rate: f64 },
    ExpSum { terms: Vec<ExpTerm> },
    KernelSection { t0: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormConfig {
    pub function: FunctionConfig,
    /// Terms of the eigen-series; 0 skips the series.
    pub series_truncation: usize,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            function: FunctionConfig::Exponential { rate: 1.0 },
            series_truncation: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TridiagConfig {
    /// Seed for sorted uniform draws on [0, 1) when `points` is absent.
    pub seed: u64,
    pub size: usize,
    pub points: Option<Vec<f64>>,
    pub heatmap: bool,
}

impl Default for TridiagConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            size: 10,
            points: None,
            heatmap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub mc_samples: usize,
    pub random_grids: usize,
    pub tridiag_draws: usize,
    /// Seed of the sorted-uniform grid used for the ten-point DC inverse.
    pub example_seed: u64,
    pub series_truncation: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            mc_samples: 100_000,
            random_grids: 20,
            tridiag_draws: 50,
            example_seed: 1,
            series_truncation: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Input(msg) => CliError::Input(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Input(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not fit the schema itself.
    pub fn validate(&self) -> CliResult<()> {
        self.quadrature.validate()?;
        self.convolution.validate()?;
        let est = &self.estimation;
        if !(est.noise_variance >= 0.0 && est.noise_variance.is_finite()) {
            return Err(CliError::Input(format!(
                "estimation.noise_variance must be non-negative, got {}",
                est.noise_variance
            )));
        }
        if let Some(g) = est.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(CliError::Input(format!("estimation.gamma must be positive, got {g}")));
            }
        }
        if let Some(grid) = &est.gamma_grid {
            if grid.is_empty() || grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
                return Err(CliError::Input(
                    "estimation.gamma_grid must be a non-empty list of positive values".into(),
                ));
            }
        }
        if self.expand.truncation == 0 || self.expand.points == 0 {
            return Err(CliError::Input("expand.truncation and expand.points must be positive".into()));
        }
        if !(self.expand.horizon > 0.0 && self.expand.horizon.is_finite()) {
            return Err(CliError::Input("expand.horizon must be positive".into()));
        }
        if self.verify.mc_samples < 2 {
            return Err(CliError::Input("verify.mc_samples must be at least 2".into()));
        }
        Ok(())
    }

    /// Replaces every seed in the configuration.
    pub fn override_seed(&mut self, seed: u64) {
        self.sampling.seed = seed;
        self.tridiag.seed = seed;
        self.verify.seed = seed;
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configuration serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `(α, β)` of a TC/DC kernel, or an input error naming the command.
    pub fn decay_rates(&self, command: &str) -> CliResult<(f64, f64)> {
        self.kernel.decay_rates().ok_or_else(|| {
            CliError::Input(format!(
                "{command} needs a tc or dc kernel, the configuration has {}",
                self.kernel.name()
            ))
        })
    }
}
