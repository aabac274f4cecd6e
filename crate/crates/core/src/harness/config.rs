//! Experiment configuration, read from TOML. Unknown keys are rejected at
//! every level.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::{ResponseColumn, ResponseTransform};
use crate::error::{GpError, Result};
use crate::model::HyperParams;
use crate::prior::LlmPriorParams;
use crate::sampler::{BooleanMode, McmcConfig};
use crate::treed::TreePrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Stationary GP with every boolean fixed on.
    Gp,
    /// Stationary GP with free booleans.
    Gpllm,
    /// Treed GP with free booleans in every leaf.
    TreedGpllm,
    /// Ordinary least squares.
    Lm,
}

impl ModelKind {
    pub fn boolean_mode(self) -> BooleanMode {
        match self {
            ModelKind::Gp => BooleanMode::ForceGp,
            ModelKind::Lm => BooleanMode::ForceLlm,
            ModelKind::Gpllm | ModelKind::TreedGpllm => BooleanMode::Free,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp" => Ok(ModelKind::Gp),
            "gpllm" => Ok(ModelKind::Gpllm),
            "treed-gpllm" => Ok(ModelKind::TreedGpllm),
            "lm" => Ok(ModelKind::Lm),
            other => Err(GpError::Config(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        response: ResponseColumn,
        #[serde(default)]
        transform: ResponseTransform,
    },
    Linear {
        n: usize,
        #[serde(default = "one")]
        noise_sd: f64,
    },
    Exp2d {
        n: usize,
    },
    Friedman {
        n: usize,
    },
}

fn one() -> f64 {
    1.0
}

/// Where predictions are made, in raw input coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum QuerySpec {
    /// The training inputs.
    #[default]
    Training,
    /// A regular grid over the observed input range.
    Grid { points_per_dim: usize },
    /// Inputs read from a CSV with a header row, one column per input.
    Csv { path: PathBuf },
}

/// Overrides on the default hyperparameters for `m` coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperConfig {
    /// Prior mean of β₀; zeros when absent.
    pub mu: Option<Vec<f64>>,
    /// B = b_scale·I.
    pub b_scale: f64,
    /// V = v_scale·I.
    pub v_scale: f64,
    /// Wishart degrees of freedom; m + 1 when absent.
    pub rho: Option<f64>,
    pub alpha_sigma: f64,
    pub q_sigma: f64,
    pub alpha_tau: f64,
    pub q_tau: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        let h = HyperParams::default_for(1);
        Self {
            mu: None,
            b_scale: h.b[(0, 0)],
            v_scale: h.v[(0, 0)],
            rho: None,
            alpha_sigma: h.alpha_sigma,
            q_sigma: h.q_sigma,
            alpha_tau: h.alpha_tau,
            q_tau: h.q_tau,
        }
    }
}

impl HyperConfig {
    pub fn build(&self, m: usize) -> Result<HyperParams> {
        let mut h = HyperParams::default_for(m);
        if let Some(mu) = &self.mu {
            if mu.len() != m {
                return Err(GpError::DimensionMismatch { expected: m, found: mu.len() });
            }
            h.mu = DVector::from_vec(mu.clone());
        }
        h.b = DMatrix::identity(m, m) * self.b_scale;
        h.v = DMatrix::identity(m, m) * self.v_scale;
        if let Some(rho) = self.rho {
            h.rho = rho;
        }
        h.alpha_sigma = self.alpha_sigma;
        h.q_sigma = self.q_sigma;
        h.alpha_tau = self.alpha_tau;
        h.q_tau = self.q_tau;
        h.validate()?;
        Ok(h)
    }
}

/// Treed-chain settings other than the MCMC lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreedSettings {
    pub tree: TreePrior,
    pub lm_init: bool,
    pub lm_window: usize,
    pub lm_max_iterations: usize,
    pub rj_scale: f64,
    pub rj_boolean_refresh: f64,
}

impl Default for TreedSettings {
    fn default() -> Self {
        let t = crate::treed::TreedConfig::default();
        Self {
            tree: t.tree,
            lm_init: t.lm_init,
            lm_window: t.lm_window,
            lm_max_iterations: t.lm_max_iterations,
            rj_scale: t.rj_scale,
            rj_boolean_refresh: t.rj_boolean_refresh,
        }
    }
}

impl TreedSettings {
    pub fn with_mcmc(&self, mcmc: McmcConfig) -> crate::treed::TreedConfig {
        crate::treed::TreedConfig {
            mcmc,
            tree: self.tree.clone(),
            likelihood: true,
            lm_init: self.lm_init,
            lm_window: self.lm_window,
            lm_max_iterations: self.lm_max_iterations,
            rj_scale: self.rj_scale,
            rj_boolean_refresh: self.rj_boolean_refresh,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory for the report, predictions and traces; nothing is written when absent.
    pub dir: Option<PathBuf>,
    /// Write one line-delimited JSON trace per replicate.
    pub traces: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Worker threads for replicates; the `GPLLM_WORKERS` variable overrides it.
    #[serde(default)]
    pub workers: Option<usize>,
    pub data: DataSource,
    #[serde(default)]
    pub query: QuerySpec,
    #[serde(default)]
    pub hyper: HyperConfig,
    #[serde(default)]
    pub llm_prior: LlmPriorParams,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub treed: TreedSettings,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_replicates() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(model: ModelKind, data: DataSource) -> Self {
        Self {
            model,
            seed: default_seed(),
            replicates: default_replicates(),
            workers: None,
            data,
            query: QuerySpec::default(),
            hyper: HyperConfig::default(),
            llm_prior: LlmPriorParams::default(),
            mcmc: McmcConfig::default(),
            treed: TreedSettings::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| GpError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GpError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(GpError::Config("replicates must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(GpError::Config("workers must be at least 1".into()));
        }
        let n = match &self.data {
            DataSource::Csv { .. } => None,
            DataSource::Linear { n, .. } | DataSource::Exp2d { n } | DataSource::Friedman { n } => Some(*n),
        };
        if n.is_some_and(|n| n < 2) {
            return Err(GpError::Config("simulated data needs n >= 2".into()));
        }
        if let QuerySpec::Grid { points_per_dim } = self.query {
            if points_per_dim < 2 {
                return Err(GpError::Config("grid queries need at least 2 points per dimension".into()));
            }
        }
        self.mcmc.validate()?;
        self.llm_prior.validate()?;
        Ok(())
    }
}
