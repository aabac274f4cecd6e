//! Model-selection prior over the correlation parameters: a mixture of
//! gammas on each range parameter, a logistic probability of switching a
//! dimension to its linear limit, and an exponential prior on the nugget.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist;
use crate::error::{GpError, Result};
use crate::kernel::CorrelationState;

/// One gamma component in shape-rate form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaComponent {
    pub weight: f64,
    pub shape: f64,
    pub rate: f64,
}

impl GammaComponent {
    fn ln_pdf(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() + (self.shape - 1.0) * x.ln() - self.rate * x - ln_gamma(self.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmPriorParams {
    /// Steepness of the logistic jump probability.
    pub gamma: f64,
    /// Minimum probability of linearizing a dimension.
    pub theta1: f64,
    /// Maximum probability of linearizing a dimension, strictly below one.
    pub theta2: f64,
    pub d_mix: Vec<GammaComponent>,
    /// Rate of the exponential nugget prior.
    pub g_rate: f64,
}

impl Default for LlmPriorParams {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            theta1: 0.2,
            theta2: 0.95,
            d_mix: vec![
                GammaComponent { weight: 0.5, shape: 1.0, rate: 20.0 },
                GammaComponent { weight: 0.5, shape: 10.0, rate: 10.0 },
            ],
            g_rate: 10.0,
        }
    }
}

impl LlmPriorParams {
    pub fn with_jump(gamma: f64, theta1: f64, theta2: f64) -> Result<Self> {
        let pp = Self { gamma, theta1, theta2, ..Self::default() };
        pp.validate()?;
        Ok(pp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(GpError::InvalidParameter(format!("gamma {} must be positive", self.gamma)));
        }
        if !(0.0 <= self.theta1 && self.theta1 <= self.theta2 && self.theta2 < 1.0) {
            return Err(GpError::InvalidParameter(format!(
                "need 0 <= theta1 <= theta2 < 1, got ({}, {})",
                self.theta1, self.theta2
            )));
        }
        if self.d_mix.is_empty() || self.d_mix.iter().any(|c| !(c.weight > 0.0 && c.shape > 0.0 && c.rate > 0.0)) {
            return Err(GpError::InvalidParameter("gamma mixture components must be positive".into()));
        }
        let total: f64 = self.d_mix.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GpError::InvalidParameter(format!("mixture weights sum to {total}, not 1")));
        }
        if !(self.g_rate > 0.0) {
            return Err(GpError::InvalidParameter(format!("g_rate {} must be positive", self.g_rate)));
        }
        Ok(())
    }

    /// Log density of the gamma mixture at `d`.
    pub fn log_prior_d(&self, d: f64) -> Result<f64> {
        if !(d > 0.0) {
            return Err(GpError::InvalidParameter(format!("range parameter {d} must be positive")));
        }
        let terms: Vec<f64> = self.d_mix.iter().map(|c| c.weight.ln() + c.ln_pdf(d)).collect();
        Ok(log_sum_exp(&terms))
    }

    /// `θ₁ + (θ₂-θ₁) / (1 + exp{-γ(d-0.5)})`.
    pub fn prob_b0_given_d(&self, d: f64) -> f64 {
        self.theta1 + (self.theta2 - self.theta1) / (1.0 + (-self.gamma * (d - 0.5)).exp())
    }

    pub fn log_prob_b_given_d(&self, b: bool, d: f64) -> f64 {
        let p0 = self.prob_b0_given_d(d);
        if b {
            (1.0 - p0).ln()
        } else {
            p0.ln()
        }
    }

    /// Log prior probability that every dimension is linearized.
    pub fn log_prior_linear_model(&self, d: &[f64]) -> f64 {
        d.iter().map(|&di| self.prob_b0_given_d(di).ln()).sum()
    }

    /// Independent draws with `P(b_i = false) = prob_b0_given_d(d_i)`.
    pub fn sample_booleans<R: Rng + ?Sized>(&self, d: &[f64], rng: &mut R) -> Vec<bool> {
        d.iter().map(|&di| rng.random::<f64>() >= self.prob_b0_given_d(di)).collect()
    }

    pub fn log_prior_g(&self, g: f64) -> Result<f64> {
        if !(g > 0.0) {
            return Err(GpError::InvalidParameter(format!("nugget {g} must be positive")));
        }
        Ok(self.g_rate.ln() - self.g_rate * g)
    }

    pub fn sample_d<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.d_mix.last().expect("non-empty mixture");
        for c in &self.d_mix {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        dist::gamma(rng, chosen.shape, chosen.rate)
    }

    pub fn sample_g<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        dist::gamma(rng, 1.0, self.g_rate)
    }

    /// Joint log prior of a correlation state. When `booleans_free` is false
    /// the booleans are fixed by the model and contribute nothing.
    pub fn log_prior_corr(&self, cs: &CorrelationState, booleans_free: bool) -> f64 {
        let mut lp = match self.log_prior_g(cs.g) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        for (&d, &b) in cs.d.iter().zip(&cs.b) {
            lp += match self.log_prior_d(d) {
                Ok(v) => v,
                Err(_) => return f64::NEG_INFINITY,
            };
            if booleans_free {
                lp += self.log_prob_b_given_d(b, d);
            }
        }
        lp
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}
