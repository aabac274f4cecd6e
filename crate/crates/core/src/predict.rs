//! Posterior predictive moments. A state with any active dimension uses the
//! dense kriging equations; an all-linear state uses the m×m linear-model
//! form. Both include the nugget in the predictive variance so they agree
//! exactly when K = (1+g)·I.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{basis, Observations};
use crate::error::{GpError, Result};
use crate::kernel::{build_cov, cross_correlation, CorrelationState, CovMatrix};
use crate::linalg::quad_form;
use crate::model::{GPState, LeafPosterior, SharedState};
use crate::sampler::Trace;

/// Kriging predictor for one posterior sample. C = K + τ²FWFᵀ is factored
/// once and reused for every query.
#[derive(Debug, Clone)]
pub struct GpPredictor {
    x: DMatrix<f64>,
    corr: CorrelationState,
    beta_tilde: DVector<f64>,
    /// K⁻¹(y − Fβ̃).
    weights: DVector<f64>,
    /// τ²FW.
    tau_fw: DMatrix<f64>,
    tau_w: DMatrix<f64>,
    c: CovMatrix,
    sigma2: f64,
}

impl GpPredictor {
    pub fn new(obs: &Observations, state: &GPState, shared: &SharedState, cm: &CovMatrix) -> Result<Self> {
        let post = LeafPosterior::new(obs, cm, shared, state.tau2)?;
        let resid = &obs.y - &obs.f * &post.beta_tilde;
        let weights = cm.solve_vec(&resid);
        let tau_w = shared.w() * state.tau2;
        let tau_fw = &obs.f * &tau_w;
        let c = cm.matrix() + &tau_fw * obs.f.transpose();
        let c = CovMatrix::from_dense(crate::linalg::symmetrize(&c), state.corr.g)?;
        Ok(Self {
            x: obs.x.clone(),
            corr: state.corr.clone(),
            beta_tilde: post.beta_tilde,
            weights,
            tau_fw,
            tau_w,
            c,
            sigma2: state.sigma2,
        })
    }

    pub fn predict(&self, query: &[f64]) -> (f64, f64) {
        let f = basis(query);
        let k = cross_correlation(query, &self.x, &self.corr);
        let mean = f.dot(&self.beta_tilde) + k.dot(&self.weights);
        let q = &k + &self.tau_fw * &f;
        let kappa = 1.0 + self.corr.g + quad_form(&self.tau_w, &f);
        let reduction = q.dot(&self.c.solve_vec(&q));
        (mean, (self.sigma2 * (kappa - reduction)).max(0.0))
    }
}

/// Linear-model predictor: only the m×m matrix V_β̃ is inverted.
#[derive(Debug, Clone)]
pub struct LlmPredictor {
    beta_tilde: DVector<f64>,
    v_beta: DMatrix<f64>,
    g: f64,
    sigma2: f64,
}

impl LlmPredictor {
    pub fn new(obs: &Observations, state: &GPState, shared: &SharedState) -> Result<Self> {
        if !state.corr.is_llm() {
            return Err(GpError::InvalidParameter("linear-model prediction needs every boolean off".into()));
        }
        let cm = CovMatrix::llm(obs.n(), state.corr.g);
        let post = LeafPosterior::new(obs, &cm, shared, state.tau2)?;
        Ok(Self { beta_tilde: post.beta_tilde, v_beta: post.v_beta, g: state.corr.g, sigma2: state.sigma2 })
    }

    pub fn predict(&self, query: &[f64]) -> (f64, f64) {
        let f = basis(query);
        let mean = f.dot(&self.beta_tilde);
        (mean, self.sigma2 * (1.0 + self.g + quad_form(&self.v_beta, &f)))
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Gp(GpPredictor),
    Llm(LlmPredictor),
}

impl Predictor {
    /// Chooses the path from the state's booleans. `cm` is reused when given,
    /// otherwise built from the state.
    pub fn for_state(
        obs: &Observations,
        state: &GPState,
        shared: &SharedState,
        cm: Option<&CovMatrix>,
    ) -> Result<Self> {
        if state.corr.is_llm() {
            return Ok(Self::Llm(LlmPredictor::new(obs, state, shared)?));
        }
        let built;
        let cm = match cm {
            Some(cm) => cm,
            None => {
                built = build_cov(&obs.x, &state.corr)?;
                &built
            }
        };
        Ok(Self::Gp(GpPredictor::new(obs, state, shared, cm)?))
    }

    pub fn is_llm(&self) -> bool {
        matches!(self, Self::Llm(_))
    }

    pub fn predict(&self, query: &[f64]) -> (f64, f64) {
        match self {
            Self::Gp(p) => p.predict(query),
            Self::Llm(p) => p.predict(query),
        }
    }
}

/// Dense-path prediction at one query.
pub fn predict_gp(
    query: &[f64],
    state: &GPState,
    shared: &SharedState,
    obs: &Observations,
    cm: &CovMatrix,
) -> Result<(f64, f64)> {
    Ok(GpPredictor::new(obs, state, shared, cm)?.predict(query))
}

/// Linear-model prediction at one query.
pub fn predict_llm(query: &[f64], state: &GPState, shared: &SharedState, obs: &Observations) -> Result<(f64, f64)> {
    Ok(LlmPredictor::new(obs, state, shared)?.predict(query))
}

/// Trace-aggregated predictive distribution at a set of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Fraction of samples that used the linear-model path.
    pub llm_weight: f64,
    /// 5% and 95% quantiles of the normal mixture over samples.
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
}

/// Collects per-sample moments and reduces them by the law of total variance.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    samples: usize,
    llm_weight_sum: f64,
}

impl MomentAccumulator {
    pub fn new(queries: usize) -> Self {
        Self { means: vec![Vec::new(); queries], variances: vec![Vec::new(); queries], samples: 0, llm_weight_sum: 0.0 }
    }

    /// Adds one sample's `(mean, variance)` per query. `llm_weight` is the
    /// fraction of this sample's queries predicted by the linear-model path.
    pub fn push(&mut self, moments: &[(f64, f64)], llm_weight: f64) {
        assert_eq!(moments.len(), self.means.len());
        for (q, &(m, v)) in moments.iter().enumerate() {
            self.means[q].push(m);
            self.variances[q].push(v.max(0.0));
        }
        self.samples += 1;
        self.llm_weight_sum += llm_weight;
    }

    pub fn finish(&self) -> Result<PredictiveMoments> {
        if self.samples == 0 {
            return Err(GpError::EmptyTrace);
        }
        let s = self.samples as f64;
        let mut mean = Vec::with_capacity(self.means.len());
        let mut variance = Vec::with_capacity(self.means.len());
        let mut q05 = Vec::with_capacity(self.means.len());
        let mut q95 = Vec::with_capacity(self.means.len());
        for (ms, vs) in self.means.iter().zip(&self.variances) {
            let mu = ms.iter().sum::<f64>() / s;
            let second = ms.iter().zip(vs).map(|(m, v)| v + m * m).sum::<f64>() / s;
            let sds: Vec<f64> = vs.iter().map(|v| v.sqrt()).collect();
            mean.push(mu);
            variance.push((second - mu * mu).max(0.0));
            q05.push(mixture_quantile(ms, &sds, 0.05));
            q95.push(mixture_quantile(ms, &sds, 0.95));
        }
        Ok(PredictiveMoments {
            mean,
            variance,
            llm_weight: self.llm_weight_sum / s,
            q05,
            q95,
        })
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Quantile of an equal-weight normal mixture by bisection on its CDF.
pub fn mixture_quantile(means: &[f64], sds: &[f64], p: f64) -> f64 {
    let cdf = |y: f64| {
        means
            .iter()
            .zip(sds)
            .map(|(&m, &s)| {
                if s > 0.0 {
                    normal_cdf((y - m) / s)
                } else if y >= m {
                    1.0
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / means.len() as f64
    };
    let lo0 = means.iter().zip(sds).map(|(m, s)| m - 10.0 * s).fold(f64::INFINITY, f64::min);
    let hi0 = means.iter().zip(sds).map(|(m, s)| m + 10.0 * s).fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Per-sample moments at every row of `queries`.
pub fn sample_moments(predictor: &Predictor, queries: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let mut row = vec![0.0; queries.ncols()];
    (0..queries.nrows())
        .map(|r| {
            for (c, v) in row.iter_mut().enumerate() {
                *v = queries[(r, c)];
            }
            predictor.predict(&row)
        })
        .collect()
}

/// Averages predictions over a stationary trace. β̃ is recomputed for each
/// sample from that sample's K, τ², β₀ and W.
pub fn aggregate_predictions(trace: &Trace, obs: &Observations, queries: &DMatrix<f64>) -> Result<PredictiveMoments> {
    if trace.records.is_empty() {
        return Err(GpError::EmptyTrace);
    }
    if queries.ncols() != obs.m_x() {
        return Err(GpError::DimensionMismatch { expected: obs.m_x(), found: queries.ncols() });
    }
    let mut acc = MomentAccumulator::new(queries.nrows());
    for rec in &trace.records {
        let predictor = Predictor::for_state(obs, &rec.state, &rec.shared, None)?;
        acc.push(&sample_moments(&predictor, queries), if predictor.is_llm() { 1.0 } else { 0.0 });
    }
    acc.finish()
}
