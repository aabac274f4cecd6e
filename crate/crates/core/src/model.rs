//! The hierarchical linear-mean GP: parameter state, conjugate full
//! conditionals and the marginal posterior of the covariance matrix with
//! β and σ² integrated out.
//!
//! Inverse-gamma distributions use the shape/scale form, density
//! ∝ x^(-shape-1) e^(-scale/x); the prior IG(α/2, q/2) therefore has
//! shape α/2 and scale q/2.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::Observations;
use crate::error::{GpError, Result};
use crate::kernel::{CorrelationState, CovMatrix};
use crate::linalg::{quad_form, spd_inverse, SmallSpd};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Known constants of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Prior mean of β₀.
    pub mu: DVector<f64>,
    /// Prior covariance of β₀.
    pub b: DMatrix<f64>,
    /// Wishart location for W⁻¹ ~ W((ρV)⁻¹, ρ).
    pub v: DMatrix<f64>,
    pub rho: f64,
    pub alpha_sigma: f64,
    pub q_sigma: f64,
    pub alpha_tau: f64,
    pub q_tau: f64,
}

impl HyperParams {
    /// Weak defaults for `m` regression coefficients.
    pub fn default_for(m: usize) -> Self {
        Self {
            mu: DVector::zeros(m),
            b: DMatrix::identity(m, m) * 1000.0,
            v: DMatrix::identity(m, m),
            rho: (m + 1) as f64,
            alpha_sigma: 5.0,
            q_sigma: 10.0,
            alpha_tau: 5.0,
            q_tau: 10.0,
        }
    }

    pub fn m(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        for (name, mat) in [("B", &self.b), ("V", &self.v)] {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(GpError::DimensionMismatch { expected: m, found: mat.nrows() });
            }
            if (mat - mat.transpose()).abs().max() > 1e-12 * mat.abs().max().max(1.0) {
                return Err(GpError::InvalidParameter(format!("{name} must be symmetric")));
            }
        }
        SmallSpd::new(&self.b, "B")?;
        SmallSpd::new(&self.v, "V")?;
        if !(self.rho >= m as f64) {
            return Err(GpError::InvalidParameter(format!("rho {} must be at least m = {m}", self.rho)));
        }
        for (name, v) in [
            ("alpha_sigma", self.alpha_sigma),
            ("q_sigma", self.q_sigma),
            ("alpha_tau", self.alpha_tau),
            ("q_tau", self.q_tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GpError::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// One leaf's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPState {
    #[serde(with = "crate::serde_nalgebra::vector")]
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub tau2: f64,
    pub corr: CorrelationState,
}

/// Parameters shared by every leaf: β₀, W and the number of leaves R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SharedRecord", into = "SharedRecord")]
pub struct SharedState {
    pub beta0: DVector<f64>,
    w: DMatrix<f64>,
    w_inv: DMatrix<f64>,
    log_det_w: f64,
    pub leaf_count: usize,
}

#[derive(Serialize, Deserialize)]
struct SharedRecord {
    #[serde(with = "crate::serde_nalgebra::vector")]
    beta0: DVector<f64>,
    #[serde(with = "crate::serde_nalgebra::matrix")]
    w: DMatrix<f64>,
    leaf_count: usize,
}

impl TryFrom<SharedRecord> for SharedState {
    type Error = GpError;
    fn try_from(r: SharedRecord) -> Result<Self> {
        SharedState::new(r.beta0, r.w, r.leaf_count)
    }
}

impl From<SharedState> for SharedRecord {
    fn from(s: SharedState) -> Self {
        SharedRecord { beta0: s.beta0, w: s.w, leaf_count: s.leaf_count }
    }
}

impl SharedState {
    pub fn new(beta0: DVector<f64>, w: DMatrix<f64>, leaf_count: usize) -> Result<Self> {
        let spd = SmallSpd::new(&w, "W")?;
        Ok(Self { log_det_w: spd.log_det(), w_inv: spd.inverse(), w, beta0, leaf_count })
    }

    pub fn from_w_inv(beta0: DVector<f64>, w_inv: DMatrix<f64>, leaf_count: usize) -> Result<Self> {
        let spd = SmallSpd::new(&w_inv, "W inverse")?;
        Ok(Self { log_det_w: -spd.log_det(), w: spd.inverse(), w_inv, beta0, leaf_count })
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn w_inv(&self) -> &DMatrix<f64> {
        &self.w_inv
    }

    pub fn log_det_w(&self) -> f64 {
        self.log_det_w
    }

    pub fn set_w_inv(&mut self, w_inv: DMatrix<f64>) -> Result<()> {
        let s = Self::from_w_inv(self.beta0.clone(), w_inv, self.leaf_count)?;
        *self = s;
        Ok(())
    }
}

/// Inverse-gamma in shape/scale form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WishartParams {
    pub dof: f64,
    pub scale: DMatrix<f64>,
}

/// Quantities shared by the β conditional, the collapsed σ² conditional and
/// the marginal posterior for one leaf at fixed (K, τ², β₀, W).
#[derive(Debug, Clone)]
pub struct LeafPosterior {
    /// β̃.
    pub beta_tilde: DVector<f64>,
    /// V_β̃ = (FᵀK⁻¹F + W⁻¹/τ²)⁻¹.
    pub v_beta: DMatrix<f64>,
    /// Factor of V_β̃⁻¹.
    precision: SmallSpd,
    pub log_det_v: f64,
    /// ψ = yᵀK⁻¹y + β₀ᵀW⁻¹β₀/τ² − β̃ᵀV_β̃⁻¹β̃.
    pub psi: f64,
}

impl LeafPosterior {
    pub fn new(obs: &Observations, cm: &CovMatrix, shared: &SharedState, tau2: f64) -> Result<Self> {
        let n = obs.n();
        let m = obs.m();
        if cm.n() != n {
            return Err(GpError::DimensionMismatch { expected: n, found: cm.n() });
        }
        if shared.beta0.len() != m {
            return Err(GpError::DimensionMismatch { expected: m, found: shared.beta0.len() });
        }
        let w_inv_tau = shared.w_inv() / tau2;
        let prior_rhs = &w_inv_tau * &shared.beta0;
        let (mut precision, mut rhs, y_kinv_y) = if n == 0 {
            (DMatrix::zeros(m, m), DVector::zeros(m), 0.0)
        } else {
            let mut fy = DMatrix::zeros(n, m + 1);
            fy.view_mut((0, 0), (n, m)).copy_from(&obs.f);
            fy.set_column(m, &obs.y);
            let solved = cm.solve(&fy);
            let kinv_f = solved.columns(0, m);
            let kinv_y = solved.column(m);
            (obs.f.transpose() * kinv_f, obs.f.transpose() * kinv_y, obs.y.dot(&kinv_y))
        };
        precision += &w_inv_tau;
        rhs += &prior_rhs;
        let precision = SmallSpd::new(&precision, "beta conditional precision")?;
        let beta_tilde = precision.solve(&rhs);
        let psi = y_kinv_y + shared.beta0.dot(&prior_rhs) - beta_tilde.dot(&rhs);
        Ok(Self {
            log_det_v: -precision.log_det(),
            v_beta: precision.inverse(),
            precision,
            beta_tilde,
            psi,
        })
    }

    /// A draw from N(β̃, σ²V_β̃) given standard normals `z`.
    pub fn beta_from_normals(&self, sigma2: f64, z: &DVector<f64>) -> DVector<f64> {
        &self.beta_tilde + self.precision.inverse_correlate(z) * sigma2.sqrt()
    }
}

/// Mean β̃ and V_β̃ of `β | rest ~ N(β̃, σ²V_β̃)`.
pub fn beta_conditional(
    obs: &Observations,
    cm: &CovMatrix,
    shared: &SharedState,
    tau2: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let post = LeafPosterior::new(obs, cm, shared, tau2)?;
    Ok((post.beta_tilde, post.v_beta))
}

/// One leaf's contribution `(β, σ², τ²)` to the shared-parameter conditionals.
#[derive(Debug, Clone, Copy)]
pub struct LeafCoefficients<'a> {
    pub beta: &'a DVector<f64>,
    pub sigma2: f64,
    pub tau2: f64,
}

impl<'a> From<&'a GPState> for LeafCoefficients<'a> {
    fn from(s: &'a GPState) -> Self {
        Self { beta: &s.beta, sigma2: s.sigma2, tau2: s.tau2 }
    }
}

/// Mean and covariance of `β₀ | rest`.
pub fn beta0_conditional(
    leaves: &[LeafCoefficients<'_>],
    w_inv: &DMatrix<f64>,
    hyper: &HyperParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let b_inv = spd_inverse(&hyper.b, "B")?;
    let mut weight = 0.0;
    let mut weighted_beta = DVector::zeros(hyper.m());
    for leaf in leaves {
        let wgt = 1.0 / (leaf.sigma2 * leaf.tau2);
        weight += wgt;
        weighted_beta += leaf.beta * wgt;
    }
    let precision = &b_inv + w_inv * weight;
    let spd = SmallSpd::new(&precision, "beta0 conditional precision")?;
    let mean = spd.solve(&(&b_inv * &hyper.mu + w_inv * weighted_beta));
    Ok((mean, spd.inverse()))
}

/// Full conditional of σ² given β (β not integrated out).
pub fn sigma2_conditional(
    obs: &Observations,
    cm: &CovMatrix,
    beta: &DVector<f64>,
    shared: &SharedState,
    tau2: f64,
    hyper: &HyperParams,
) -> InvGamma {
    let n = obs.n() as f64;
    let m = beta.len() as f64;
    let resid = &obs.y - &obs.f * beta;
    let data_term = if obs.n() == 0 { 0.0 } else { resid.dot(&cm.solve_vec(&resid)) };
    let dev = beta - &shared.beta0;
    let prior_term = quad_form(shared.w_inv(), &dev) / tau2;
    InvGamma {
        shape: (hyper.alpha_sigma + n + m) / 2.0,
        scale: (hyper.q_sigma + data_term + prior_term) / 2.0,
    }
}

/// Conditional of σ² with β integrated out: IG((α_σ+n)/2, (q_σ+ψ)/2).
pub fn sigma2_marginal_conditional(post: &LeafPosterior, n: usize, hyper: &HyperParams) -> InvGamma {
    InvGamma {
        shape: (hyper.alpha_sigma + n as f64) / 2.0,
        scale: (hyper.q_sigma + post.psi) / 2.0,
    }
}

pub fn tau2_conditional(
    beta: &DVector<f64>,
    beta0: &DVector<f64>,
    w_inv: &DMatrix<f64>,
    sigma2: f64,
    hyper: &HyperParams,
) -> InvGamma {
    let dev = beta - beta0;
    InvGamma {
        shape: (hyper.alpha_tau + beta.len() as f64) / 2.0,
        scale: (hyper.q_tau + quad_form(w_inv, &dev) / sigma2) / 2.0,
    }
}

/// Conditional of W⁻¹: Wishart with ρ+R degrees of freedom.
pub fn wishart_conditional(
    leaves: &[LeafCoefficients<'_>],
    beta0: &DVector<f64>,
    hyper: &HyperParams,
) -> Result<WishartParams> {
    let mut s = &hyper.v * hyper.rho;
    for leaf in leaves {
        let dev = leaf.beta - beta0;
        s += &dev * dev.transpose() / (leaf.sigma2 * leaf.tau2);
    }
    Ok(WishartParams {
        dof: hyper.rho + leaves.len() as f64,
        scale: spd_inverse(&s, "wishart conditional scale")?,
    })
}

/// Log of the marginal posterior of K with β and σ² integrated out, plus
/// `log_prior_k`.
pub fn log_marginal_posterior(
    obs: &Observations,
    cm: &CovMatrix,
    shared: &SharedState,
    tau2: f64,
    hyper: &HyperParams,
    log_prior_k: f64,
) -> Result<f64> {
    let post = LeafPosterior::new(obs, cm, shared, tau2)?;
    Ok(log_marginal_from_parts(&post, cm, shared, tau2, hyper, obs.n()) + log_prior_k)
}

pub(crate) fn log_marginal_from_parts(
    post: &LeafPosterior,
    cm: &CovMatrix,
    shared: &SharedState,
    tau2: f64,
    hyper: &HyperParams,
    n: usize,
) -> f64 {
    let n = n as f64;
    let m = shared.beta0.len() as f64;
    let a = hyper.alpha_sigma;
    let q = hyper.q_sigma;
    0.5 * (post.log_det_v - n * LN_2PI - cm.log_det() - shared.log_det_w() - m * tau2.ln())
        + 0.5 * a * (0.5 * q).ln()
        + ln_gamma(0.5 * (a + n))
        - 0.5 * (a + n) * (0.5 * (q + post.psi)).ln()
        - ln_gamma(0.5 * a)
}

/// Builds a state from a correlation state with the OLS fit for β and the
/// residual variance for σ².
pub fn ols_state(obs: &Observations, corr: CorrelationState) -> GPState {
    let m = obs.m();
    let (beta, sigma2) = ols(obs).unwrap_or_else(|| (DVector::zeros(m), 1.0));
    GPState { beta, sigma2, tau2: 1.0, corr }
}

/// Ordinary least squares coefficients and residual variance, `None` when
/// the design is rank deficient or too small.
pub fn ols(obs: &Observations) -> Option<(DVector<f64>, f64)> {
    let n = obs.n();
    let m = obs.m();
    if n <= m {
        return None;
    }
    let ftf = obs.f.transpose() * &obs.f;
    let spd = SmallSpd::new(&ftf, "FᵀF").ok()?;
    let beta = spd.solve(&(obs.f.transpose() * &obs.y));
    let resid = &obs.y - &obs.f * &beta;
    let s2 = resid.norm_squared() / (n - m) as f64;
    Some((beta, s2.max(1e-12)))
}
