//! Profile likelihood and marginal posterior over a (d, g) grid, with the
//! ordinary linear model as reference.
//!
//! A grid value `d = 0` stands for the linear limit: every boolean off and
//! K = (1+g)·I. Other range values are shared by all input dimensions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Observations;
use crate::error::{GpError, Result};
use crate::kernel::{build_cov, CorrelationState, CovMatrix};
use crate::linalg::SmallSpd;
use crate::model::{log_marginal_posterior, HyperParams, SharedState};
use crate::prior::LlmPriorParams;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub d: f64,
    pub g: f64,
    /// Profile log-likelihood; NaN when unstable.
    pub loglik: f64,
    /// Log marginal posterior of K; NaN when unstable.
    pub logpost: f64,
    /// False iff building the covariance raised a singularity.
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub cells: Vec<SurfaceCell>,
    /// Maximized log-likelihood of the ordinary linear model.
    pub lm_loglik: f64,
}

impl Surface {
    /// Best stable profile log-likelihood over the grid.
    pub fn max_loglik(&self) -> f64 {
        self.cells.iter().filter(|c| c.stable).map(|c| c.loglik).filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max L_GP / L_LM`, at least one whenever the grid holds a linear column.
    pub fn likelihood_ratio(&self) -> f64 {
        (self.max_loglik() - self.lm_loglik).exp()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["d", "g", "loglik", "logpost", "stable"])?;
        for c in &self.cells {
            out.write_record([c.d.to_string(), c.g.to_string(), c.loglik.to_string(), c.logpost.to_string(), c.stable.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `k` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..k).map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp()).collect()
}

/// `max_β N(y | Fβ, σ²K)` with β the GLS estimate and σ² = rᵀK⁻¹r / n.
pub fn profile_loglik(obs: &Observations, cm: &CovMatrix) -> Result<f64> {
    let n = obs.n() as f64;
    let kinv_f = cm.solve(&obs.f);
    let kinv_y = cm.solve_vec(&obs.y);
    let ftkf = SmallSpd::new(&(obs.f.transpose() * &kinv_f), "FᵀK⁻¹F")?;
    let beta = ftkf.solve(&(obs.f.transpose() * &kinv_y));
    let r = &obs.y - &obs.f * &beta;
    let s2 = r.dot(&cm.solve_vec(&r)) / n;
    if !(s2 > 0.0) {
        return Err(GpError::Data("zero residual variance".into()));
    }
    Ok(-0.5 * n * (LN_2PI + s2.ln() + 1.0) - 0.5 * cm.log_det())
}

/// Maximized log-likelihood of `y ~ N(Fβ, σ²I)`.
pub fn lm_loglik(obs: &Observations) -> Result<f64> {
    profile_loglik(obs, &CovMatrix::llm(obs.n(), 0.0))
}

fn cell_state(m_x: usize, d: f64, g: f64) -> Result<CorrelationState> {
    if d == 0.0 {
        CorrelationState::new(vec![1.0; m_x], g, vec![false; m_x], vec![2.0; m_x])
    } else {
        CorrelationState::gaussian(vec![d; m_x], g)
    }
}

/// Evaluates every (d, g) pair. The marginal posterior conditions on
/// `shared` and `tau2`; its K prior is p(d)p(g) for GP cells and p(g) alone
/// for the linear column.
pub fn explore_surfaces(
    obs: &Observations,
    d_grid: &[f64],
    g_grid: &[f64],
    hyper: &HyperParams,
    pp: &LlmPriorParams,
    shared: &SharedState,
    tau2: f64,
) -> Result<Surface> {
    if d_grid.iter().chain(g_grid).any(|v| !v.is_finite()) {
        return Err(GpError::InvalidParameter("grid values must be finite".into()));
    }
    let mut cells = Vec::with_capacity(d_grid.len() * g_grid.len());
    for &d in d_grid {
        for &g in g_grid {
            let cs = cell_state(obs.m_x(), d, g)?;
            let cell = match build_cov(&obs.x, &cs) {
                Err(GpError::SingularCovariance { .. }) => {
                    SurfaceCell { d, g, loglik: f64::NAN, logpost: f64::NAN, stable: false }
                }
                Err(e) => return Err(e),
                Ok(cm) => {
                    let loglik = profile_loglik(obs, &cm).unwrap_or(f64::NAN);
                    let log_prior_k = if d == 0.0 { pp.log_prior_g(g)? } else { pp.log_prior_corr(&cs, false) };
                    let logpost = log_marginal_posterior(obs, &cm, shared, tau2, hyper, log_prior_k).unwrap_or(f64::NAN);
                    SurfaceCell { d, g, loglik, logpost, stable: true }
                }
            };
            cells.push(cell);
        }
    }
    Ok(Surface { cells, lm_loglik: lm_loglik(obs)? })
}

/// Default grids for the likelihood-ratio study: the linear column plus a
/// log grid in d, and a log grid in g.
pub fn study_grids() -> (Vec<f64>, Vec<f64>) {
    let mut d = vec![0.0];
    d.extend(log_grid(1e-4, 1e4, 129));
    (d, log_grid(1e-14, 10.0, 91))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::simulate::gen_linear;
    use crate::kernel::build_cov;
    use nalgebra::{DMatrix, DVector};

    fn setup() -> (Observations, HyperParams, SharedState) {
        let obs = gen_linear(10, 4).unwrap().data.observations();
        let hyper = HyperParams::default_for(2);
        let shared = SharedState::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2), 1).unwrap();
        (obs, hyper, shared)
    }

    /// Direct evaluation of the multivariate normal density.
    fn dense_loglik(obs: &Observations, k: &DMatrix<f64>, beta: &DVector<f64>, s2: f64) -> f64 {
        let n = obs.n() as f64;
        let c = k * s2;
        let r = &obs.y - &obs.f * beta;
        let chol = c.clone().cholesky().unwrap();
        let ld: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        -0.5 * (n * LN_2PI + ld + r.dot(&chol.solve(&r)))
    }

    #[test]
    fn linear_column_equals_lm_reference() {
        let (obs, hyper, shared) = setup();
        let s = explore_surfaces(&obs, &[0.0], &[1e-4, 0.3, 2.0], &hyper, &LlmPriorParams::default(), &shared, 1.0).unwrap();
        for c in &s.cells {
            assert!(c.stable);
            assert!((c.loglik - s.lm_loglik).abs() < 1e-10, "{} vs {}", c.loglik, s.lm_loglik);
        }
    }

    #[test]
    fn profile_matches_density_at_estimates_and_dominates_neighbours() {
        let (obs, _, _) = setup();
        let cs = CorrelationState::gaussian(vec![0.2], 0.1).unwrap();
        let cm = build_cov(&obs.x, &cs).unwrap();
        let k = cm.matrix();
        let kinv = k.clone().try_inverse().unwrap();
        let beta = (obs.f.transpose() * &kinv * &obs.f).try_inverse().unwrap() * obs.f.transpose() * &kinv * &obs.y;
        let r = &obs.y - &obs.f * &beta;
        let s2 = (r.transpose() * &kinv * &r)[(0, 0)] / obs.n() as f64;
        let best = dense_loglik(&obs, &k, &beta, s2);
        assert!((profile_loglik(&obs, &cm).unwrap() - best).abs() < 1e-9);
        for (db, ds) in [(0.01, 0.0), (-0.01, 0.0), (0.0, 0.05), (0.0, -0.05)] {
            let b2 = beta.add_scalar(db);
            assert!(dense_loglik(&obs, &k, &b2, s2 * (1.0 + ds)) < best);
        }
    }

    #[test]
    fn ratio_at_least_one_and_unstable_iff_singular() {
        let (obs, hyper, shared) = setup();
        let (d, g) = (vec![0.0, 0.5, 5.0, 50.0], vec![1e-16, 1e-3, 0.5]);
        let s = explore_surfaces(&obs, &d, &g, &hyper, &LlmPriorParams::default(), &shared, 1.0).unwrap();
        assert!(s.likelihood_ratio() >= 1.0);
        for c in &s.cells {
            let singular = matches!(build_cov(&obs.x, &cell_state(1, c.d, c.g).unwrap()), Err(GpError::SingularCovariance { .. }));
            assert_eq!(c.stable, !singular);
            assert_eq!(c.stable, c.loglik.is_finite());
        }
        assert!(s.cells.iter().any(|c| !c.stable), "expected a singular cell at d = 50, g = 1e-16");
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("d,g,loglik,logpost,stable\n"));
        assert_eq!(text.lines().count(), 1 + d.len() * g.len());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 10.0, 5);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[4] - 10.0).abs() < 1e-12);
        assert!((g[2] - 0.1).abs() < 1e-12);
    }
}
