//! Random draws that the sampler needs beyond what `rand_distr` offers directly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::Result;
use crate::linalg::SmallSpd;

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn std_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| std_normal(rng))
}

/// Gamma with shape and rate.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters").sample(rng)
}

/// Inverse gamma with density ∝ x^(-shape-1) e^(-scale/x).
pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    1.0 / gamma(rng, shape, scale)
}

/// Multivariate normal with covariance `cov`.
pub fn mvn<R: Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let l = SmallSpd::new(cov, "normal covariance")?.l();
    Ok(mean + l * std_normal_vec(rng, mean.len()))
}

/// Wishart draw with the given scale matrix and degrees of freedom
/// (mean `dof · scale`), by the Bartlett decomposition.
pub fn wishart<R: Rng + ?Sized>(rng: &mut R, scale: &DMatrix<f64>, dof: f64) -> Result<DMatrix<f64>> {
    let m = scale.nrows();
    let l = SmallSpd::new(scale, "wishart scale")?.l();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        let chi = ChiSquared::new(dof - i as f64).expect("dof > m - 1");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let la = l * a;
    Ok(crate::linalg::symmetrize(&(&la * la.transpose())))
}
