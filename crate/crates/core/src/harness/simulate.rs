//! Synthetic benchmark surfaces.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, ResponseTransform, ScaleMap};
use crate::dist;
use crate::error::Result;

/// A generated dataset with its noiseless mean at the training inputs.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub mu: DVector<f64>,
}

pub fn linear_mean(x: f64) -> f64 {
    1.0 + 2.0 * x
}

/// `n` evenly spaced points on [0, 1] with `y = 1 + 2x + N(0, 1)`.
pub fn gen_linear(n: usize, seed: u64) -> Result<Simulated> {
    gen_linear_with_noise(n, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gen_linear_with_noise<R: Rng + ?Sized>(n: usize, sd: f64, rng: &mut R) -> Result<Simulated> {
    let step = 1.0 / (n.max(2) - 1) as f64;
    let x = DMatrix::from_fn(n, 1, |i, _| i as f64 * step);
    let mu = x.column(0).map(linear_mean);
    let y = DVector::from_fn(n, |i, _| mu[i] + sd * dist::std_normal(rng));
    let data = Dataset::with_maps(x, y, vec![ScaleMap { min: 0.0, max: 1.0 }], ResponseTransform::Identity)?;
    Ok(Simulated { data, mu })
}

pub const EXP2D_NOISE_SD: f64 = 0.001;
pub const EXP2D_LOWER: f64 = -2.0;
pub const EXP2D_UPPER: f64 = 6.0;
pub const EXP2D_GRID: usize = 21;

pub fn exp2d_mean(x1: f64, x2: f64) -> f64 {
    x1 * (-x1 * x1 - x2 * x2).exp()
}

/// The regular 21×21 grid on [-2, 6]², first coordinate varying slowest.
pub fn exp2d_grid() -> DMatrix<f64> {
    let k = EXP2D_GRID;
    let step = (EXP2D_UPPER - EXP2D_LOWER) / (k - 1) as f64;
    DMatrix::from_fn(k * k, 2, |r, c| {
        let i = if c == 0 { r / k } else { r % k };
        EXP2D_LOWER + i as f64 * step
    })
}

/// A random size-`n` subsample of the grid without replacement, scaled
/// with the domain bounds rather than the sample range.
pub fn gen_exp2d(n: usize, seed: u64) -> Result<Simulated> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = exp2d_grid();
    let n = n.min(grid.nrows());
    let mut rows: Vec<usize> = rand::seq::index::sample(&mut rng, grid.nrows(), n).into_vec();
    rows.sort_unstable();
    let x = grid.select_rows(&rows);
    let mu = DVector::from_fn(n, |i, _| exp2d_mean(x[(i, 0)], x[(i, 1)]));
    let y = DVector::from_fn(n, |i, _| mu[i] + EXP2D_NOISE_SD * dist::std_normal(&mut rng));
    let map = ScaleMap { min: EXP2D_LOWER, max: EXP2D_UPPER };
    let data = Dataset::with_maps(x, y, vec![map; 2], ResponseTransform::Identity)?;
    Ok(Simulated { data, mu })
}

pub const FRIEDMAN_DIM: usize = 10;

/// `10 sin(π x₁x₂) + 20(x₃ - 0.5)² + 10x₄ + 5x₅`; later inputs are inert.
pub fn friedman_mean(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// Uniform inputs on [0, 1]^10 with standard normal noise.
pub fn gen_friedman(n: usize, seed: u64) -> Result<Simulated> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, FRIEDMAN_DIM, |_, _| rng.random::<f64>());
    let mu = DVector::from_fn(n, |i, _| friedman_mean(&x.row(i).iter().copied().collect::<Vec<_>>()));
    let y = DVector::from_fn(n, |i, _| mu[i] + dist::std_normal(&mut rng));
    let maps = vec![ScaleMap { min: 0.0, max: 1.0 }; FRIEDMAN_DIM];
    let data = Dataset::with_maps(x, y, maps, ResponseTransform::Identity)?;
    Ok(Simulated { data, mu })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_inputs_are_evenly_spaced() {
        let s = gen_linear(10, 1).unwrap();
        for i in 0..10 {
            assert!((s.data.x_scaled[(i, 0)] - i as f64 / 9.0).abs() < 1e-15);
        }
        let quiet = gen_linear_with_noise(10, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for i in 0..10 {
            assert_eq!(quiet.data.y[i], 1.0 + 2.0 * quiet.data.x_raw[(i, 0)]);
        }
    }

    #[test]
    fn linear_response_mean_is_two() {
        let s = gen_linear(100_000, 5).unwrap();
        assert!((s.data.y.mean() - 2.0).abs() < 0.02, "{}", s.data.y.mean());
    }

    #[test]
    fn exp2d_plug_ins_and_grid() {
        assert_eq!(exp2d_mean(0.0, 0.0), 0.0);
        let g = exp2d_grid();
        assert_eq!(g.nrows(), 441);
        assert_eq!((g[(0, 0)], g[(440, 1)]), (-2.0, 6.0));
        assert!((g[(1, 1)] - (-1.6)).abs() < 1e-12);
        let s = gen_exp2d(200, 3).unwrap();
        assert_eq!(s.data.n(), 200);
        let mut rows: Vec<Vec<u64>> = (0..200).map(|i| s.data.x_raw.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        rows.dedup();
        assert_eq!(rows.len(), 200);
        assert!((s.data.y - &s.mu).amax() < 0.01);
        assert!(s.data.x_scaled.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn friedman_plug_ins() {
        let mut x = vec![0.0; 10];
        assert!((friedman_mean(&x) - 5.0).abs() < 1e-12);
        x[..4].copy_from_slice(&[0.5, 1.0, 0.5, 0.0]);
        assert!((friedman_mean(&x) - 10.0).abs() < 1e-12);
        let s = gen_friedman(50, 2).unwrap();
        assert_eq!(s.data.x_scaled, s.data.x_raw);
        assert_eq!(s.mu.len(), 50);
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(gen_friedman(20, 9).unwrap().data, gen_friedman(20, 9).unwrap().data);
        assert_ne!(gen_exp2d(20, 9).unwrap().data.y, gen_exp2d(20, 10).unwrap().data.y);
    }
}
