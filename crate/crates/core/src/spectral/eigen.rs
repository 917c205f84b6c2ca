//! Extreme eigenvalues, norms and the exponential of small dense matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Relative tolerance for eigenvalue residuals.
pub const EIGEN_TOL: f64 = 1e-10;

const INNER_ITERS: usize = 30;
const MAX_SQUARINGS: usize = 24;
const TAYLOR_DEGREE: i32 = 18;

fn normalize(x: &mut [f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        x.iter_mut().for_each(|v| *v /= norm);
    }
    norm
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest eigenvalue of the symmetric matrix `a`.
///
/// Power iteration on `a + s I` (with `s` making it positive semidefinite)
/// accelerated by repeated squaring of the iteration matrix. Accepts when the
/// Rayleigh residual drops below `EIGEN_TOL * scale` or when the Rayleigh
/// quotient stops moving between squarings.
pub fn sym_lambda_max(a: &DenseMatrix) -> Result<f64> {
    let scale = a.norm_inf();
    if !scale.is_finite() {
        return Err(Error::NumericFailure("eigenvalue of non-finite matrix".into()));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let shift = 2.0 * scale;
    power_top(&a.shifted_identity(1.0 / shift).scale(shift), scale).map(|rho| rho - shift)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix, unshifted.
fn psd_lambda_max(a: &DenseMatrix) -> Result<f64> {
    let scale = a.norm_inf();
    if !scale.is_finite() {
        return Err(Error::NumericFailure("eigenvalue of non-finite matrix".into()));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    power_top(a, scale)
}

fn power_top(b: &DenseMatrix, scale: f64) -> Result<f64> {
    let n = b.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    normalize(&mut x);
    let mut q = b.clone();
    let mut rho_prev = f64::NAN;
    let mut residual = f64::INFINITY;
    for round in 0..=MAX_SQUARINGS {
        for _ in 0..INNER_ITERS {
            let mut y = q.matvec(&x);
            if normalize(&mut y) == 0.0 {
                // The start vector lies in the null space of a power of b.
                y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                normalize(&mut y);
            }
            x = y;
        }
        let bx = b.matvec(&x);
        let rho = dot(&x, &bx);
        residual = bx.iter().zip(&x).map(|(p, v)| (p - rho * v).powi(2)).sum::<f64>().sqrt();
        if residual <= EIGEN_TOL * scale || (rho - rho_prev).abs() <= 1e-15 * scale {
            return Ok(rho);
        }
        rho_prev = rho;
        if round < MAX_SQUARINGS {
            q = q.matmul(&q);
            let m = q.max_abs();
            if !(m > 0.0 && m.is_finite()) {
                break;
            }
            q = q.scale(1.0 / m);
        }
    }
    Err(Error::IterationFailure { iterations: (MAX_SQUARINGS + 1) * INNER_ITERS, residual })
}

/// Spectral norm `sqrt(lambda_max(A^T A))`.
pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    let ata = a.transpose().matmul(a);
    Ok(psd_lambda_max(&ata)?.max(0.0).sqrt())
}

/// Logarithmic norm under the spectral norm: `lambda_max((A + A^T) / 2)`.
pub fn log_norm(a: &DenseMatrix) -> Result<f64> {
    sym_lambda_max(&a.add(&a.transpose()).scale(0.5))
}

/// Matrix exponential by scaling and squaring of a degree-18 Taylor polynomial.
pub fn matrix_exp(a: &DenseMatrix) -> DenseMatrix {
    let n = a.dim();
    let norm = a.norm_one();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = a.scale(0.5f64.powi(squarings));
    let identity = DenseMatrix::identity(n);
    let mut e = identity.clone();
    for k in (1..=TAYLOR_DEGREE).rev() {
        e = identity.add(&x.matmul(&e).scale(1.0 / f64::from(k)));
    }
    for _ in 0..squarings {
        e = e.matmul(&e);
    }
    e
}
