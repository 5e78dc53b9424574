//! Discrete Lyapunov equation `Σ = A Σ Aᵀ + Q` by squared-power (Smith)
//! doubling followed by residual refinement.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};

const MAX_DOUBLINGS: usize = 64;
const POWER_TOL: f64 = 1e-13;
const REFINE_STEPS: usize = 3;

/// Solves `Σ = A Σ Aᵀ + Q` for stable `A`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    linalg::expect_shape("Lyapunov A", a, n, n)?;
    linalg::expect_shape("Lyapunov Q", q, n, n)?;
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    let powers = squared_powers(a)?;
    let mut sigma = doubling_sum(&powers, q);
    symmetrize(&mut sigma);

    for _ in 0..REFINE_STEPS {
        let resid = lyapunov_residual(a, q, &sigma);
        if resid.amax() <= 1e-15 * (1.0 + sigma.amax()) {
            break;
        }
        let correction = doubling_sum(&powers, &resid);
        sigma += correction;
        symmetrize(&mut sigma);
    }
    Ok(sigma)
}

/// `A Σ Aᵀ + Q − Σ`.
pub fn lyapunov_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    a * sigma * a.transpose() + q - sigma
}

/// `[A, A², A⁴, …]` until the last power is negligible.
fn squared_powers(a: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let mut powers = vec![a.clone()];
    let mut current = a.clone();
    for _ in 0..MAX_DOUBLINGS {
        let norm = current.norm();
        if !norm.is_finite() || norm > 1e150 {
            break;
        }
        if norm <= POWER_TOL {
            return Ok(powers);
        }
        current = &current * &current;
        powers.push(current.clone());
    }
    let rho = linalg::spectral_radius(a).unwrap_or(f64::INFINITY);
    Err(Error::Unstable {
        context: "Lyapunov solver",
        spectral_radius: rho,
    })
}

/// Σ_{j ≥ 0} A^j Q (A^j)ᵀ using the precomputed squared powers.
fn doubling_sum(powers: &[DMatrix<f64>], q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = q.clone();
    for p in powers {
        let add = p * &s * p.transpose();
        s += add;
    }
    s
}
