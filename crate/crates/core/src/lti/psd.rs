use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};
use crate::lti::{solve_lyapunov, StateSpace};

/// Frequency-independent bound on the output spectral density of
/// `x(t+1) = Ã x + w̃`, `ỹ = C̃ x + ṽ`:
/// `(1+ρ)/(1−ρ) ‖C̃‖² ‖Σ̃‖ + ‖R̃‖` with `Σ̃ = Ã Σ̃ Ãᵀ + Q̃`.
///
/// The derivation replaces `‖Ãᵏ‖` by `ρᵏ`, which is exact for normal `Ã`
/// only. For strongly non-normal `Ã` the value can fall below the true
/// supremum; see [`psd_transient_bound`] for a version that always holds.
pub fn psd_bound(closed: &StateSpace, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<f64> {
    let (rho, c_norm, sigma_norm, r_norm) = bound_terms(closed, q, r)?;
    Ok((1.0 + rho) / (1.0 - rho) * c_norm * c_norm * sigma_norm + r_norm)
}

/// `(1 + 2 Σ_{k≥1} ‖Ãᵏ‖) ‖C̃‖² ‖Σ̃‖ + ‖R̃‖`, summing the actual power norms.
pub fn psd_transient_bound(closed: &StateSpace, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<f64> {
    let (_, c_norm, sigma_norm, r_norm) = bound_terms(closed, q, r)?;
    let n = closed.state_dim();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut sum = 0.0;
    for _ in 0..100_000 {
        power = &closed.a * &power;
        let norm = spectral_norm(&power);
        sum += norm;
        if norm <= 1e-14 * (1.0 + sum) {
            break;
        }
    }
    Ok((1.0 + 2.0 * sum) * c_norm * c_norm * sigma_norm + r_norm)
}

fn bound_terms(
    closed: &StateSpace,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(f64, f64, f64, f64)> {
    let n = closed.state_dim();
    let p = closed.output_dim();
    linalg::expect_shape("PSD bound Q", q, n, n)?;
    linalg::expect_shape("PSD bound R", r, p, p)?;
    let rho = linalg::spectral_radius(&closed.a)?;
    if rho >= 1.0 {
        return Err(Error::Unstable {
            context: "PSD bound",
            spectral_radius: rho,
        });
    }
    let sigma = solve_lyapunov(&closed.a, q)?;
    Ok((
        rho,
        spectral_norm(&closed.c),
        spectral_norm(&sigma),
        spectral_norm(r),
    ))
}
