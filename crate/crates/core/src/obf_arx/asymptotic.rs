use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gobf::{gobf_bank, GobfBank, InnerFunction};
use crate::linalg::{min_eigenvalue_sym, spd_solve};
use crate::lti::{augment_full, ClosedLoop, KalmanPredictor};

/// Smallest eigenvalue the stationary regressor covariance may have before
/// the regressors count as not persistently exciting.
pub const EXCITATION_FLOOR: f64 = 1e-10;

/// Best-in-class coefficients and the resulting steady-state gap to the
/// Kalman predictor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticSolution {
    #[serde(with = "crate::serde_matrix")]
    pub l_star: DMatrix<f64>,
    /// Stationary covariance of `[y; x̂; x̌]`.
    #[serde(with = "crate::serde_matrix")]
    pub cov_full: DMatrix<f64>,
    /// `Ē‖L* x̌ − C x̂‖²`.
    pub bias: f64,
    /// Measured minimum eigenvalue of `Cov(x̌)`.
    pub excitation_floor: f64,
}

pub fn asymptotic_coefficients(
    closed: &ClosedLoop,
    kf: &KalmanPredictor,
    bank: &GobfBank,
) -> Result<AsymptoticSolution> {
    let full = augment_full(closed, kf, bank)?;
    let cov = full.output_covariance()?;
    solve_from_covariance(&cov, &kf.realization.c, closed.layout.outputs, kf.state_dim())
}

/// Asymptotic solutions for every chain length `0..=q_max` with one
/// Lyapunov solve: the regressors of a shorter chain are a prefix of the
/// longer one's.
pub fn bias_sweep(
    closed: &ClosedLoop,
    kf: &KalmanPredictor,
    inner: &InnerFunction,
    q_max: usize,
) -> Result<Vec<AsymptoticSolution>> {
    let l = closed.layout;
    let bank = gobf_bank(inner, q_max, l.inputs + l.outputs)?;
    let full = augment_full(closed, kf, &bank)?;
    let cov = full.output_covariance()?;
    let (p, n) = (l.outputs, kf.state_dim());
    let per_block = inner.order() * (l.inputs + l.outputs);
    (0..=q_max)
        .map(|q| {
            let keep = p + n + q * per_block;
            let sub = cov.view((0, 0), (keep, keep)).into_owned();
            solve_from_covariance(&sub, &kf.realization.c, p, n)
        })
        .collect()
}

fn solve_from_covariance(
    cov: &DMatrix<f64>,
    c: &DMatrix<f64>,
    p: usize,
    n: usize,
) -> Result<AsymptoticSolution> {
    let nx = cov.nrows() - p - n;
    let xx = cov.view((p + n, p + n), (nx, nx)).into_owned();
    let floor = if nx > 0 { min_eigenvalue_sym(&xx) } else { f64::INFINITY };
    if nx > 0 && floor < EXCITATION_FLOOR {
        return Err(Error::ExcitationDeficient {
            min_eigenvalue: floor,
        });
    }
    let l_star = if nx > 0 {
        let xy = cov.view((p + n, 0), (nx, p)).into_owned();
        spd_solve(&xx, &xy)
            .ok_or(Error::Singular("stationary regressor covariance"))?
            .transpose()
    } else {
        DMatrix::zeros(p, 0)
    };

    // M = [C, −L*] acting on [x̂; x̌]
    let mut m = DMatrix::zeros(p, n + nx);
    m.view_mut((0, 0), (p, n)).copy_from(c);
    m.view_mut((0, n), (p, nx)).copy_from(&(-&l_star));
    let block = cov.view((p, p), (n + nx, n + nx));
    let bias = (&m * block * m.transpose()).trace().max(0.0);

    Ok(AsymptoticSolution {
        l_star,
        cov_full: cov.clone(),
        bias,
        excitation_floor: floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gobf::balanced_allpass;
    use crate::lti::{close_loop, NoiseSpec, NoisySystem, StateSpace};
    use num_complex::Complex64;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn scalar_setup() -> (ClosedLoop, KalmanPredictor) {
        let plant = NoisySystem::new(
            StateSpace::strictly_proper(scalar(0.9), scalar(1.0), scalar(1.0)).unwrap(),
            NoiseSpec::new(scalar(1.0), scalar(1.0)).unwrap(),
        )
        .unwrap();
        let ctrl = NoisySystem::white_noise_controller(1, scalar(1.0)).unwrap();
        let cl = close_loop(&plant, &ctrl).unwrap();
        let kf = KalmanPredictor::steady_state(&plant.system, &plant.noise).unwrap();
        (cl, kf)
    }

    #[test]
    fn empty_bank_bias_is_prediction_power() {
        let (cl, kf) = scalar_setup();
        let inner = balanced_allpass(&[Complex64::new(0.2, 0.0)]).unwrap();
        let sol = bias_sweep(&cl, &kf, &inner, 0).unwrap().remove(0);
        let c = &kf.realization.c;
        let xhat_cov = sol.cov_full.view((1, 1), (1, 1)).into_owned();
        let power = (c * xhat_cov * c.transpose())[(0, 0)];
        assert!((sol.bias - power).abs() < 1e-12);
        assert_eq!(sol.l_star.ncols(), 0);
    }

    #[test]
    fn pole_matched_bank_is_exact() {
        // the scalar Kalman predictor is first order with pole λ; a Laguerre
        // bank with the same pole represents it exactly
        let (cl, kf) = scalar_setup();
        let lambda = kf.eigenvalues[0].re;
        let inner = balanced_allpass(&[Complex64::new(lambda, 0.0)]).unwrap();
        let bank = gobf_bank(&inner, 1, 2).unwrap();
        let sol = asymptotic_coefficients(&cl, &kf, &bank).unwrap();
        assert!(sol.bias < 1e-10, "bias {}", sol.bias);
    }

    #[test]
    fn sweep_matches_direct_and_is_monotone() {
        let (cl, kf) = scalar_setup();
        let inner = balanced_allpass(&[Complex64::new(0.0, 0.0)]).unwrap();
        let sweep = bias_sweep(&cl, &kf, &inner, 5).unwrap();
        for q in 1..=5 {
            let bank = gobf_bank(&inner, q, 2).unwrap();
            let direct = asymptotic_coefficients(&cl, &kf, &bank).unwrap();
            assert!((direct.bias - sweep[q].bias).abs() < 1e-12);
            assert!((direct.l_star - &sweep[q].l_star).amax() < 1e-10);
            assert!(sweep[q].bias <= sweep[q - 1].bias + 1e-14);
        }
        // with pure delays each extra tap shrinks the bias by about λ²
        let lambda = kf.eigenvalues[0].re;
        let ratio = sweep[5].bias / sweep[4].bias;
        assert!((ratio - lambda * lambda).abs() < 1e-3, "ratio {ratio}");
    }

    #[test]
    fn normal_equations_hold() {
        let (cl, kf) = scalar_setup();
        let inner = balanced_allpass(&[Complex64::new(0.5, 0.0)]).unwrap();
        let sol = bias_sweep(&cl, &kf, &inner, 3).unwrap().pop().unwrap();
        let (p, n) = (1, 1);
        let nx = sol.l_star.ncols();
        let xx = sol.cov_full.view((p + n, p + n), (nx, nx));
        let yx = sol.cov_full.view((0, p + n), (p, nx));
        let resid = &sol.l_star * xx - yx;
        assert!(resid.amax() <= 1e-9);
    }

    #[test]
    fn deficient_excitation_reported() {
        let plant = NoisySystem::new(
            StateSpace::strictly_proper(scalar(0.9), scalar(1.0), scalar(1.0)).unwrap(),
            NoiseSpec::new(scalar(1.0), scalar(1.0)).unwrap(),
        )
        .unwrap();
        // no excitation: the u-channel regressors are identically zero
        let ctrl = NoisySystem::white_noise_controller(1, scalar(0.0)).unwrap();
        let cl = close_loop(&plant, &ctrl).unwrap();
        let kf = KalmanPredictor::steady_state(&plant.system, &plant.noise).unwrap();
        let bank = gobf_bank(&balanced_allpass(&[Complex64::new(0.3, 0.0)]).unwrap(), 1, 2).unwrap();
        assert!(matches!(
            asymptotic_coefficients(&cl, &kf, &bank),
            Err(Error::ExcitationDeficient { .. })
        ));
    }
}
