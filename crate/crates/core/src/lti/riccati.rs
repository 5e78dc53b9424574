//! Filtering Riccati equation and the steady-state Kalman predictor.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, expect_shape, lu_solve, spd_solve, spectral_norm, symmetrize};
use crate::lti::{NoiseSpec, StateSpace};

pub const DOUBLING_MAX_ITER: usize = 200;
pub const FIXED_POINT_MAX_ITER: usize = 1_000_000;
const STEP_TOL: f64 = 1e-13;
const RESIDUAL_TOL: f64 = 1e-9;

/// Stabilizing solution of
/// `P = A P Aᵀ − A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ + Q`.
///
/// Structure-preserving doubling first; the plain Riccati fixed-point
/// iteration is the fallback when doubling breaks down.
pub fn solve_dare(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let p = c.nrows();
    expect_shape("DARE A", a, n, n)?;
    expect_shape("DARE C", c, p, n)?;
    expect_shape("DARE Q", q, n, n)?;
    expect_shape("DARE R", r, p, p)?;
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    let candidate = match doubling(a, c, q, r) {
        Some(sol) => sol,
        None => fixed_point(a, c, q, r, q.clone(), FIXED_POINT_MAX_ITER)?,
    };
    // a couple of Riccati-map sweeps polish the last digits
    let p_sol = fixed_point(a, c, q, r, candidate, 2)?;

    let resid = spectral_norm(&dare_residual(a, c, q, r, &p_sol)?);
    let scale = 1.0 + spectral_norm(&p_sol);
    if !(resid <= RESIDUAL_TOL * scale) {
        return Err(Error::NotConverged {
            solver: "DARE",
            iterations: FIXED_POINT_MAX_ITER,
            residual: resid,
        });
    }
    let k = kalman_gain(&p_sol, c, r)?;
    let closed = a - a * &k * c;
    let rho = linalg::spectral_radius(&closed)?;
    if rho >= 1.0 {
        return Err(Error::Unstable {
            context: "Kalman predictor A(I-KC)",
            spectral_radius: rho,
        });
    }
    Ok(p_sol)
}

/// One application of the Riccati map.
fn riccati_map(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let s = c * p * c.transpose() + r;
    let cpa = c * p * a.transpose();
    let gain_term = spd_solve(&s, &cpa)
        .or_else(|| lu_solve(&s, &cpa))
        .ok_or(Error::Singular("innovation covariance C P Cᵀ + R"))?;
    let mut next = a * p * a.transpose() - cpa.transpose() * gain_term + q;
    symmetrize(&mut next);
    Ok(next)
}

pub fn dare_residual(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(riccati_map(a, c, q, r, p)? - p)
}

fn doubling(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let r_inv_c = spd_solve(r, c).or_else(|| lu_solve(r, c))?;
    let mut ak = a.transpose();
    let mut gk = c.transpose() * r_inv_c;
    let mut hk = q.clone();
    for _ in 0..DOUBLING_MAX_ITER {
        let m = &eye + &gk * &hk;
        let lu = m.lu();
        let x_a = lu.solve(&ak)?;
        let x_g = lu.solve(&gk)?;
        let next_a = &ak * &x_a;
        let mut next_g = &gk + &ak * x_g * ak.transpose();
        let mut next_h = &hk + ak.transpose() * &hk * &x_a;
        symmetrize(&mut next_g);
        symmetrize(&mut next_h);
        if !linalg::is_finite(&next_h) || !linalg::is_finite(&next_a) {
            return None;
        }
        let step = (&next_h - &hk).norm();
        let done = step <= STEP_TOL * (1.0 + next_h.norm());
        ak = next_a;
        gk = next_g;
        hk = next_h;
        if done {
            return Some(hk);
        }
    }
    None
}

fn fixed_point(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    start: DMatrix<f64>,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let mut p = start;
    for _ in 0..max_iter {
        let next = riccati_map(a, c, q, r, &p)?;
        let step = (&next - &p).norm();
        p = next;
        if step <= STEP_TOL * (1.0 + p.norm()) {
            break;
        }
    }
    Ok(p)
}

/// `K = P Cᵀ (C P Cᵀ + R)⁻¹`.
pub fn kalman_gain(p: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    let m = c.nrows();
    expect_shape("Kalman gain P", p, n, n)?;
    expect_shape("Kalman gain C", c, m, n)?;
    expect_shape("Kalman gain R", r, m, m)?;
    let s = c * p * c.transpose() + r;
    // K Sᵀ = P Cᵀ  ⇔  S Kᵀ = C P   (S symmetric)
    let cp = c * p;
    let kt = spd_solve(&s, &cp)
        .or_else(|| lu_solve(&s, &cp))
        .ok_or(Error::Singular("innovation covariance C P Cᵀ + R"))?;
    let k = kt.transpose();
    if !linalg::is_finite(&k) {
        return Err(Error::Singular("innovation covariance C P Cᵀ + R"));
    }
    Ok(k)
}

/// Steady-state Kalman one-step output predictor viewed as an LTI system
/// from the stacked input `[u; y]` to `ŷ*`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanPredictor {
    pub gain: DMatrix<f64>,
    /// `None` when the predictor was built from a user-supplied gain.
    pub riccati_solution: Option<DMatrix<f64>>,
    pub realization: StateSpace,
    pub eigenvalues: Vec<Complex64>,
}

impl KalmanPredictor {
    /// Solves the DARE for `plant` and assembles the predictor.
    pub fn steady_state(plant: &StateSpace, noise: &NoiseSpec) -> Result<Self> {
        noise.check_plant(plant)?;
        let p = solve_dare(&plant.a, &plant.c, &noise.q, &noise.r)?;
        let k = kalman_gain(&p, &plant.c, &noise.r)?;
        let mut kf = build_kalman_predictor(&plant.a, &plant.b, &plant.c, &k)?;
        kf.riccati_solution = Some(p);
        Ok(kf)
    }

    pub fn state_dim(&self) -> usize {
        self.realization.state_dim()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Realization `x̂(t+1) = A(I−KC) x̂ + [B  AK] [u; y]`, `ŷ* = C x̂`.
pub fn build_kalman_predictor(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> Result<KalmanPredictor> {
    let n = a.nrows();
    let m = b.ncols();
    let p = c.nrows();
    expect_shape("predictor A", a, n, n)?;
    expect_shape("predictor B", b, n, m)?;
    expect_shape("predictor C", c, p, n)?;
    expect_shape("predictor K", k, n, p)?;

    let ak = a * k;
    let a_kf = a - &ak * c;
    let mut b_kf = DMatrix::zeros(n, m + p);
    b_kf.view_mut((0, 0), (n, m)).copy_from(b);
    b_kf.view_mut((0, m), (n, p)).copy_from(&ak);
    let realization = StateSpace::strictly_proper(a_kf, b_kf, c.clone())?;
    let eigenvalues = linalg::eigenvalues(&realization.a)?;
    Ok(KalmanPredictor {
        gain: k.clone(),
        riccati_solution: None,
        realization,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    /// Scalar Riccati map iterated to a fixed point; independent of the
    /// doubling path.
    fn scalar_fixed_point(a: f64, c: f64, q: f64, r: f64) -> f64 {
        let mut p = q;
        for _ in 0..100_000 {
            let next = a * a * p - (a * p * c).powi(2) / (c * c * p + r) + q;
            if (next - p).abs() < 1e-15 {
                return next;
            }
            p = next;
        }
        p
    }

    #[test]
    fn deadbeat_scalar() {
        let p = solve_dare(&scalar(0.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_matches_fixed_point_oracle() {
        let oracle = scalar_fixed_point(0.9, 1.0, 1.0, 1.0);
        // closed form root of P² = 0.81 P + 1
        let closed_form = (0.81 + (0.81f64 * 0.81 + 4.0).sqrt()) / 2.0;
        assert!((oracle - closed_form).abs() < 1e-12);
        assert!((oracle - 1.4839).abs() < 1e-4);
        let p = solve_dare(&scalar(0.9), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((p[(0, 0)] - oracle).abs() < 1e-12);

        let k = kalman_gain(&p, &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((k[(0, 0)] - oracle / (oracle + 1.0)).abs() < 1e-12);
        assert!((k[(0, 0)] - 0.5974).abs() < 1e-4);

        let kf = build_kalman_predictor(&scalar(0.9), &scalar(1.0), &scalar(1.0), &k).unwrap();
        assert!((kf.eigenvalues[0].re - 0.3623).abs() < 1e-4);
        assert!((kf.eigenvalues[0].re - 0.9 * (1.0 - k[(0, 0)])).abs() < 1e-14);
    }

    #[test]
    fn noiseless_process_gives_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.7]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let p = solve_dare(&a, &c, &DMatrix::zeros(2, 2), &scalar(1.0)).unwrap();
        assert_eq!(p.amax(), 0.0);
    }

    #[test]
    fn gain_edge_cases() {
        let k = kalman_gain(&DMatrix::zeros(2, 2), &DMatrix::identity(1, 2), &scalar(1.0)).unwrap();
        assert_eq!(k.amax(), 0.0);
        let k = kalman_gain(&DMatrix::identity(2, 2), &DMatrix::zeros(1, 2), &scalar(1.0)).unwrap();
        assert_eq!(k.amax(), 0.0);
        assert!(matches!(
            kalman_gain(&DMatrix::zeros(1, 1), &scalar(1.0), &scalar(0.0)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn predictor_structure() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let c = DMatrix::identity(2, 2);
        let kf = build_kalman_predictor(&a, &b, &c, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(kf.realization.a, a);
        assert_eq!(kf.realization.b.columns(0, 1), b.columns(0, 1));
        assert_eq!(kf.realization.b.columns(1, 2).amax(), 0.0);
        // K C = I: deadbeat
        let kf = build_kalman_predictor(&a, &b, &c, &DMatrix::identity(2, 2)).unwrap();
        assert!(kf.realization.a.amax() < 1e-15);
    }

    #[test]
    fn random_systems_residual_and_stability() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let n = 1 + trial % 20;
            let p = 1 + trial % 3;
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let rho = linalg::spectral_radius(&a).unwrap();
            a *= rng.random_range(0.2..1.1) / rho;
            let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q = &g * g.transpose() * 0.5;
            let r = DMatrix::<f64>::identity(p, p) * rng.random_range(0.1..2.0);
            let sol = solve_dare(&a, &c, &q, &r).unwrap();
            let resid = spectral_norm(&dare_residual(&a, &c, &q, &r, &sol).unwrap());
            assert!(resid <= 1e-9 * (1.0 + spectral_norm(&sol)), "trial {trial}");
            let k = kalman_gain(&sol, &c, &r).unwrap();
            let kf = build_kalman_predictor(&a, &DMatrix::zeros(n, 1), &c, &k).unwrap();
            assert!(kf.spectral_radius() < 1.0);
        }
    }
}
