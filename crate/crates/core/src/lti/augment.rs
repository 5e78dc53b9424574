//! Closed-loop and fully augmented systems used to compute exact steady-state
//! second moments of the predictor's regressors.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gobf::GobfBank;
use crate::linalg::{self, block_diag, symmetrize};
use crate::lti::{solve_lyapunov, KalmanPredictor, NoiseSpec, StateSpace};
use crate::rng::{fill_standard_normal, stream, GaussianVec, NoiseSource};

/// A state-space system with its noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySystem {
    pub system: StateSpace,
    pub noise: NoiseSpec,
}

impl NoisySystem {
    pub fn new(system: StateSpace, noise: NoiseSpec) -> Result<Self> {
        noise.check_against(&system)?;
        Ok(NoisySystem { system, noise })
    }

    /// Controller with no state emitting `u ~ N(0, cov)` regardless of the
    /// `measurements`-dimensional plant output.
    pub fn white_noise_controller(measurements: usize, cov: DMatrix<f64>) -> Result<Self> {
        let outputs = cov.nrows();
        linalg::expect_shape("excitation covariance", &cov, outputs, outputs)?;
        let system = StateSpace {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, measurements),
            c: DMatrix::zeros(outputs, 0),
            d: DMatrix::zeros(outputs, measurements),
        };
        let noise = NoiseSpec::new(DMatrix::zeros(0, 0), cov)?;
        Ok(NoisySystem { system, noise })
    }
}

/// Block sizes of `x̃ = [x; ψ; u; y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopLayout {
    pub plant_states: usize,
    pub controller_states: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl LoopLayout {
    pub fn dim(&self) -> usize {
        self.plant_states + self.controller_states + self.inputs + self.outputs
    }

    pub fn x(&self) -> Range<usize> {
        0..self.plant_states
    }

    pub fn psi(&self) -> Range<usize> {
        let s = self.plant_states;
        s..s + self.controller_states
    }

    pub fn u(&self) -> Range<usize> {
        let s = self.plant_states + self.controller_states;
        s..s + self.inputs
    }

    pub fn y(&self) -> Range<usize> {
        let s = self.plant_states + self.controller_states + self.inputs;
        s..s + self.outputs
    }

    /// Width of the raw noise vector `[w; v; w_u; v_u]`.
    pub fn noise_dim(&self) -> usize {
        self.dim()
    }
}

/// Plant in feedback with a stabilizing controller, written as one
/// autonomous system driven by white noise. Output is `ỹ = [u; y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    /// `Ã` and `C̃`; no exogenous input.
    pub system: StateSpace,
    /// `Q̃ = G blkdiag(Q, R, Q_u, R_u) Gᵀ` and `R̃ = 0`.
    pub noise: NoiseSpec,
    /// `G`, mapping `[w(t); v(t+1); w_u(t); v_u(t+1)]` into the state.
    pub noise_map: DMatrix<f64>,
    pub source_cov: DMatrix<f64>,
    pub layout: LoopLayout,
    /// Plant matrices kept for the Kalman oracle.
    pub plant: NoisySystem,
}

pub fn close_loop(plant: &NoisySystem, controller: &NoisySystem) -> Result<ClosedLoop> {
    let (ps, cs) = (&plant.system, &controller.system);
    ps.validate()?;
    cs.validate()?;
    plant.noise.check_against(ps)?;
    controller.noise.check_against(cs)?;
    let (n, m, p) = (ps.state_dim(), ps.input_dim(), ps.output_dim());
    let nu = cs.state_dim();
    if cs.input_dim() != p {
        return Err(Error::dims("controller input", p, cs.input_dim()));
    }
    if cs.output_dim() != m {
        return Err(Error::dims("controller output", m, cs.output_dim()));
    }
    if !ps.has_zero_feedthrough() || !cs.has_zero_feedthrough() {
        return Err(Error::InvalidArgument(
            "plant and controller must have zero feedthrough".into(),
        ));
    }

    let layout = LoopLayout {
        plant_states: n,
        controller_states: nu,
        inputs: m,
        outputs: p,
    };
    let nt = layout.dim();
    let (rx, rpsi, ru, ry) = (layout.x(), layout.psi(), layout.u(), layout.y());

    let mut a = DMatrix::zeros(nt, nt);
    a.view_mut((rx.start, rx.start), (n, n)).copy_from(&ps.a);
    a.view_mut((rx.start, ru.start), (n, m)).copy_from(&ps.b);
    a.view_mut((rpsi.start, rpsi.start), (nu, nu)).copy_from(&cs.a);
    a.view_mut((rpsi.start, ry.start), (nu, p)).copy_from(&cs.b);
    a.view_mut((ru.start, rpsi.start), (m, nu)).copy_from(&(&cs.c * &cs.a));
    a.view_mut((ru.start, ry.start), (m, p)).copy_from(&(&cs.c * &cs.b));
    a.view_mut((ry.start, rx.start), (p, n)).copy_from(&(&ps.c * &ps.a));
    a.view_mut((ry.start, ru.start), (p, m)).copy_from(&(&ps.c * &ps.b));

    let mut c = DMatrix::zeros(m + p, nt);
    c.view_mut((0, ru.start), (m, m)).fill_with_identity();
    c.view_mut((m, ry.start), (p, p)).fill_with_identity();

    // noise columns: [w (n) | v (p) | w_u (n_u) | v_u (m)]
    let (cw, cv, cwu, cvu) = (0, n, n + p, n + p + nu);
    let mut g = DMatrix::zeros(nt, nt);
    g.view_mut((rx.start, cw), (n, n)).fill_with_identity();
    g.view_mut((rpsi.start, cwu), (nu, nu)).fill_with_identity();
    g.view_mut((ru.start, cwu), (m, nu)).copy_from(&cs.c);
    g.view_mut((ru.start, cvu), (m, m)).fill_with_identity();
    g.view_mut((ry.start, cw), (p, n)).copy_from(&ps.c);
    g.view_mut((ry.start, cv), (p, p)).fill_with_identity();

    let source_cov = block_diag(&[
        &plant.noise.q,
        &plant.noise.r,
        &controller.noise.q,
        &controller.noise.r,
    ]);
    let mut qt = &g * &source_cov * g.transpose();
    symmetrize(&mut qt);

    Ok(ClosedLoop {
        system: StateSpace::new(a, DMatrix::zeros(nt, 0), c, DMatrix::zeros(m + p, 0))?,
        noise: NoiseSpec {
            q: qt,
            r: DMatrix::zeros(m + p, m + p),
        },
        noise_map: g,
        source_cov,
        layout,
        plant: plant.clone(),
    })
}

impl ClosedLoop {
    pub fn spectral_radius(&self) -> Result<f64> {
        self.system.spectral_radius()
    }

    /// Steady-state covariance of `x̃`.
    pub fn stationary_covariance(&self) -> Result<DMatrix<f64>> {
        self.system.ensure_stable("closed loop")?;
        solve_lyapunov(&self.system.a, &self.noise.q)
    }

    /// Factor `F` with `F Fᵀ = Q̃`, one column group per raw noise source in
    /// the order `[w; v; w_u; v_u]`, plus the source each column group draws
    /// from.
    fn noise_factors(&self) -> Vec<(Range<usize>, DMatrix<f64>, NoiseSource)> {
        let l = self.layout;
        let (n, p, nu, m) = (l.plant_states, l.outputs, l.controller_states, l.inputs);
        let spans = [
            (0..n, NoiseSource::Process),
            (n..n + p, NoiseSource::Measurement),
            (n + p..n + p + nu, NoiseSource::ControllerProcess),
            (n + p + nu..n + p + nu + m, NoiseSource::ControllerOutput),
        ];
        spans
            .into_iter()
            .filter(|(r, _)| !r.is_empty())
            .map(|(r, src)| {
                let block = self
                    .source_cov
                    .view((r.start, r.start), (r.len(), r.len()))
                    .into_owned();
                let g = self.noise_map.columns(r.start, r.len()) * linalg::psd_factor(&block);
                (r, g, src)
            })
            .collect()
    }
}

/// Block sizes of `X = [x̃; x̂; φ]` and `Y = [y; x̂; x̌]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FullLayout {
    pub closed: LoopLayout,
    pub kf_states: usize,
    pub bank_states: usize,
}

impl FullLayout {
    pub fn state_dim(&self) -> usize {
        self.closed.dim() + self.kf_states + self.bank_states
    }

    pub fn output_dim(&self) -> usize {
        self.closed.outputs + self.kf_states + self.bank_states
    }

    /// Rows of `y` in `Y`.
    pub fn y(&self) -> Range<usize> {
        0..self.closed.outputs
    }

    /// Rows of `x̂` in `Y`.
    pub fn xhat(&self) -> Range<usize> {
        let s = self.closed.outputs;
        s..s + self.kf_states
    }

    /// Rows of `x̌` in `Y`.
    pub fn xcheck(&self) -> Range<usize> {
        let s = self.closed.outputs + self.kf_states;
        s..s + self.bank_states
    }
}

/// Closed loop, Kalman predictor and basis bank in one block lower-triangular
/// system with output `Y = [y; x̂; x̌]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullAugmented {
    pub system: StateSpace,
    pub state_noise: DMatrix<f64>,
    pub layout: FullLayout,
}

pub fn augment_full(
    closed: &ClosedLoop,
    kf: &KalmanPredictor,
    bank: &GobfBank,
) -> Result<FullAugmented> {
    let l = closed.layout;
    let (m, p) = (l.inputs, l.outputs);
    let nt = l.dim();
    let n = kf.state_dim();
    if kf.realization.input_dim() != m + p {
        return Err(Error::dims("Kalman predictor input", m + p, kf.realization.input_dim()));
    }
    if bank.input_dim != m + p {
        return Err(Error::dims("basis bank input", m + p, bank.input_dim));
    }
    let nb = bank.regressor_dim();
    let layout = FullLayout {
        closed: l,
        kf_states: n,
        bank_states: nb,
    };
    let total = layout.state_dim();
    let uy = l.u().start; // u and y are adjacent in x̃

    let mut a = DMatrix::zeros(total, total);
    a.view_mut((0, 0), (nt, nt)).copy_from(&closed.system.a);
    a.view_mut((nt, uy), (n, m + p)).copy_from(&kf.realization.b);
    a.view_mut((nt, nt), (n, n)).copy_from(&kf.realization.a);
    let ob = nt + n;
    a.view_mut((ob, uy), (nb, m + p)).copy_from(&bank.realization.b);
    a.view_mut((ob, ob), (nb, nb)).copy_from(&bank.realization.a);

    let mut c = DMatrix::zeros(layout.output_dim(), total);
    c.view_mut((0, l.y().start), (p, p)).fill_with_identity();
    c.view_mut((p, nt), (n, n)).fill_with_identity();
    c.view_mut((p + n, ob), (nb, nb)).copy_from(&bank.realization.c);

    let mut q = DMatrix::zeros(total, total);
    q.view_mut((0, 0), (nt, nt)).copy_from(&closed.noise.q);

    let system = StateSpace::new(a, DMatrix::zeros(total, 0), c, DMatrix::zeros(layout.output_dim(), 0))?;
    Ok(FullAugmented {
        system,
        state_noise: q,
        layout,
    })
}

impl FullAugmented {
    /// Steady-state covariance of `X`.
    pub fn state_covariance(&self) -> Result<DMatrix<f64>> {
        self.system.ensure_stable("augmented system")?;
        solve_lyapunov(&self.system.a, &self.state_noise)
    }

    /// Steady-state covariance of `Y = [y; x̂; x̌]`.
    pub fn output_covariance(&self) -> Result<DMatrix<f64>> {
        let sigma = self.state_covariance()?;
        let mut cov = &self.system.c * sigma * self.system.c.transpose();
        symmetrize(&mut cov);
        Ok(cov)
    }
}

/// Simulator of the closed loop together with its Kalman predictor, the
/// `[x̃; x̂]` part of the augmented system. Allocation-free per step.
#[derive(Debug, Clone)]
pub struct LoopSimulator {
    transition: DMatrix<f64>,
    groups: Vec<(DMatrix<f64>, ChaCha8Rng)>,
    state: DVector<f64>,
    next: DVector<f64>,
    noise: DVector<f64>,
    layout: LoopLayout,
    kf_states: usize,
}

impl LoopSimulator {
    /// Starts from a draw of the joint stationary distribution of `[x̃; x̂]`.
    pub fn new(closed: &ClosedLoop, kf: &KalmanPredictor, seed: u64) -> Result<Self> {
        let l = closed.layout;
        let nt = l.dim();
        let n = kf.state_dim();
        if kf.realization.input_dim() != l.inputs + l.outputs {
            return Err(Error::dims(
                "Kalman predictor input",
                l.inputs + l.outputs,
                kf.realization.input_dim(),
            ));
        }
        let total = nt + n;
        let mut a = DMatrix::zeros(total, total);
        a.view_mut((0, 0), (nt, nt)).copy_from(&closed.system.a);
        a.view_mut((nt, l.u().start), (n, l.inputs + l.outputs))
            .copy_from(&kf.realization.b);
        a.view_mut((nt, nt), (n, n)).copy_from(&kf.realization.a);
        let rho = linalg::spectral_radius(&a)?;
        if rho >= 1.0 {
            return Err(Error::Unstable {
                context: "closed loop with Kalman predictor",
                spectral_radius: rho,
            });
        }

        let mut q = DMatrix::zeros(total, total);
        q.view_mut((0, 0), (nt, nt)).copy_from(&closed.noise.q);
        let sigma = solve_lyapunov(&a, &q)?;
        let state = GaussianVec::new(&sigma, stream(seed, NoiseSource::InitialState)).sample();

        let groups = closed
            .noise_factors()
            .into_iter()
            .map(|(r, factor, src)| {
                let mut padded = DMatrix::zeros(total, r.len());
                padded.view_mut((0, 0), (nt, r.len())).copy_from(&factor);
                (padded, stream(seed, src))
            })
            .collect::<Vec<_>>();
        let width = groups.iter().map(|(f, _)| f.ncols()).max().unwrap_or(0);

        Ok(LoopSimulator {
            transition: a,
            groups,
            state,
            next: DVector::zeros(total),
            noise: DVector::zeros(width),
            layout: l,
            kf_states: n,
        })
    }

    pub fn u(&self) -> nalgebra::DVectorView<'_, f64> {
        self.state.rows(self.layout.u().start, self.layout.inputs)
    }

    pub fn y(&self) -> nalgebra::DVectorView<'_, f64> {
        self.state.rows(self.layout.y().start, self.layout.outputs)
    }

    /// `[u; y]` as one contiguous view.
    pub fn uy(&self) -> nalgebra::DVectorView<'_, f64> {
        self.state
            .rows(self.layout.u().start, self.layout.inputs + self.layout.outputs)
    }

    pub fn xhat(&self) -> nalgebra::DVectorView<'_, f64> {
        self.state.rows(self.layout.dim(), self.kf_states)
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    /// Advances one step; `step` is only used for error reporting.
    pub fn advance(&mut self, step: usize) -> Result<()> {
        self.next.gemv(1.0, &self.transition, &self.state, 0.0);
        for (factor, rng) in &mut self.groups {
            let k = factor.ncols();
            fill_standard_normal(rng, &mut self.noise.as_mut_slice()[..k]);
            self.next.gemv(1.0, factor, &self.noise.rows(0, k), 1.0);
        }
        std::mem::swap(&mut self.state, &mut self.next);
        if !linalg::vec_is_finite(&self.state) {
            return Err(Error::NonFinite { step });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gobf::{balanced_allpass, gobf_bank};
    use num_complex::Complex64;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn scalar_plant(a: f64, q: f64, r: f64) -> NoisySystem {
        NoisySystem::new(
            StateSpace::strictly_proper(scalar(a), scalar(1.0), scalar(1.0)).unwrap(),
            NoiseSpec::new(scalar(q), scalar(r)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn white_noise_loop_structure() {
        let plant = scalar_plant(0.8, 1.0, 0.5);
        let ctrl = NoisySystem::white_noise_controller(1, scalar(1.0)).unwrap();
        let cl = close_loop(&plant, &ctrl).unwrap();
        assert_eq!(cl.layout.dim(), 3);
        // u row of Ã is zero: u(t+1) is fresh noise
        assert_eq!(cl.system.a.row(cl.layout.u().start).amax(), 0.0);
        let sigma = cl.stationary_covariance().unwrap();
        let (iu, iy) = (cl.layout.u().start, cl.layout.y().start);
        assert!((sigma[(iu, iu)] - 1.0).abs() < 1e-12);
        // y(t) depends on u(t-1), never on u(t)
        assert!(sigma[(iu, iy)].abs() < 1e-12);
    }

    #[test]
    fn proportional_controller_eigenvalues() {
        // controller with one state: ψ' = 0.2ψ + y, u = -0.3ψ
        let plant = scalar_plant(0.9, 1.0, 1.0);
        let ctrl = NoisySystem::new(
            StateSpace::strictly_proper(scalar(0.2), scalar(1.0), scalar(-0.3)).unwrap(),
            NoiseSpec::new(scalar(0.1), scalar(0.2)).unwrap(),
        )
        .unwrap();
        let cl = close_loop(&plant, &ctrl).unwrap();
        #[rustfmt::skip]
        let hand = DMatrix::from_row_slice(4, 4, &[
            0.9, 0.0, 1.0, 0.0,
            0.0, 0.2, 0.0, 1.0,
            0.0, -0.06, 0.0, -0.3,
            0.9, 0.0, 1.0, 0.0,
        ]);
        assert!((&cl.system.a - &hand).amax() < 1e-15);
        let mut got: Vec<f64> = linalg::eigenvalues(&cl.system.a).unwrap().iter().map(|z| z.norm()).collect();
        let mut want: Vec<f64> = linalg::eigenvalues(&hand).unwrap().iter().map(|z| z.norm()).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
        assert!(cl.spectral_radius().unwrap() < 1.0);
    }

    #[test]
    fn zero_noise_gives_zero_steady_state() {
        let plant = NoisySystem::new(
            StateSpace::strictly_proper(scalar(0.5), scalar(1.0), scalar(1.0)).unwrap(),
            NoiseSpec::zeros(1, 1),
        )
        .unwrap();
        let ctrl = NoisySystem::white_noise_controller(1, scalar(0.0)).unwrap();
        let cl = close_loop(&plant, &ctrl).unwrap();
        assert_eq!(cl.stationary_covariance().unwrap().amax(), 0.0);
    }

    #[test]
    fn controller_dimension_mismatch() {
        let plant = scalar_plant(0.5, 1.0, 1.0);
        let ctrl = NoisySystem::white_noise_controller(2, DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(close_loop(&plant, &ctrl), Err(Error::DimensionMismatch { .. })));
    }

    fn example_full(q: usize) -> FullAugmented {
        let plant = scalar_plant(0.9, 1.0, 1.0);
        let ctrl = NoisySystem::white_noise_controller(1, scalar(1.0)).unwrap();
        let cl = close_loop(&plant, &ctrl).unwrap();
        let kf = KalmanPredictor::steady_state(&plant.system, &plant.noise).unwrap();
        let inner = balanced_allpass(&[Complex64::new(0.3, 0.0)]).unwrap();
        let bank = gobf_bank(&inner, q, 2).unwrap();
        augment_full(&cl, &kf, &bank).unwrap()
    }

    #[test]
    fn empty_bank_output_is_y_and_xhat() {
        let full = example_full(0);
        assert_eq!(full.layout.output_dim(), 2);
        assert_eq!(full.layout.xcheck().len(), 0);
    }

    #[test]
    fn full_system_is_block_lower_triangular() {
        let full = example_full(3);
        let a = &full.system.a;
        let (nt, n, nb) = (3, 1, 6);
        assert_eq!(a.nrows(), nt + n + nb);
        assert_eq!(a.view((0, nt), (nt, n + nb)).amax(), 0.0);
        assert_eq!(a.view((nt, nt + n), (n, nb)).amax(), 0.0);
        assert_eq!(a.view((nt + n, nt), (nb, n)).amax(), 0.0);
        assert!((a[(nt, nt)] - 0.9 * (1.0 - 0.5974)).abs() < 1e-3);
    }

    #[test]
    fn output_covariance_matches_monte_carlo() {
        let plant = scalar_plant(0.9, 1.0, 1.0);
        let ctrl = NoisySystem::white_noise_controller(1, scalar(1.0)).unwrap();
        let cl = close_loop(&plant, &ctrl).unwrap();
        let kf = KalmanPredictor::steady_state(&plant.system, &plant.noise).unwrap();
        let inner = balanced_allpass(&[Complex64::new(0.3, 0.0)]).unwrap();
        let bank = gobf_bank(&inner, 1, 2).unwrap();
        let full = augment_full(&cl, &kf, &bank).unwrap();
        let exact = full.output_covariance().unwrap();

        let mut sim = LoopSimulator::new(&cl, &kf, 5).unwrap();
        let steps = 1_000_000;
        let (mut syy, mut sxx) = (0.0, 0.0);
        for t in 0..steps {
            let y = sim.y()[0];
            let xh = sim.xhat()[0];
            syy += y * y;
            sxx += xh * xh;
            sim.advance(t).unwrap();
        }
        let (syy, sxx) = (syy / steps as f64, sxx / steps as f64);
        assert!((syy / exact[(0, 0)] - 1.0).abs() < 0.02, "{syy} vs {}", exact[(0, 0)]);
        assert!((sxx / exact[(1, 1)] - 1.0).abs() < 0.02);
    }
}
