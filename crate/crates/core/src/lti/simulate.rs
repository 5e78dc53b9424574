use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, expect_shape};
use crate::lti::{solve_lyapunov, NoiseSpec, RowStates, StateSpace, Trajectory};
use crate::rng::{stream, GaussianVec, NoiseSource};

/// Input signal fed to [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Excitation {
    Zero,
    /// i.i.d. zero-mean Gaussian with the given covariance.
    WhiteNoise(DMatrix<f64>),
    /// Explicit input, one row per recorded step. Burn-in steps see zero input.
    Sequence(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Zero,
    Given(DVector<f64>),
    /// Draw `x(0) ~ N(0, Σ)` from the stationary covariance of the system
    /// under the configured noise and excitation.
    SteadyState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub initial: InitialState,
    /// Steps simulated and discarded before recording starts.
    pub burn_in: usize,
    pub record_states: bool,
}

pub const DEFAULT_BURN_IN: usize = 500;

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            initial: InitialState::Zero,
            burn_in: DEFAULT_BURN_IN,
            record_states: false,
        }
    }
}

impl SimOptions {
    pub fn from_state(x0: DVector<f64>) -> Self {
        SimOptions {
            initial: InitialState::Given(x0),
            burn_in: 0,
            record_states: false,
        }
    }
}

/// Simulates `x(t+1) = A x + B u + w`, `y = C x + D u + v` for `horizon`
/// recorded steps. Identical seeds give bit-identical trajectories.
pub fn simulate(
    sys: &StateSpace,
    noise: &NoiseSpec,
    input: &Excitation,
    horizon: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    sys.validate()?;
    noise.check_against(sys)?;
    let (n, m, p) = (sys.state_dim(), sys.input_dim(), sys.output_dim());

    let mut excitation = match input {
        Excitation::Zero => None,
        Excitation::WhiteNoise(cov) => {
            expect_shape("excitation covariance", cov, m, m)?;
            Some(GaussianVec::new(cov, stream(seed, NoiseSource::Excitation)))
        }
        Excitation::Sequence(seq) => {
            if seq.ncols() != m || seq.nrows() < horizon {
                return Err(Error::dims(
                    "input sequence",
                    format!("at least {horizon}x{m}"),
                    linalg::shape(seq),
                ));
            }
            None
        }
    };

    let mut x = match &opts.initial {
        InitialState::Zero => DVector::zeros(n),
        InitialState::Given(x0) => {
            if x0.len() != n {
                return Err(Error::dims("initial state", n, x0.len()));
            }
            x0.clone()
        }
        InitialState::SteadyState => {
            let mut forcing = noise.q.clone();
            if let Excitation::WhiteNoise(cov) = input {
                forcing += &sys.b * cov * sys.b.transpose();
            }
            let sigma = solve_lyapunov(&sys.a, &forcing)?;
            GaussianVec::new(&sigma, stream(seed, NoiseSource::InitialState)).sample()
        }
    };

    let mut process = GaussianVec::new(&noise.q, stream(seed, NoiseSource::Process));
    let mut measurement = GaussianVec::new(&noise.r, stream(seed, NoiseSource::Measurement));

    let mut inputs = DMatrix::zeros(horizon, m);
    let mut outputs = DMatrix::zeros(horizon, p);
    let mut states = opts.record_states.then(|| DMatrix::zeros(horizon, n));

    let mut u = DVector::zeros(m);
    let mut y = DVector::zeros(p);
    let mut w = DVector::zeros(n);
    let mut v = DVector::zeros(p);
    let mut next = DVector::zeros(n);

    for step in 0..(opts.burn_in + horizon) {
        let recorded = step.checked_sub(opts.burn_in);
        match (input, excitation.as_mut(), recorded) {
            (Excitation::Sequence(seq), _, Some(t)) => u.copy_from(&seq.row(t).transpose()),
            (_, Some(gen), _) => gen.sample_into(&mut u),
            _ => u.fill(0.0),
        }
        measurement.sample_into(&mut v);
        y.gemv(1.0, &sys.c, &x, 0.0);
        y.gemv(1.0, &sys.d, &u, 1.0);
        y += &v;

        if let Some(t) = recorded {
            inputs.row_mut(t).copy_from(&u.transpose());
            outputs.row_mut(t).copy_from(&y.transpose());
            if let Some(s) = states.as_mut() {
                s.row_mut(t).copy_from(&x.transpose());
            }
        }

        process.sample_into(&mut w);
        next.gemv(1.0, &sys.a, &x, 0.0);
        next.gemv(1.0, &sys.b, &u, 1.0);
        next += &w;
        std::mem::swap(&mut x, &mut next);
        if !linalg::vec_is_finite(&x) || !linalg::vec_is_finite(&y) {
            return Err(Error::NonFinite { step });
        }
    }

    Ok(Trajectory {
        inputs,
        outputs,
        states: states.map(RowStates),
        seed,
    })
}
