//! Online OBF-ARX predictor.
//!
//! Each step the caller first asks for a prediction `y̌(t) = L(t) x̌(t)`, then
//! feeds the realized `u(t), y(t)`. The regressor `x̌(t)` is the basis bank's
//! state after consuming `u(1:t−1), y(1:t−1)`, so a prediction never sees the
//! sample it predicts.

mod asymptotic;
mod run;
mod solve;

pub use asymptotic::{asymptotic_coefficients, bias_sweep, AsymptoticSolution, EXCITATION_FLOOR};
pub use run::{run_predictor, RunOptions, RunOutput};
pub use solve::{batch_solve, BatchSolver};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gobf::{balanced_allpass, gobf_bank, GobfBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// Re-solve the normal equations from the running second moment.
    Batch,
    /// Rank-one recursive least squares.
    Recursive,
}

pub const DEFAULT_REGULARIZATION: f64 = 1e-8;
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub poles: Vec<Complex64>,
    /// Number of inner-function copies in the chain.
    pub q: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// RLS starts from `P₀ = I / regularization`.
    pub regularization: f64,
    pub condition_cap: f64,
    pub update_mode: UpdateMode,
    /// Batch mode re-solves every `solve_every` steps.
    pub solve_every: usize,
}

impl PredictorConfig {
    pub fn new(poles: Vec<Complex64>, q: usize, input_dim: usize, output_dim: usize) -> Self {
        PredictorConfig {
            poles,
            q,
            input_dim,
            output_dim,
            regularization: DEFAULT_REGULARIZATION,
            condition_cap: DEFAULT_CONDITION_CAP,
            update_mode: UpdateMode::Batch,
            solve_every: 1,
        }
    }

    /// Laguerre bank with a single real pole.
    pub fn laguerre(pole: f64, q: usize, input_dim: usize, output_dim: usize) -> Self {
        Self::new(vec![Complex64::new(pole, 0.0)], q, input_dim, output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 {
            return Err(Error::InvalidArgument("output dimension must be positive".into()));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::InvalidArgument(
                "regularization must be finite and nonnegative".into(),
            ));
        }
        if !(self.condition_cap >= 1.0) {
            return Err(Error::InvalidArgument("condition cap must be at least 1".into()));
        }
        if self.solve_every == 0 {
            return Err(Error::InvalidArgument("solve_every must be positive".into()));
        }
        if self.update_mode == UpdateMode::Recursive && self.regularization == 0.0 {
            return Err(Error::InvalidArgument(
                "recursive mode needs a positive regularization".into(),
            ));
        }
        Ok(())
    }

    pub fn bank(&self) -> Result<GobfBank> {
        let inner = balanced_allpass(&self.poles)?;
        gobf_bank(&inner, self.q, self.input_dim + self.output_dim)
    }
}

/// Mutable predictor state. Not shared between threads while in use.
#[derive(Debug, Clone)]
pub struct PredictorState {
    config: PredictorConfig,
    bank_a: DMatrix<f64>,
    bank_b: DMatrix<f64>,
    /// Bank state; the bank output map is the identity so this is `x̌`.
    phi: DVector<f64>,
    next_phi: DVector<f64>,
    /// Running second moment of `[y; x̌]`.
    w: DMatrix<f64>,
    l: DMatrix<f64>,
    rls_p: Option<DMatrix<f64>>,
    t: u64,
    z: DVector<f64>,
    uy: DVector<f64>,
    px: DVector<f64>,
    resid: DVector<f64>,
    solver: BatchSolver,
}

pub fn init_predictor(config: &PredictorConfig) -> Result<PredictorState> {
    config.validate()?;
    let bank = config.bank()?;
    Ok(PredictorState::from_bank(config.clone(), &bank))
}

impl PredictorState {
    fn from_bank(config: PredictorConfig, bank: &GobfBank) -> Self {
        let nx = bank.regressor_dim();
        let (m, p) = (config.input_dim, config.output_dim);
        let rls_p = (config.update_mode == UpdateMode::Recursive)
            .then(|| DMatrix::identity(nx, nx) / config.regularization);
        PredictorState {
            bank_a: bank.realization.a.clone(),
            bank_b: bank.realization.b.clone(),
            phi: DVector::zeros(nx),
            next_phi: DVector::zeros(nx),
            w: DMatrix::zeros(p + nx, p + nx),
            l: DMatrix::zeros(p, nx),
            rls_p,
            t: 0,
            z: DVector::zeros(p + nx),
            uy: DVector::zeros(m + p),
            px: DVector::zeros(nx),
            resid: DVector::zeros(p),
            solver: BatchSolver::new(p, nx),
            config,
        }
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    /// Regressor dimension `ň = q̌ (m + p)`.
    pub fn regressor_dim(&self) -> usize {
        self.phi.len()
    }

    pub fn regressor(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `y̌(t) = L(t) x̌(t)`.
    pub fn predict(&self) -> DVector<f64> {
        &self.l * &self.phi
    }

    pub fn predict_into(&self, out: &mut DVector<f64>) {
        out.gemv(1.0, &self.l, &self.phi, 0.0);
    }

    /// Consumes `u(t)`, `y(t)`.
    pub fn update(&mut self, u: &[f64], y: &[f64]) -> Result<()> {
        let (m, p) = (self.config.input_dim, self.config.output_dim);
        if u.len() != m {
            return Err(Error::dims("predictor input u", m, u.len()));
        }
        if y.len() != p {
            return Err(Error::dims("predictor output y", p, y.len()));
        }
        if !u.iter().chain(y).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: self.t as usize });
        }
        let nx = self.phi.len();

        self.z.rows_mut(0, p).copy_from_slice(y);
        self.z.rows_mut(p, nx).copy_from(&self.phi);
        let t = self.t as f64;
        self.w *= t / (t + 1.0);
        self.w.ger(1.0 / (t + 1.0), &self.z, &self.z, 1.0);

        match self.config.update_mode {
            UpdateMode::Batch => {
                if (self.t + 1).is_multiple_of(self.config.solve_every as u64) {
                    self.solver
                        .solve(&self.w, self.config.condition_cap, &mut self.l);
                }
            }
            UpdateMode::Recursive => self.rls_step(y),
        }

        self.uy.rows_mut(0, m).copy_from_slice(u);
        self.uy.rows_mut(m, p).copy_from_slice(y);
        self.next_phi.gemv(1.0, &self.bank_a, &self.phi, 0.0);
        self.next_phi.gemv(1.0, &self.bank_b, &self.uy, 1.0);
        std::mem::swap(&mut self.phi, &mut self.next_phi);
        self.t += 1;
        Ok(())
    }

    fn rls_step(&mut self, y: &[f64]) {
        let Some(p_mat) = self.rls_p.as_mut() else {
            return;
        };
        let x = &self.phi;
        self.px.gemv(1.0, p_mat, x, 0.0);
        let denom = 1.0 + x.dot(&self.px);
        // resid = y − L x
        self.resid.copy_from_slice(y);
        self.resid.gemv(-1.0, &self.l, x, 1.0);
        // P ← P − P x xᵀ P / (1 + xᵀ P x); the update stays exactly symmetric
        p_mat.ger(-1.0 / denom, &self.px, &self.px, 1.0);
        // L ← L + resid (P_new x)ᵀ = L + resid (P x)ᵀ / denom
        self.l.ger(1.0 / denom, &self.resid, &self.px, 1.0);
    }
}
