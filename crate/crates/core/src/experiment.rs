//! One seeded experiment: exact asymptotic bias, the bound fitted to the
//! bias curve, and the empirical regret of an online run.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gobf::balanced_allpass;
use crate::lti::{close_loop, ClosedLoop, KalmanPredictor, NoisySystem};
use crate::obf_arx::{bias_sweep, run_predictor, PredictorConfig, RunOptions};
use crate::regret::{
    bias_bound_from_tau, checkpoints, fit_alpha, fit_convergence_rate, regret_decomposition, tau,
    RegretSeries, DEFAULT_DELTA,
};

/// Plant in closed loop with a white-noise excitation controller, plus its
/// steady-state Kalman predictor.
#[derive(Debug, Clone)]
pub struct Setup {
    pub plant: NoisySystem,
    pub closed: ClosedLoop,
    pub kf: KalmanPredictor,
    /// Plant parameter worth reporting (the diffusion constant).
    pub alpha: Option<f64>,
}

impl Setup {
    pub fn white_noise(plant: NoisySystem, excitation: DMatrix<f64>, alpha: Option<f64>) -> Result<Self> {
        let ctrl = NoisySystem::white_noise_controller(plant.system.output_dim(), excitation)?;
        let closed = close_loop(&plant, &ctrl)?;
        let kf = KalmanPredictor::steady_state(&plant.system, &plant.noise)?;
        Ok(Setup { plant, closed, kf, alpha })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub horizon: u64,
    pub delta: f64,
    /// Also track the decomposition `R_N ≤ 2A_N + 2B_N` through `L*`.
    pub decomposition: bool,
    /// Steps at which `R_N` is recorded; the logarithmic grid when absent.
    pub checkpoints: Option<Vec<u64>>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            horizon: 2000,
            delta: DEFAULT_DELTA,
            decomposition: false,
            checkpoints: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub seed: u64,
    pub alpha: Option<f64>,
    pub tau: f64,
    pub bias_exact: f64,
    /// Exact bias for chain lengths `0..=q`.
    pub bias_curve: Vec<f64>,
    /// Smallest bound constant dominating `bias_curve[1..]`; absent when
    /// τ ≥ 1 makes the bound vacuous.
    pub alpha_fit: Option<f64>,
    pub bias_bound: Option<f64>,
    pub regret: RegretSeries,
    /// Slope of `log(R_N − bias)` over the final decade, when every excess
    /// there is positive.
    pub slope_fit: Option<f64>,
    /// `(N, R_N, 2A_N + 2B_N)` per checkpoint, when requested.
    pub decomposition: Option<Vec<(u64, f64, f64)>>,
}

impl ExperimentRecord {
    pub fn decomposition_holds(&self) -> Option<bool> {
        self.decomposition
            .as_ref()
            .map(|d| d.iter().all(|&(_, r, rhs)| r <= rhs * (1.0 + 1e-12) + 1e-300))
    }
}

pub fn evaluate(
    setup: &Setup,
    config: &PredictorConfig,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<ExperimentRecord> {
    config.validate()?;
    let inner = balanced_allpass(&config.poles)?;
    let sweep = bias_sweep(&setup.closed, &setup.kf, &inner, config.q)?;
    let bias_curve: Vec<f64> = sweep.iter().map(|s| s.bias).collect();
    let bias_exact = bias_curve[config.q];

    let n_b = inner.order();
    let tau_value = tau(&setup.kf.eigenvalues, &config.poles, opts.delta)?;
    let pairs: Vec<(usize, f64)> = bias_curve.iter().copied().enumerate().skip(1).collect();
    let (alpha_fit, bias_bound) = match fit_alpha(&pairs, tau_value, n_b) {
        Ok(a) => (Some(a), Some(bias_bound_from_tau(tau_value, config.q, n_b, a)?)),
        Err(Error::BoundVacuous { .. }) => (None, None),
        Err(e) => return Err(e),
    };

    let horizon = usize::try_from(opts.horizon)
        .map_err(|_| Error::InvalidArgument("horizon does not fit in memory".into()))?;
    let run_opts = RunOptions {
        l_star: opts.decomposition.then(|| sweep[config.q].l_star.clone()),
        snapshot_at: Vec::new(),
    };
    let out = run_predictor(&setup.closed, &setup.kf, config, horizon, seed, &run_opts)?;
    let at = match &opts.checkpoints {
        Some(list) => {
            let mut v: Vec<u64> = list.iter().copied().filter(|&n| n >= 1 && n <= opts.horizon).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
        None => checkpoints(opts.horizon),
    };
    let regret = RegretSeries::from_squared_gaps(&out.sq_gap, &at, bias_exact);
    let slope_fit = fit_convergence_rate(&regret, bias_exact, None)
        .ok()
        .map(|f| f.slope);
    let decomposition = match (&out.sq_to_best, &out.sq_best_to_kf) {
        (Some(a), Some(b)) => Some(regret_decomposition(&out.sq_gap, a, b, &at)),
        _ => None,
    };

    Ok(ExperimentRecord {
        seed,
        alpha: setup.alpha,
        tau: tau_value,
        bias_exact,
        bias_curve,
        alpha_fit,
        bias_bound,
        regret,
        slope_fit,
        decomposition,
    })
}
