use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{ClosedLoop, KalmanPredictor, LoopSimulator};
use crate::obf_arx::{init_predictor, PredictorConfig};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// When set, also record `‖y̌ − L* x̌‖²` and `‖L* x̌ − ŷ*‖²` per step.
    pub l_star: Option<DMatrix<f64>>,
    /// Steps `N` (after `N` updates) at which to snapshot `L`.
    pub snapshot_at: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// `‖y̌(t) − ŷ*(t)‖²` for `t = 1..=horizon`.
    pub sq_gap: Vec<f64>,
    /// `‖y̌(t) − y̌*(t)‖²`, present when `L*` was supplied.
    pub sq_to_best: Option<Vec<f64>>,
    /// `‖y̌*(t) − ŷ*(t)‖²`, present when `L*` was supplied.
    pub sq_best_to_kf: Option<Vec<f64>>,
    pub snapshots: Vec<(u64, DMatrix<f64>)>,
}

/// Simulates the closed loop with its Kalman predictor from a stationary
/// draw and runs the OBF-ARX predictor alongside from zero initial state.
pub fn run_predictor(
    closed: &ClosedLoop,
    kf: &KalmanPredictor,
    config: &PredictorConfig,
    horizon: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let l = closed.layout;
    let (m, p) = (l.inputs, l.outputs);
    if config.input_dim != m || config.output_dim != p {
        return Err(Error::dims(
            "predictor (inputs, outputs)",
            format!("({m}, {p})"),
            format!("({}, {})", config.input_dim, config.output_dim),
        ));
    }
    let mut pred = init_predictor(config)?;
    if let Some(ls) = &opts.l_star {
        crate::linalg::expect_shape("L*", ls, p, pred.regressor_dim())?;
    }
    let mut sim = LoopSimulator::new(closed, kf, seed)?;
    let c = &kf.realization.c;

    let mut sq_gap = Vec::with_capacity(horizon);
    let mut to_best = opts.l_star.as_ref().map(|_| Vec::with_capacity(horizon));
    let mut best_to_kf = opts.l_star.as_ref().map(|_| Vec::with_capacity(horizon));
    let mut snapshots = Vec::new();
    let mut snap_iter = {
        let mut s = opts.snapshot_at.clone();
        s.sort_unstable();
        s.dedup();
        s.into_iter().peekable()
    };

    let mut y_check = DVector::zeros(p);
    let mut y_hat = DVector::zeros(p);
    let mut y_best = DVector::zeros(p);
    let mut u_buf = vec![0.0; m];
    let mut y_buf = vec![0.0; p];

    for t in 0..horizon {
        pred.predict_into(&mut y_check);
        y_hat.gemv(1.0, c, &sim.xhat(), 0.0);
        sq_gap.push(sq_dist(&y_check, &y_hat));
        if let Some(ls) = &opts.l_star {
            y_best.gemv(1.0, ls, pred.regressor(), 0.0);
            to_best.as_mut().unwrap().push(sq_dist(&y_check, &y_best));
            best_to_kf.as_mut().unwrap().push(sq_dist(&y_best, &y_hat));
        }

        u_buf.copy_from_slice(sim.u().as_slice());
        y_buf.copy_from_slice(sim.y().as_slice());
        pred.update(&u_buf, &y_buf)?;
        if !sq_gap[t].is_finite() {
            return Err(Error::NonFinite { step: t });
        }

        let n_done = (t + 1) as u64;
        while snap_iter.peek().is_some_and(|&s| s <= n_done) {
            if snap_iter.next() == Some(n_done) {
                snapshots.push((n_done, pred.coefficients().clone()));
            }
        }
        sim.advance(t)?;
    }

    Ok(RunOutput {
        sq_gap,
        sq_to_best: to_best,
        sq_best_to_kf: best_to_kf,
        snapshots,
    })
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
