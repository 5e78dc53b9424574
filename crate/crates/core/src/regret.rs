//! Average regret, the Blaschke decay rate τ, the exponential bias bound and
//! empirical rate fitting.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-9;

/// Running averages `R_N` sampled at the step counts `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretSeries {
    pub n: Vec<u64>,
    pub r_n: Vec<f64>,
    pub bias_estimate: f64,
}

impl RegretSeries {
    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    /// `R_N` at every `N` listed in `at` (values beyond the data are skipped)
    /// from per-step squared gaps.
    pub fn from_squared_gaps(sq_gaps: &[f64], at: &[u64], bias_estimate: f64) -> Self {
        let mut n = Vec::with_capacity(at.len());
        let mut r_n = Vec::with_capacity(at.len());
        let mut sum = 0.0;
        let mut done = 0usize;
        for &target in at {
            let target_us = target as usize;
            if target == 0 || target_us > sq_gaps.len() {
                continue;
            }
            while done < target_us {
                sum += sq_gaps[done];
                done += 1;
            }
            n.push(target);
            r_n.push(sum / target as f64);
        }
        RegretSeries {
            n,
            r_n,
            bias_estimate,
        }
    }
}

/// `R_N` at every `N` from predictor and Kalman predictions.
pub fn average_regret(pred: &[DVector<f64>], kf_pred: &[DVector<f64>]) -> Result<RegretSeries> {
    if pred.len() != kf_pred.len() {
        return Err(Error::dims("prediction sequences", pred.len(), kf_pred.len()));
    }
    let mut gaps = Vec::with_capacity(pred.len());
    for (a, b) in pred.iter().zip(kf_pred) {
        if a.len() != b.len() {
            return Err(Error::dims("prediction vector", a.len(), b.len()));
        }
        gaps.push((a - b).norm_squared());
    }
    let all: Vec<u64> = (1..=pred.len() as u64).collect();
    Ok(RegretSeries::from_squared_gaps(&gaps, &all, 0.0))
}

/// `⌈10^{k/8}⌉` for `k = 0, 1, …` up to `horizon`, deduplicated, with
/// `horizon` itself appended when it is not already on the grid.
pub fn checkpoints(horizon: u64) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    for k in 0.. {
        // the tolerance keeps exact powers of ten from rounding up
        let v = (10f64.powf(k as f64 / 8.0) - 1e-9).ceil() as u64;
        if v > horizon {
            break;
        }
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    if horizon > 0 && out.last() != Some(&horizon) {
        out.push(horizon);
    }
    out
}

/// `(max_j Π_k |(λ_j − μ_k)/(1 − λ̄_j μ_k)|)^{2/n_b} + δ`.
pub fn tau(lambda: &[Complex64], mu: &[Complex64], delta: f64) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::InvalidArgument("τ needs at least one basis pole".into()));
    }
    for (index, l) in lambda.iter().enumerate() {
        if l.norm() >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "Kalman eigenvalue {index} has modulus {:.6} ≥ 1",
                l.norm()
            )));
        }
    }
    for (index, m) in mu.iter().enumerate() {
        if m.norm() >= 1.0 {
            return Err(Error::InvalidPole {
                index,
                reason: format!("modulus {:.6} is not inside the unit disc", m.norm()),
            });
        }
    }
    let one = Complex64::new(1.0, 0.0);
    let worst = lambda
        .iter()
        .map(|&l| {
            mu.iter()
                .map(|&m| ((l - m) / (one - l.conj() * m)).norm())
                .product::<f64>()
        })
        .fold(0.0, f64::max);
    Ok(worst.powf(2.0 / mu.len() as f64) + delta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundParams {
    pub lambda: Vec<Complex64>,
    pub mu: Vec<Complex64>,
    pub delta: f64,
    pub q: usize,
    pub alpha: f64,
}

impl BoundParams {
    pub fn n_b(&self) -> usize {
        self.mu.len()
    }

    pub fn tau(&self) -> Result<f64> {
        tau(&self.lambda, &self.mu, self.delta)
    }
}

/// `α τ^{(q+1) n_b} / (1 − τ^{n_b})`.
pub fn bias_bound(params: &BoundParams) -> Result<f64> {
    bias_bound_from_tau(params.tau()?, params.q, params.n_b(), params.alpha)
}

pub fn bias_bound_from_tau(tau: f64, q: usize, n_b: usize, alpha: f64) -> Result<f64> {
    if !(tau < 1.0) {
        return Err(Error::BoundVacuous { tau });
    }
    let nb = n_b as i32;
    Ok(alpha * tau.powi((q as i32 + 1) * nb) / (1.0 - tau.powi(nb)))
}

/// Smallest α for which the bound dominates every `(q, bias)` pair.
pub fn fit_alpha(biases: &[(usize, f64)], tau: f64, n_b: usize) -> Result<f64> {
    if !(tau < 1.0) {
        return Err(Error::BoundVacuous { tau });
    }
    let mut alpha = 0.0f64;
    for &(q, bias) in biases {
        if bias <= 0.0 {
            continue;
        }
        let shape = bias_bound_from_tau(tau, q, n_b, 1.0)?;
        if shape == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "τ = 0 but the bias at q = {q} is {bias:.3e}; basis poles cannot match the Kalman eigenvalues"
            )));
        }
        alpha = alpha.max(bias / shape);
    }
    Ok(alpha)
}

/// Ordinary least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (zero for an exact fit or two points).
    pub std_error: f64,
    pub points: usize,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::dims("regression data", n, y.len()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("a line fit needs at least two points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("regression abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let std_error = if n > 2 {
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit {
        slope,
        intercept,
        std_error,
        points: n,
    })
}

pub const MIN_RATE_POINTS: usize = 10;

/// Slope of `log(R_N − bias)` against `log N`.
///
/// The fit uses the points with `N` inside `window` (inclusive), or the
/// final decade `[N_max/10, N_max]` when no window is given.
pub fn fit_convergence_rate(
    series: &RegretSeries,
    bias: f64,
    window: Option<(u64, u64)>,
) -> Result<LineFit> {
    if series.len() < MIN_RATE_POINTS {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least {MIN_RATE_POINTS} checkpoints, got {}",
            series.len()
        )));
    }
    let n_max = *series.n.iter().max().unwrap();
    let (lo, hi) = window.unwrap_or((n_max.div_ceil(10), n_max));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&n, &r) in series.n.iter().zip(&series.r_n) {
        if n < lo || n > hi {
            continue;
        }
        let excess = r - bias;
        if !(excess > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "R_N − bias = {excess:.3e} ≤ 0 at N = {n}; re-estimate the bias"
            )));
        }
        xs.push((n as f64).ln());
        ys.push(excess.ln());
    }
    ols(&xs, &ys)
}

/// Root-mean-square over runs of `R_N − bias_i`, per checkpoint. All series
/// must share the same checkpoints. The result carries bias 0, so fitting
/// its rate directly measures how fast the typical excess shrinks.
pub fn pooled_excess_rms(runs: &[RegretSeries]) -> Result<RegretSeries> {
    let first = check_pool(runs)?;
    let k = runs.len() as f64;
    let r_n = (0..first.len())
        .map(|i| {
            let ms: f64 = runs
                .iter()
                .map(|r| (r.r_n[i] - r.bias_estimate).powi(2))
                .sum::<f64>()
                / k;
            ms.sqrt()
        })
        .collect();
    Ok(RegretSeries {
        n: first.n.clone(),
        r_n,
        bias_estimate: 0.0,
    })
}

/// Median over runs of `|R_N − bias_i|`, per checkpoint, with bias 0 in the
/// result. A single run with a large early transient (a near-singular first
/// solve) shifts the RMS for the whole horizon but not the median.
pub fn pooled_excess_median(runs: &[RegretSeries]) -> Result<RegretSeries> {
    let first = check_pool(runs)?;
    let mut buf = vec![0.0; runs.len()];
    let r_n = (0..first.len())
        .map(|i| {
            for (b, r) in buf.iter_mut().zip(runs) {
                *b = (r.r_n[i] - r.bias_estimate).abs();
            }
            median(&mut buf)
        })
        .collect();
    Ok(RegretSeries {
        n: first.n.clone(),
        r_n,
        bias_estimate: 0.0,
    })
}

fn check_pool(runs: &[RegretSeries]) -> Result<&RegretSeries> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no runs to pool".into()))?;
    if runs.iter().any(|r| r.n != first.n) {
        return Err(Error::InvalidArgument("runs use different checkpoints".into()));
    }
    Ok(first)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Checks `R_N ≤ 2·(1/N)Σ‖y̌ − y̌*‖² + 2·(1/N)Σ‖y̌* − ŷ*‖²` at each
/// checkpoint; returns `(N, R_N, right-hand side)` for every checkpoint.
pub fn regret_decomposition(
    sq_gap: &[f64],
    sq_to_best: &[f64],
    sq_best_to_kf: &[f64],
    at: &[u64],
) -> Vec<(u64, f64, f64)> {
    let r = RegretSeries::from_squared_gaps(sq_gap, at, 0.0);
    let a = RegretSeries::from_squared_gaps(sq_to_best, at, 0.0);
    let b = RegretSeries::from_squared_gaps(sq_best_to_kf, at, 0.0);
    r.n.iter()
        .zip(&r.r_n)
        .zip(a.r_n.iter().zip(&b.r_n))
        .map(|((&n, &rn), (&x, &y))| (n, rn, 2.0 * x + 2.0 * y))
        .collect()
}
