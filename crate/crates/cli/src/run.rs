//! Experiment orchestration: one independent job per seed, run on a rayon
//! pool and merged in seed order.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use obfarx_core::diffusion_bench::{diffusion_plant, random_stable_plant};
use obfarx_core::experiment::{evaluate, ExperimentOptions, ExperimentRecord, Setup};
use obfarx_core::gobf::balanced_allpass;
use obfarx_core::lti::{NoiseSpec, NoisySystem, StateSpace};
use obfarx_core::obf_arx::bias_sweep;
use obfarx_core::regret::{bias_bound_from_tau, fit_alpha, tau};
use obfarx_core::Error as CoreError;

use crate::config::{ConfigError, PlantSource, RunConfig};

/// Plant description stored in a `plant.source = "file"` document (JSON, or
/// TOML when the extension is `.toml`). Matrices are
/// `{ rows, cols, data }` in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    pub system: StateSpace,
    pub noise: NoiseSpec,
}

pub fn load_plant_file(path: &Path) -> Result<NoisySystem, ConfigError> {
    let err = |message: String| ConfigError {
        key: "plant.path".into(),
        line: None,
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    let file: PlantFile = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| err(format!("{}: {}", path.display(), e.message())))?
    } else {
        serde_json::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))?
    };
    NoisySystem::new(file.system, file.noise).map_err(|e| err(e.to_string()))
}

/// Everything shared by the per-seed jobs.
pub struct Prepared {
    cfg: RunConfig,
    file_plant: Option<NoisySystem>,
}

impl Prepared {
    pub fn new(cfg: RunConfig) -> Result<Self, ConfigError> {
        let file_plant = match (cfg.plant.source, &cfg.plant.path) {
            (PlantSource::File, Some(p)) => Some(load_plant_file(p)?),
            _ => None,
        };
        Ok(Prepared { cfg, file_plant })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn setup(&self, seed: u64) -> Result<Setup, CoreError> {
        let cfg = &self.cfg;
        let plant_seed = cfg.plant.seed.unwrap_or(seed);
        let (plant, alpha) = match cfg.plant.source {
            PlantSource::Diffusion => {
                let d = diffusion_plant(&cfg.diffusion, plant_seed)?;
                (d.plant, Some(d.alpha))
            }
            PlantSource::Random => (random_stable_plant(cfg.plant.dim, plant_seed)?, None),
            PlantSource::File => (self.file_plant.clone().expect("file plant loaded"), None),
        };
        let m = plant.system.input_dim();
        let excitation = DMatrix::identity(m, m) * cfg.plant.excitation;
        Setup::white_noise(plant, excitation, alpha)
    }

    fn experiment(&self, seed: u64) -> Result<ExperimentRecord, CoreError> {
        let setup = self.setup(seed)?;
        let sys = &setup.plant.system;
        let pc = self.cfg.predictor_config(sys.input_dim(), sys.output_dim());
        let opts = ExperimentOptions {
            horizon: self.cfg.horizon,
            delta: self.cfg.delta,
            decomposition: self.cfg.output.decomposition,
            checkpoints: self.cfg.output.checkpoints.clone(),
        };
        evaluate(&setup, &pc, seed, &opts)
    }

    fn sweep(&self, seed: u64) -> Result<SweepRecord, CoreError> {
        let setup = self.setup(seed)?;
        let poles: Vec<Complex64> = self.cfg.predictor.poles.iter().map(|p| p.value()).collect();
        let inner = balanced_allpass(&poles)?;
        let q_max = self.cfg.bias_sweep.q_max;
        let sols = bias_sweep(&setup.closed, &setup.kf, &inner, q_max)?;
        let n_b = inner.order();
        let tau_value = tau(&setup.kf.eigenvalues, &poles, self.cfg.delta)?;
        let pairs: Vec<(usize, f64)> = sols.iter().map(|s| s.bias).enumerate().skip(1).collect();
        let alpha_fit = match fit_alpha(&pairs, tau_value, n_b) {
            Ok(a) => Some(a),
            Err(CoreError::BoundVacuous { .. }) => None,
            Err(e) => return Err(e),
        };
        let rows = sols
            .iter()
            .enumerate()
            .map(|(q, s)| {
                let bound = match alpha_fit {
                    Some(a) => Some(bias_bound_from_tau(tau_value, q, n_b, a)?),
                    None => None,
                };
                Ok((q, s.bias, bound))
            })
            .collect::<Result<Vec<_>, CoreError>>()?;
        Ok(SweepRecord {
            seed,
            alpha: setup.alpha,
            tau: tau_value,
            alpha_fit,
            rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub seed: u64,
    pub alpha: Option<f64>,
    pub tau: f64,
    pub alpha_fit: Option<f64>,
    /// `(q, exact bias, bound)` for `q = 0..=q_max`.
    pub rows: Vec<(usize, f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauRow {
    pub mu: Complex64,
    pub radius: f64,
    pub angle: f64,
    pub tau: f64,
}

/// τ over the polar grid `μ = r·e^{iθ}` with `r` evenly spaced in
/// `[0, radius_max]` and `θ = 2πk/angles`. Off the real axis `μ` enters with
/// its conjugate, so the basis stays real.
pub fn tau_grid(cfg: &RunConfig) -> Result<Vec<TauRow>, CoreError> {
    let t = &cfg.tau_table;
    let lambda: Vec<Complex64> = t.lambda.iter().map(|l| l.value()).collect();
    let mut rows = Vec::with_capacity(t.radii * t.angles);
    for k in 0..t.angles {
        let angle = 2.0 * PI * k as f64 / t.angles as f64;
        for i in 0..t.radii {
            let radius = t.radius_max * i as f64 / (t.radii - 1) as f64;
            let mu = Complex64::from_polar(radius, angle);
            let (mu, set) = if mu.im.abs() <= 1e-12 * radius.max(1.0) {
                let m = Complex64::new(mu.re, 0.0);
                (m, vec![m])
            } else {
                (mu, vec![mu, mu.conj()])
            };
            let value = tau(&lambda, &set, cfg.delta)?;
            rows.push(TauRow { mu, radius, angle, tau: value });
        }
    }
    Ok(rows)
}

/// Result of one seed together with its wall-clock time.
#[derive(Debug, Clone)]
pub struct SeedOutcome<T> {
    pub seed: u64,
    pub result: Result<T, String>,
    pub wall_s: f64,
}

pub fn run_seeds<T, F>(seeds: &[u64], jobs: usize, f: F) -> Vec<SeedOutcome<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T, CoreError> + Sync,
{
    let job = |&seed: &u64| {
        let start = Instant::now();
        let result = f(seed).map_err(|e| e.to_string());
        SeedOutcome {
            seed,
            result,
            wall_s: start.elapsed().as_secs_f64(),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    // `collect` on an indexed parallel iterator keeps input order.
    pool.install(|| seeds.par_iter().map(job).collect())
}

pub fn run_experiments(prep: &Prepared, jobs: usize) -> Vec<SeedOutcome<ExperimentRecord>> {
    run_seeds(&prep.cfg.seeds, jobs, |s| prep.experiment(s))
}

pub fn run_sweeps(prep: &Prepared, jobs: usize) -> Vec<SeedOutcome<SweepRecord>> {
    run_seeds(&prep.cfg.seeds, jobs, |s| prep.sweep(s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Quick numerical checks with known answers.
pub fn selftest() -> Vec<Check> {
    fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String), CoreError>) -> Check {
        match f() {
            Ok((pass, detail)) => Check { name, pass, detail },
            Err(e) => Check { name, pass: false, detail: e.to_string() },
        }
    }
    let scalar = |x: f64| DMatrix::from_element(1, 1, x);
    vec![
        check("allpass-orthogonality", || {
            let poles = [
                Complex64::new(0.5, 0.0),
                Complex64::new(0.3, 0.4),
                Complex64::new(0.3, -0.4),
            ];
            let d = balanced_allpass(&poles)?.orthogonality_defect();
            Ok((d < 1e-10, format!("defect {d:.2e}")))
        }),
        check("scalar-riccati", || {
            // a = 0.8, c = q = r = 1 reduces the DARE to P² − 0.64·P − 1 = 0.
            let sys = StateSpace::strictly_proper(scalar(0.8), scalar(1.0), scalar(1.0))?;
            let noise = NoiseSpec::new(scalar(1.0), scalar(1.0))?;
            let kf = obfarx_core::lti::KalmanPredictor::steady_state(&sys, &noise)?;
            let p = kf.riccati_solution.as_ref().map(|m| m[(0, 0)]).unwrap_or(f64::NAN);
            let expect = (0.64 + (0.64f64 * 0.64 + 4.0).sqrt()) / 2.0;
            let err = (p - expect).abs();
            Ok((err < 1e-10, format!("P = {p:.12}, error {err:.2e}")))
        }),
        check("matched-pole-bias", || {
            let plant = random_stable_plant(1, 3)?;
            let setup = Setup::white_noise(plant, scalar(1.0), None)?;
            let inner = balanced_allpass(&setup.kf.eigenvalues)?;
            let sols = bias_sweep(&setup.closed, &setup.kf, &inner, 1)?;
            let b = sols[1].bias;
            Ok((b.abs() < 1e-10, format!("bias {b:.2e}")))
        }),
        check("short-regret-run", || {
            let plant = random_stable_plant(2, 5)?;
            let setup = Setup::white_noise(plant, scalar(1.0), None)?;
            let pc = obfarx_core::obf_arx::PredictorConfig::laguerre(0.4, 2, 1, 1);
            let opts = ExperimentOptions { horizon: 20_000, ..Default::default() };
            let rec = evaluate(&setup, &pc, 1, &opts)?;
            let r = rec.regret.r_n.last().copied().unwrap_or(f64::NAN);
            let pass = r.is_finite() && r >= 0.0 && r < 10.0 * rec.bias_exact + 1e-2;
            Ok((pass, format!("R_N {r:.3e}, bias {:.3e}", rec.bias_exact)))
        }),
    ]
}
