//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use obfarx_core::diffusion_bench::{
    default_predictor, diffusion_plant, random_stable_plant, random_stable_plant_io, run_experiment,
    DiffusionConfig,
};
use obfarx_core::experiment::{evaluate, ExperimentOptions, ExperimentRecord, Setup};
use obfarx_core::gobf::{balanced_allpass, gobf_bank};
use obfarx_core::lti::{
    close_loop, dare_residual, lyapunov_residual, psd_bound, solve_dare, solve_lyapunov,
    NoisySystem, StateSpace,
};
use obfarx_core::obf_arx::{asymptotic_coefficients, bias_sweep, run_predictor, PredictorConfig, RunOptions};
use obfarx_core::regret::{
    bias_bound_from_tau, fit_alpha, fit_convergence_rate, ols, pooled_excess_median,
    pooled_excess_rms, tau, RegretSeries, DEFAULT_DELTA,
};

/// Fixed plant for the synthetic rate and decay checks.
const PLANT_SEED: u64 = 6;
const PLANT_DIM: usize = 4;
const LAGUERRE_POLE: f64 = 0.4;
const SEEDS: u64 = 20;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn par_map<T: Send, F: Fn(u64) -> T + Sync>(items: Vec<u64>, f: F) -> Vec<T> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunks: Vec<Vec<u64>> = (0..threads)
        .map(|k| items.iter().copied().skip(k).step_by(threads).collect())
        .collect();
    let mut tagged: Vec<(u64, T)> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| s.spawn(|| chunk.iter().map(|&i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    tagged.sort_by_key(|(i, _)| *i);
    tagged.into_iter().map(|(_, t)| t).collect()
}

fn random_pole_set(rng: &mut ChaCha8Rng, max_order: usize) -> Vec<Complex64> {
    let order = rng.random_range(1..=max_order);
    let mut poles = Vec::new();
    while poles.len() < order {
        let r = rng.random_range(0.0..0.95);
        if order - poles.len() >= 2 && rng.random_bool(0.5) {
            let z = Complex64::from_polar(r, rng.random_range(0.05..PI - 0.05));
            poles.push(z);
            poles.push(z.conj());
        } else {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            poles.push(Complex64::new(sign * r, 0.0));
        }
    }
    poles
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points = 8192;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let poles = random_pole_set(&mut rng, 3);
        let q = rng.random_range(1..=5);
        let bank = gobf_bank(&balanced_allpass(&poles).unwrap(), q, 1).unwrap();
        let k = bank.basis_count();
        let mut gram = DMatrix::<Complex64>::zeros(k, k);
        for i in 0..points {
            let v = bank.frequency_response(2.0 * PI * i as f64 / points as f64);
            gram += &v * v.adjoint();
        }
        gram /= Complex64::new(points as f64, 0.0);
        let dev = (gram - DMatrix::<Complex64>::identity(k, k)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        worst = worst.max(dev);
    }
    let t = start.elapsed();
    outcome(
        1,
        worst <= 1e-6 && within(t, 30),
        format!("GOBF orthonormality over 50 pole sets: max |<Vj,Vk> - δjk| = {worst:.2e} (≤ 1e-6), {t:.1?} (< 30 s)"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut defect, mut gain) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let inner = balanced_allpass(&random_pole_set(&mut rng, 4)).unwrap();
        defect = defect.max(inner.orthogonality_defect());
        for i in 0..1024 {
            let g = inner.frequency_response(2.0 * PI * i as f64 / 1024.0);
            gain = gain.max((g.norm() - 1.0).abs());
        }
    }
    let t = start.elapsed();
    outcome(
        2,
        defect <= 1e-10 && gain <= 1e-8 && within(t, 10),
        format!("balanced all-pass over 100 pole sets: defect {defect:.2e} (≤ 1e-10), max ||G|-1| {gain:.2e} (≤ 1e-8), {t:.1?} (< 10 s)"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut systems: Vec<NoisySystem> = (0..99u64)
        .map(|seed| {
            let dim = 1 + (seed as usize % 20);
            let outputs = 1 + (seed as usize % 3);
            random_stable_plant_io(dim, 1, outputs, 300 + seed).unwrap()
        })
        .collect();
    let diffusion = diffusion_plant(&DiffusionConfig::default(), 0).unwrap().plant;
    // the benchmark plant has Q = 0; add process noise so the Riccati
    // solution is not trivially zero
    let mut heavy = diffusion.clone();
    heavy.noise.q = DMatrix::identity(100, 100) * 1e-3;
    systems.push(heavy);
    let (mut worst_dare, mut worst_lyap) = (0.0f64, 0.0f64);
    for s in systems.iter().chain(std::iter::once(&diffusion)) {
        let (a, c, q, r) = (&s.system.a, &s.system.c, &s.noise.q, &s.noise.r);
        let p = solve_dare(a, c, q, r).unwrap();
        let res = dare_residual(a, c, q, r, &p).unwrap().amax() / (1.0 + p.amax());
        let sigma = solve_lyapunov(a, q).unwrap();
        let lres = lyapunov_residual(a, q, &sigma).amax() / (1.0 + sigma.amax());
        // input-driven Gramian exercises the Lyapunov solver on the diffusion plant too
        let bb = &s.system.b * s.system.b.transpose();
        let gram = solve_lyapunov(a, &bb).unwrap();
        let gres = lyapunov_residual(a, &bb, &gram).amax() / (1.0 + gram.amax());
        worst_dare = worst_dare.max(res);
        worst_lyap = worst_lyap.max(lres).max(gres);
    }
    let t = start.elapsed();
    outcome(
        3,
        worst_dare <= 1e-9 && worst_lyap <= 1e-9 && within(t, 60),
        format!(
            "Riccati/Lyapunov residuals on {} systems incl. 100-state diffusion: DARE {worst_dare:.2e}, Lyapunov {worst_lyap:.2e} (≤ 1e-9 relative), {t:.1?} (< 60 s)",
            systems.len() + 1
        ),
    )
}

fn synthetic_setup() -> Setup {
    let plant = random_stable_plant(PLANT_DIM, PLANT_SEED).unwrap();
    Setup::white_noise(plant, DMatrix::identity(1, 1), None).unwrap()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    // exact representation: basis poles at the Kalman eigenvalues
    let plant = random_stable_plant(2, 7).unwrap();
    let small = Setup::white_noise(plant, DMatrix::identity(1, 1), None).unwrap();
    let inner = balanced_allpass(&small.kf.eigenvalues).unwrap();
    let mut exact_bias = 0.0f64;
    for q in [1, 2] {
        let bank = gobf_bank(&inner, q, 2).unwrap();
        exact_bias = exact_bias.max(asymptotic_coefficients(&small.closed, &small.kf, &bank).unwrap().bias);
    }

    // convergence of the online coefficients
    let setup = synthetic_setup();
    let cfg = PredictorConfig::laguerre(LAGUERRE_POLE, 1, 1, 1);
    let l_star = asymptotic_coefficients(&setup.closed, &setup.kf, &cfg.bank().unwrap())
        .unwrap()
        .l_star;
    let marks = vec![1_000u64, 10_000, 100_000, 1_000_000];
    let opts = RunOptions { l_star: None, snapshot_at: marks.clone() };
    let errors: Vec<Vec<f64>> = par_map((201..201 + SEEDS).collect(), |seed| {
        let out = run_predictor(&setup.closed, &setup.kf, &cfg, 1_000_000, seed, &opts).unwrap();
        out.snapshots.iter().map(|(_, l)| (l - &l_star).norm()).collect()
    });
    let rms: Vec<f64> = (0..marks.len())
        .map(|i| (errors.iter().map(|e| e[i] * e[i]).sum::<f64>() / errors.len() as f64).sqrt())
        .collect();
    let xs: Vec<f64> = marks.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = rms.iter().map(|v| v.ln()).collect();
    let slope = ols(&xs, &ys).unwrap().slope;
    let t = start.elapsed();
    outcome(
        4,
        exact_bias <= 1e-8 && (-0.7..=-0.3).contains(&slope) && within(t, 300),
        format!(
            "L* oracle: pole-matched bias {exact_bias:.2e} (≤ 1e-8); RMS ‖L(N)-L*‖ over {SEEDS} seeds {:.2e}..{:.2e}, slope {slope:.3} (-0.5 ± 0.2), {t:.1?} (< 5 min)",
            rms[0], rms[3]
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let setup = synthetic_setup();
    let mu = [Complex64::new(LAGUERRE_POLE, 0.0)];
    let inner = balanced_allpass(&mu).unwrap();
    let biases: Vec<f64> = bias_sweep(&setup.closed, &setup.kf, &inner, 10)
        .unwrap()
        .iter()
        .map(|s| s.bias)
        .collect();
    let t_value = tau(&setup.kf.eigenvalues, &mu, DEFAULT_DELTA).unwrap();
    let xs: Vec<f64> = (1..=8).map(|q| q as f64).collect();
    let ys: Vec<f64> = (1..=8).map(|q| biases[q].ln()).collect();
    let slope = ols(&xs, &ys).unwrap().slope;
    let limit = t_value.ln() + 0.1;
    let pairs: Vec<(usize, f64)> = (1..=8).map(|q| (q, biases[q])).collect();
    let alpha = fit_alpha(&pairs, t_value, 1).unwrap();
    let held_out: Vec<(f64, f64)> = [9, 10]
        .iter()
        .map(|&q| (bias_bound_from_tau(t_value, q, 1, alpha).unwrap(), biases[q]))
        .collect();
    let dominates = held_out.iter().all(|(b, e)| b >= e);
    let t = start.elapsed();
    outcome(
        5,
        slope <= limit && dominates && within(t, 120),
        format!(
            "exponential bias decay: slope {slope:.3} ≤ log τ + 0.1 = {limit:.3} (τ = {t_value:.3}); held-out bound/exact q=9 {:.2e}/{:.2e}, q=10 {:.2e}/{:.2e}, {t:.1?} (< 2 min)",
            held_out[0].0, held_out[0].1, held_out[1].0, held_out[1].1
        ),
    )
}

fn criterion_6() -> (Outcome, Vec<ExperimentRecord>) {
    let start = Instant::now();
    let setup = synthetic_setup();
    let cfg = PredictorConfig::laguerre(LAGUERRE_POLE, 1, 1, 1);
    let opts = ExperimentOptions { horizon: 1_000_000, decomposition: true, ..Default::default() };
    let records = par_map((1..=SEEDS).collect(), |seed| evaluate(&setup, &cfg, seed, &opts).unwrap());
    let series: Vec<RegretSeries> = records.iter().map(|r| r.regret.clone()).collect();
    let window = Some((10_000, 1_000_000));
    let median = fit_convergence_rate(&pooled_excess_median(&series).unwrap(), 0.0, window).unwrap();
    let rms = fit_convergence_rate(&pooled_excess_rms(&series).unwrap(), 0.0, window).unwrap();
    let t = start.elapsed();
    (
        outcome(
            6,
            (-0.7..=-0.35).contains(&median.slope) && within(t, 600),
            format!(
                "regret rate: median |R_N - bias| over {SEEDS} seeds, N in [1e4, 1e6], slope {:.3} ± {:.3} (in [-0.7, -0.35]); RMS-pooled slope {:.3} for reference, {t:.1?} (< 10 min)",
                median.slope, median.std_error, rms.slope
            ),
        ),
        records,
    )
}

fn criterion_7() -> (Outcome, Vec<ExperimentRecord>) {
    let start = Instant::now();
    let config = DiffusionConfig::default();
    let predictor = default_predictor();
    // OBFARX_FULL_BENCH=1 runs the full 100 seeds.
    let seeds = if std::env::var_os("OBFARX_FULL_BENCH").is_some() { 100 } else { SEEDS };
    let records = par_map((1..=seeds).collect(), |seed| run_experiment(&config, &predictor, seed, true).unwrap());
    let mean_bias = records.iter().map(|r| r.bias_exact).sum::<f64>() / records.len() as f64;
    let series: Vec<RegretSeries> = records.iter().map(|r| r.regret.clone()).collect();
    let k = series[0].len();
    let mean_curve: Vec<f64> = (0..k)
        .map(|i| series.iter().map(|s| s.r_n[i]).sum::<f64>() / series.len() as f64)
        .collect();
    let peak = (0..k).max_by(|&a, &b| mean_curve[a].total_cmp(&mean_curve[b])).unwrap();
    let decreasing = mean_curve[peak..].windows(2).all(|w| w[1] <= w[0]) && peak + 1 < k;
    let slope = fit_convergence_rate(&pooled_excess_median(&series).unwrap(), 0.0, None)
        .unwrap()
        .slope;
    let t = start.elapsed();
    (
        outcome(
            7,
            (1e-5..=1e-3).contains(&mean_bias) && decreasing && slope <= -0.35 && within(t, 600),
            format!(
                "diffusion benchmark, {seeds} seeds x 2000 steps: mean bias {mean_bias:.3e} (in [1e-5, 1e-3]; reference 9.27e-5); mean R_N decreasing after N = {} ({decreasing}); final-decade median excess slope {slope:.3} (≤ -0.35), {t:.1?} (< 10 min)",
                series[0].n[peak]
            ),
        ),
        records,
    )
}

fn criterion_8(runs: &[&ExperimentRecord]) -> Outcome {
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    let mut all = true;
    for r in runs {
        let d = r.decomposition.as_ref().expect("runs record the decomposition");
        for &(_, lhs, rhs) in d {
            checked += 1;
            worst = worst.max(lhs / rhs);
        }
        all &= r.decomposition_holds() == Some(true);
    }
    outcome(
        8,
        all && checked > 0,
        format!("regret decomposition R_N ≤ 2A_N + 2B_N at {checked} checkpoints over {} runs: max ratio {worst:.3}", runs.len()),
    )
}

fn grid_psd_max(sys: &StateSpace, q: &DMatrix<f64>, r: &DMatrix<f64>, points: usize) -> f64 {
    let n = sys.state_dim();
    let to_c = |m: &DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
    let (a, c, qc, rc) = (to_c(&sys.a), to_c(&sys.c), to_c(q), to_c(r));
    let mut best = 0.0f64;
    for i in 0..points {
        let z = Complex64::from_polar(1.0, 2.0 * PI * i as f64 / points as f64);
        let h = &c * (DMatrix::<Complex64>::identity(n, n) * z - &a).try_inverse().unwrap();
        let phi = &h * &qc * h.adjoint() + &rc;
        let sv: DVector<f64> = phi.singular_values();
        best = best.max(sv.max());
    }
    best
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut seed = 0u64;
    let mut checked = 0;
    let mut worst = f64::INFINITY;
    while checked < 50 {
        seed += 1;
        let plant = random_stable_plant(1 + seed as usize % 6, 900 + seed).unwrap();
        let controller = if seed.is_multiple_of(2) {
            NoisySystem::white_noise_controller(1, DMatrix::identity(1, 1)).unwrap()
        } else {
            let c = random_stable_plant_io(1 + seed as usize % 3, 1, 1, 1900 + seed).unwrap();
            let sys = StateSpace::strictly_proper(c.system.a, c.system.b * 0.2, c.system.c).unwrap();
            NoisySystem::new(sys, c.noise).unwrap()
        };
        let closed = close_loop(&plant, &controller).unwrap();
        if closed.spectral_radius().unwrap() >= 1.0 {
            continue;
        }
        checked += 1;
        let bound = psd_bound(&closed.system, &closed.noise.q, &closed.noise.r).unwrap();
        let grid = grid_psd_max(&closed.system, &closed.noise.q, &closed.noise.r, 4096);
        worst = worst.min(bound / grid);
    }
    let t = start.elapsed();
    outcome(
        9,
        worst >= 1.0 && within(t, 30),
        format!("PSD bound over 50 random closed loops: min bound / grid max = {worst:.3} (≥ 1), {t:.1?} (< 30 s)"),
    )
}

fn main() {
    let start = Instant::now();
    let (mut outcomes, (o6, r6), (o7, r7)) = std::thread::scope(|s| {
        let light = s.spawn(|| vec![criterion_1(), criterion_2(), criterion_3(), criterion_5(), criterion_9()]);
        let c4 = s.spawn(criterion_4);
        let c6 = s.spawn(criterion_6);
        let c7 = s.spawn(criterion_7);
        let mut v = light.join().unwrap();
        v.push(c4.join().unwrap());
        (v, c6.join().unwrap(), c7.join().unwrap())
    });
    let runs: Vec<&ExperimentRecord> = r6.iter().chain(&r7).collect();
    outcomes.push(criterion_8(&runs));
    outcomes.push(o6);
    outcomes.push(o7);
    outcomes.sort_by_key(|o| o.id);

    let mut failed = 0;
    for o in &outcomes {
        println!("{} criterion {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1?}",
        outcomes.len() - failed,
        start.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
