//! Artifact writers: CSV tables, the JSON summary and the run manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use obfarx_core::experiment::ExperimentRecord;
use obfarx_core::regret::{fit_convergence_rate, pooled_excess_median, pooled_excess_rms};

use crate::config::RunConfig;
use crate::run::{Check, SeedOutcome, SweepRecord, TauRow};

pub const RESULTS_HEADER: [&str; 8] = [
    "seed",
    "alpha",
    "tau",
    "bias_exact",
    "bias_bound",
    "checkpoint_N",
    "regret_RN",
    "slope_fit",
];

/// Shortest round-trip form; empty for absent values.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_results(path: &Path, outcomes: &[SeedOutcome<ExperimentRecord>]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(RESULTS_HEADER).map_err(csv_error)?;
    for rec in outcomes.iter().filter_map(|o| o.result.as_ref().ok()) {
        for (&n, &r) in rec.regret.n.iter().zip(&rec.regret.r_n) {
            w.write_record([
                rec.seed.to_string(),
                fmt_opt(rec.alpha),
                fmt_f64(rec.tau),
                fmt_f64(rec.bias_exact),
                fmt_opt(rec.bias_bound),
                n.to_string(),
                fmt_f64(r),
                fmt_opt(rec.slope_fit),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()
}

/// One row per seed; the checkpoint columns stay empty.
pub fn write_sweep_results(path: &Path, outcomes: &[SeedOutcome<SweepRecord>]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(RESULTS_HEADER).map_err(csv_error)?;
    for rec in outcomes.iter().filter_map(|o| o.result.as_ref().ok()) {
        let &(_, bias, bound) = rec.rows.last().expect("q = 0 row is always present");
        w.write_record([
            rec.seed.to_string(),
            fmt_opt(rec.alpha),
            fmt_f64(rec.tau),
            fmt_f64(bias),
            fmt_opt(bound),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()
}

pub fn write_header_only(path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(RESULTS_HEADER).map_err(csv_error)?;
    w.flush()
}

pub fn write_bias_sweep(path: &Path, outcomes: &[SeedOutcome<SweepRecord>]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["seed", "q", "bias_exact", "bias_bound", "tau", "alpha_fit"])
        .map_err(csv_error)?;
    for rec in outcomes.iter().filter_map(|o| o.result.as_ref().ok()) {
        for &(q, bias, bound) in &rec.rows {
            w.write_record([
                rec.seed.to_string(),
                q.to_string(),
                fmt_f64(bias),
                fmt_opt(bound),
                fmt_f64(rec.tau),
                fmt_opt(rec.alpha_fit),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()
}

pub fn write_tau_table(path: &Path, rows: &[TauRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["mu_re", "mu_im", "radius", "angle", "tau"])
        .map_err(csv_error)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.mu.re),
            fmt_f64(r.mu.im),
            fmt_f64(r.radius),
            fmt_f64(r.angle),
            fmt_f64(r.tau),
        ])
        .map_err(csv_error)?;
    }
    w.flush()
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub mode: String,
    pub experiments: usize,
    pub failed: Vec<FailedSeed>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_bias: Option<f64>,
    /// Largest fitted bound constant over the experiments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_fit: Option<f64>,
    /// Final-decade slope of the per-checkpoint median of `|R_N − bias|`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled_slope: Option<f64>,
    /// Same slope for the root-mean-square pooling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled_slope_rms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition_holds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_tau: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Check>,
}

fn failed<T>(outcomes: &[SeedOutcome<T>]) -> Vec<FailedSeed> {
    outcomes
        .iter()
        .filter_map(|o| {
            o.result.as_ref().err().map(|e| FailedSeed {
                seed: o.seed,
                error: e.clone(),
            })
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn max_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    xs.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
}

pub fn summarize_experiments(mode: &str, outcomes: &[SeedOutcome<ExperimentRecord>]) -> Summary {
    let ok: Vec<&ExperimentRecord> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    let series: Vec<_> = ok.iter().map(|r| r.regret.clone()).collect();
    let slope = |pooled: obfarx_core::Result<obfarx_core::regret::RegretSeries>| {
        pooled
            .and_then(|p| fit_convergence_rate(&p, 0.0, None))
            .ok()
            .map(|f| f.slope)
    };
    let decomposition = ok
        .iter()
        .map(|r| r.decomposition_holds())
        .try_fold(true, |acc, d| d.map(|d| acc && d));
    Summary {
        mode: mode.into(),
        experiments: ok.len(),
        failed: failed(outcomes),
        mean_bias: mean(ok.iter().map(|r| r.bias_exact)),
        alpha_fit: max_of(ok.iter().filter_map(|r| r.alpha_fit)),
        pooled_slope: slope(pooled_excess_median(&series)),
        pooled_slope_rms: slope(pooled_excess_rms(&series)),
        decomposition_holds: if ok.is_empty() { None } else { decomposition },
        ..Default::default()
    }
}

pub fn summarize_sweeps(mode: &str, outcomes: &[SeedOutcome<SweepRecord>]) -> Summary {
    let ok: Vec<&SweepRecord> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    Summary {
        mode: mode.into(),
        experiments: ok.len(),
        failed: failed(outcomes),
        mean_bias: mean(ok.iter().filter_map(|r| r.rows.last().map(|row| row.1))),
        alpha_fit: max_of(ok.iter().filter_map(|r| r.alpha_fit)),
        min_tau: ok.iter().map(|r| r.tau).reduce(f64::min),
        ..Default::default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub code_version: String,
    pub mode: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    pub experiments: Vec<SeedTiming>,
}

impl Manifest {
    pub fn new(cfg: &RunConfig, echo: &str) -> Self {
        Manifest {
            config_sha256: sha256_hex(echo.as_bytes()),
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            mode: cfg.mode.name().into(),
            seeds: cfg.seeds.clone(),
            outputs: Vec::new(),
            wall_clock_s: 0.0,
            experiments: Vec::new(),
        }
    }

    pub fn timings<T>(&mut self, outcomes: &[SeedOutcome<T>]) {
        self.experiments = outcomes
            .iter()
            .map(|o| SeedTiming {
                seed: o.seed,
                wall_clock_s: o.wall_s,
            })
            .collect();
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Output directory plus the list of files written into it.
pub struct OutDir {
    pub root: PathBuf,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.into());
        }
        self.root.join(name)
    }
}
