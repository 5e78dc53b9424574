//! Subcommands, flags and exit codes.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use obfarx_core::diffusion_bench::build_region;

use crate::config::{load_config, parse_seed_range, Mode, Overrides, PlantSource};
use crate::output::{self, Manifest, OutDir, Summary};
use crate::run::{self, Prepared};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "obfarx", version, about = "OBF-ARX online prediction: regret, bias and diffusion studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Online regret runs on random, file or diffusion plants.
    Regret(Common),
    /// Exact asymptotic bias against the number of basis blocks.
    BiasSweep(Common),
    /// Heat-diffusion benchmark.
    BenchDiffusion(Common),
    /// τ over a polar grid of basis poles for fixed Kalman eigenvalues.
    TauTable(Common),
    /// Numerical checks with known answers.
    Selftest(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Inclusive seed range `a..b`; overrides the file.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Command {
    fn parts(&self) -> (Mode, &Common) {
        match self {
            Command::Regret(c) => (Mode::Regret, c),
            Command::BiasSweep(c) => (Mode::BiasSweep, c),
            Command::BenchDiffusion(c) => (Mode::BenchDiffusion, c),
            Command::TauTable(c) => (Mode::TauTable, c),
            Command::Selftest(c) => (Mode::Selftest, c),
        }
    }
}

pub fn execute(cli: &Cli) -> i32 {
    let (mode, common) = cli.command.parts();
    let seeds = match common.seeds.as_deref().map(parse_seed_range).transpose() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: --seeds: {e}");
            return EXIT_CONFIG;
        }
    };
    if common.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return EXIT_CONFIG;
    }
    let overrides = Overrides { mode: Some(mode), seeds };
    let prep = match load_config(common.config.as_deref(), &overrides).and_then(Prepared::new) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match write_artifacts(&prep, common) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: writing to {}: {e}", common.out.display());
            EXIT_IO
        }
    }
}

fn write_artifacts(prep: &Prepared, common: &Common) -> std::io::Result<i32> {
    let start = Instant::now();
    let cfg = prep.config();
    let mode = cfg.mode;
    let mut out = OutDir::create(&common.out)?;
    let echo = cfg.echo();
    std::fs::write(out.path("config.resolved.toml"), &echo)?;
    let mut manifest = Manifest::new(cfg, &echo);

    if cfg.plant.source == PlantSource::Diffusion && cfg.output.region {
        // Validated while loading the config.
        if let Ok(mask) = build_region(&cfg.diffusion.region, cfg.diffusion.cells_per_side) {
            std::fs::write(out.path("region.txt"), mask.art())?;
        }
    }

    let summary: Summary = match mode {
        Mode::Regret | Mode::BenchDiffusion => {
            let outcomes = run::run_experiments(prep, common.jobs);
            output::write_results(&out.path("results.csv"), &outcomes)?;
            manifest.timings(&outcomes);
            output::summarize_experiments(mode.name(), &outcomes)
        }
        Mode::BiasSweep => {
            let outcomes = run::run_sweeps(prep, common.jobs);
            output::write_sweep_results(&out.path("results.csv"), &outcomes)?;
            output::write_bias_sweep(&out.path("bias_sweep.csv"), &outcomes)?;
            manifest.timings(&outcomes);
            output::summarize_sweeps(mode.name(), &outcomes)
        }
        Mode::TauTable => {
            output::write_header_only(&out.path("results.csv"))?;
            match run::tau_grid(cfg) {
                Ok(rows) => {
                    output::write_tau_table(&out.path("tau_table.csv"), &rows)?;
                    Summary {
                        mode: mode.name().into(),
                        min_tau: rows.iter().map(|r| r.tau).reduce(f64::min),
                        ..Default::default()
                    }
                }
                Err(e) => Summary {
                    mode: mode.name().into(),
                    failed: vec![output::FailedSeed { seed: 0, error: e.to_string() }],
                    ..Default::default()
                },
            }
        }
        Mode::Selftest => {
            output::write_header_only(&out.path("results.csv"))?;
            let checks = run::selftest();
            for c in &checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Summary {
                mode: mode.name().into(),
                experiments: checks.len(),
                failed: checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| output::FailedSeed { seed: 0, error: format!("{}: {}", c.name, c.detail) })
                    .collect(),
                checks,
                ..Default::default()
            }
        }
    };

    output::write_json(&out.path("summary.json"), &summary)?;
    manifest.wall_clock_s = start.elapsed().as_secs_f64();
    manifest.outputs = out.written.clone();
    manifest.outputs.push("manifest.json".into());
    output::write_json(&out.path("manifest.json"), &manifest)?;

    if summary.failed.is_empty() {
        println!("{}: {} done, outputs in {}", mode.name(), summary.experiments, common.out.display());
        Ok(EXIT_OK)
    } else {
        eprintln!("{}: {} succeeded, {} failed", mode.name(), summary.experiments, summary.failed.len());
        for f in &summary.failed {
            eprintln!("  seed {}: {}", f.seed, f.error);
        }
        Ok(EXIT_NUMERICAL)
    }
}
