//! TOML run configuration: parsing, defaults per mode, validation with key
//! paths and line numbers, and the resolved echo.

use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use obfarx_core::diffusion_bench::{build_region, DiffusionConfig, DEFAULT_BASES, DEFAULT_LAGUERRE_POLE};
use obfarx_core::gobf::balanced_allpass;
use obfarx_core::obf_arx::{PredictorConfig, UpdateMode, DEFAULT_CONDITION_CAP, DEFAULT_REGULARIZATION};
use obfarx_core::Error as CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Regret,
    BiasSweep,
    BenchDiffusion,
    TauTable,
    Selftest,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Regret => "regret",
            Mode::BiasSweep => "bias-sweep",
            Mode::BenchDiffusion => "bench-diffusion",
            Mode::TauTable => "tau-table",
            Mode::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let key = if self.key.is_empty() { "<root>" } else { &self.key };
        match self.line {
            Some(line) => write!(f, "config error at `{key}` (line {line}): {}", self.message),
            None => write!(f, "config error at `{key}`: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A pole is a real number or a `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoleSpec {
    Real(f64),
    Complex([f64; 2]),
}

impl PoleSpec {
    pub fn value(self) -> Complex64 {
        match self {
            PoleSpec::Real(r) => Complex64::new(r, 0.0),
            PoleSpec::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

/// `"a..b"` (inclusive), an explicit list, or `{ count, base }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Range(String),
    List(Vec<u64>),
    Count { count: u64, #[serde(default)] base: u64 },
}

impl SeedSpec {
    pub fn expand(&self) -> Result<Vec<u64>, String> {
        match self {
            SeedSpec::Range(s) => parse_seed_range(s),
            SeedSpec::List(v) => Ok(v.clone()),
            SeedSpec::Count { count, base } => Ok((0..*count).map(|i| base + i).collect()),
        }
    }
}

pub fn parse_seed_range(s: &str) -> Result<Vec<u64>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected `a..b`, got `{s}`"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: u64 = a.trim().parse().map_err(|_| format!("bad range start in `{s}`"))?;
    let b: u64 = b.trim().parse().map_err(|_| format!("bad range end in `{s}`"))?;
    if b < a {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok((a..=b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantSource {
    Diffusion,
    Random,
    File,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    source: Option<PlantSource>,
    dim: Option<usize>,
    seed: Option<u64>,
    path: Option<PathBuf>,
    excitation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPredictor {
    poles: Option<Vec<PoleSpec>>,
    q: Option<usize>,
    regularization: Option<f64>,
    condition_cap: Option<f64>,
    update_mode: Option<UpdateMode>,
    solve_every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    checkpoints: Option<Vec<u64>>,
    decomposition: Option<bool>,
    region: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    q_max: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTau {
    lambda: Option<Vec<PoleSpec>>,
    radii: Option<usize>,
    angles: Option<usize>,
    radius_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    seeds: Option<SeedSpec>,
    horizon: Option<u64>,
    delta: Option<f64>,
    #[serde(default)]
    plant: RawPlant,
    #[serde(default)]
    predictor: RawPredictor,
    diffusion: Option<DiffusionConfig>,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    bias_sweep: RawSweep,
    #[serde(default)]
    tau_table: RawTau,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantSection {
    pub source: PlantSource,
    pub dim: usize,
    /// Fixed parameter seed; each experiment draws its own plant when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub excitation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictorSection {
    pub poles: Vec<PoleSpec>,
    pub q: usize,
    pub regularization: f64,
    pub condition_cap: f64,
    pub update_mode: UpdateMode,
    pub solve_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    pub decomposition: bool,
    pub region: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSection {
    pub q_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauSection {
    pub lambda: Vec<PoleSpec>,
    pub radii: usize,
    pub angles: usize,
    pub radius_max: f64,
}

/// Configuration with every default resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub horizon: u64,
    pub delta: f64,
    pub plant: PlantSection,
    pub predictor: PredictorSection,
    pub diffusion: DiffusionConfig,
    pub output: OutputSection,
    pub bias_sweep: SweepSection,
    pub tau_table: TauSection,
}

impl RunConfig {
    /// Deterministic TOML rendering of the resolved configuration.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("resolved configuration is serializable")
    }

    pub fn predictor_config(&self, input_dim: usize, output_dim: usize) -> PredictorConfig {
        let p = &self.predictor;
        let mut cfg = PredictorConfig::new(
            p.poles.iter().map(|s| s.value()).collect(),
            p.q,
            input_dim,
            output_dim,
        );
        cfg.regularization = p.regularization;
        cfg.condition_cap = p.condition_cap;
        cfg.update_mode = p.update_mode;
        cfg.solve_every = p.solve_every;
        cfg
    }
}

/// Overrides taken from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seeds: Option<Vec<u64>>,
}

pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError {
            key: String::new(),
            line: None,
            message: format!("cannot read {}: {e}", p.display()),
        })?,
        None => String::new(),
    };
    let base = path.and_then(Path::parent).unwrap_or(Path::new("."));
    parse_config(&text, base, overrides)
}

pub fn parse_config(text: &str, base_dir: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = deserialize(text)?;
    let spans = Spans::new(text);

    let mode = match (overrides.mode, raw.mode) {
        (Some(cli), Some(file)) if cli != file => {
            return Err(spans.error(
                &["mode"],
                None,
                format!("file says `{}` but the command is `{}`", file.name(), cli.name()),
            ))
        }
        (Some(m), _) | (None, Some(m)) => m,
        (None, None) => return Err(spans.error(&["mode"], None, "missing run mode".into())),
    };

    let seeds = match (&overrides.seeds, &raw.seeds) {
        (Some(s), _) => s.clone(),
        (None, Some(spec)) => spec.expand().map_err(|m| spans.error(&["seeds"], None, m))?,
        (None, None) => vec![1],
    };
    if seeds.is_empty() {
        return Err(spans.error(&["seeds"], None, "seed list is empty".into()));
    }

    let diffusion_mode = mode == Mode::BenchDiffusion;
    let source = raw.plant.source.unwrap_or(if diffusion_mode {
        PlantSource::Diffusion
    } else {
        PlantSource::Random
    });
    if diffusion_mode && source != PlantSource::Diffusion {
        return Err(spans.error(&["plant", "source"], None, "bench-diffusion needs the diffusion plant".into()));
    }
    let diffusion = raw.diffusion.clone().unwrap_or_default();
    let horizon = raw.horizon.unwrap_or(if source == PlantSource::Diffusion {
        diffusion.horizon as u64
    } else {
        100_000
    });
    if horizon == 0 && matches!(mode, Mode::Regret | Mode::BenchDiffusion) {
        return Err(spans.error(&["horizon"], None, "horizon must be at least 1".into()));
    }
    let mut diffusion = diffusion;
    diffusion.horizon = horizon as usize;

    let plant = PlantSection {
        source,
        dim: raw.plant.dim.unwrap_or(4),
        seed: raw.plant.seed,
        path: raw.plant.path.as_ref().map(|p| if p.is_absolute() { p.clone() } else { base_dir.join(p) }),
        excitation: raw.plant.excitation.unwrap_or(diffusion.input_variance),
    };
    if plant.dim == 0 {
        return Err(spans.error(&["plant", "dim"], None, "plant dimension must be at least 1".into()));
    }
    if !(plant.excitation > 0.0) {
        return Err(spans.error(&["plant", "excitation"], None, "excitation variance must be positive".into()));
    }
    if source == PlantSource::File {
        match &plant.path {
            None => return Err(spans.error(&["plant", "path"], None, "file plant needs `path`".into())),
            Some(p) if !p.is_file() => {
                return Err(spans.error(&["plant", "path"], None, format!("{} does not exist", p.display())))
            }
            _ => {}
        }
    }

    let (default_pole, default_q) = if source == PlantSource::Diffusion {
        (DEFAULT_LAGUERRE_POLE, DEFAULT_BASES)
    } else {
        (0.4, 1)
    };
    let rp = &raw.predictor;
    let predictor = PredictorSection {
        poles: rp.poles.clone().unwrap_or(vec![PoleSpec::Real(default_pole)]),
        q: rp.q.unwrap_or(default_q),
        regularization: rp.regularization.unwrap_or(DEFAULT_REGULARIZATION),
        condition_cap: rp.condition_cap.unwrap_or(DEFAULT_CONDITION_CAP),
        update_mode: rp.update_mode.unwrap_or(UpdateMode::Batch),
        solve_every: rp.solve_every.unwrap_or(1),
    };
    validate_poles(&spans, &["predictor", "poles"], &predictor.poles)?;
    if predictor.q == 0 && mode != Mode::TauTable {
        return Err(spans.error(&["predictor", "q"], None, "q must be at least 1".into()));
    }
    if !(predictor.regularization >= 0.0 && predictor.regularization.is_finite()) {
        return Err(spans.error(&["predictor", "regularization"], None, "must be finite and nonnegative".into()));
    }
    if predictor.update_mode == UpdateMode::Recursive && predictor.regularization == 0.0 {
        return Err(spans.error(&["predictor", "regularization"], None, "recursive mode needs a positive value".into()));
    }
    if !(predictor.condition_cap >= 1.0) {
        return Err(spans.error(&["predictor", "condition_cap"], None, "must be at least 1".into()));
    }
    if predictor.solve_every == 0 {
        return Err(spans.error(&["predictor", "solve_every"], None, "must be at least 1".into()));
    }

    let delta = raw.delta.unwrap_or(obfarx_core::regret::DEFAULT_DELTA);
    if !(0.0..1.0).contains(&delta) {
        return Err(spans.error(&["delta"], None, "δ must lie in [0, 1)".into()));
    }

    if source == PlantSource::Diffusion {
        validate_diffusion(&spans, &diffusion)?;
    }

    let output = OutputSection {
        checkpoints: raw.output.checkpoints.clone(),
        decomposition: raw.output.decomposition.unwrap_or(false),
        region: raw.output.region.unwrap_or(source == PlantSource::Diffusion),
    };
    if let Some(c) = &output.checkpoints {
        if c.is_empty() || c.iter().any(|&n| n == 0 || n > horizon) {
            return Err(spans.error(&["output", "checkpoints"], None, format!("checkpoints must lie in 1..={horizon}")));
        }
    }

    let bias_sweep = SweepSection {
        q_max: raw.bias_sweep.q_max.unwrap_or(10),
    };
    if bias_sweep.q_max == 0 {
        return Err(spans.error(&["bias_sweep", "q_max"], None, "q_max must be at least 1".into()));
    }

    let rt = &raw.tau_table;
    let tau_table = TauSection {
        lambda: rt.lambda.clone().unwrap_or(vec![PoleSpec::Real(0.9)]),
        radii: rt.radii.unwrap_or(20),
        angles: rt.angles.unwrap_or(16),
        radius_max: rt.radius_max.unwrap_or(0.95),
    };
    for (i, l) in tau_table.lambda.iter().enumerate() {
        if !(l.value().norm() < 1.0) {
            return Err(spans.error(
                &["tau_table", "lambda"],
                Some(i),
                format!("eigenvalue {i} has modulus {:.4} ≥ 1", l.value().norm()),
            ));
        }
    }
    if tau_table.radii < 2 || tau_table.angles == 0 {
        return Err(spans.error(&["tau_table", "radii"], None, "need at least 2 radii and 1 angle".into()));
    }
    if !(tau_table.radius_max > 0.0 && tau_table.radius_max < 1.0) {
        return Err(spans.error(&["tau_table", "radius_max"], None, "must lie in (0, 1)".into()));
    }

    Ok(RunConfig {
        mode,
        seeds,
        horizon,
        delta,
        plant,
        predictor,
        diffusion,
        output,
        bias_sweep,
        tau_table,
    })
}

fn deserialize(text: &str) -> Result<RawConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| toml_error(text, String::new(), &e))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let key = if key == "." { String::new() } else { key };
        toml_error(text, key, e.inner())
    })
}

fn toml_error(text: &str, key: String, e: &toml::de::Error) -> ConfigError {
    ConfigError {
        key,
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn validate_poles(spans: &Spans, key: &[&str], poles: &[PoleSpec]) -> Result<(), ConfigError> {
    if poles.is_empty() {
        return Err(spans.error(key, None, "at least one pole is required".into()));
    }
    let values: Vec<Complex64> = poles.iter().map(|p| p.value()).collect();
    match balanced_allpass(&values) {
        Ok(_) => Ok(()),
        Err(CoreError::InvalidPole { index, reason }) => {
            Err(spans.error(key, Some(index), format!("pole {index}: {reason}")))
        }
        Err(e) => Err(spans.error(key, None, e.to_string())),
    }
}

fn validate_diffusion(spans: &Spans, d: &DiffusionConfig) -> Result<(), ConfigError> {
    let [lo, hi] = d.alpha_range;
    if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
        return Err(spans.error(&["diffusion", "alpha_range"], None, "need 0 ≤ lo ≤ hi".into()));
    }
    if d.cells_per_side == 0 {
        return Err(spans.error(&["diffusion", "cells_per_side"], None, "must be at least 1".into()));
    }
    let dx = d.region.side / d.cells_per_side as f64;
    let r = hi * d.dt / (dx * dx);
    if !(d.dt > 0.0) || r > 0.25 {
        return Err(spans.error(
            &["diffusion", "alpha_range"],
            None,
            format!("α·dt/dx² = {r:.4} exceeds the explicit-Euler limit 0.25"),
        ));
    }
    if !(d.measurement_noise > 0.0) {
        return Err(spans.error(&["diffusion", "measurement_noise"], None, "must be positive".into()));
    }
    if !(d.input_variance > 0.0) {
        return Err(spans.error(&["diffusion", "input_variance"], None, "must be positive".into()));
    }
    build_region(&d.region, d.cells_per_side)
        .map_err(|e| spans.error(&["diffusion", "region"], None, e.to_string()))?;
    Ok(())
}

/// Line lookup for keys of a parsed document.
struct Spans<'a> {
    text: &'a str,
    root: Option<toml::Spanned<toml::de::DeTable<'a>>>,
}

impl<'a> Spans<'a> {
    fn new(text: &'a str) -> Self {
        Spans {
            text,
            root: toml::de::DeTable::parse(text).ok(),
        }
    }

    fn line(&self, path: &[&str], index: Option<usize>) -> Option<usize> {
        let root = self.root.as_ref()?;
        let mut table = root.get_ref();
        let mut found: Option<&toml::Spanned<toml::de::DeValue<'_>>> = None;
        for (i, seg) in path.iter().enumerate() {
            let (_, v) = table.iter().find(|(k, _)| k.get_ref() == seg)?;
            found = Some(v);
            if i + 1 < path.len() {
                match v.get_ref() {
                    toml::de::DeValue::Table(t) => table = t,
                    _ => return None,
                }
            }
        }
        let mut value = found?;
        if let (Some(i), toml::de::DeValue::Array(items)) = (index, value.get_ref()) {
            value = items.get(i)?;
        }
        Some(line_of(self.text, value.span().start))
    }

    fn error(&self, path: &[&str], index: Option<usize>, message: String) -> ConfigError {
        let mut key = path.join(".");
        if let Some(i) = index {
            key.push_str(&format!("[{i}]"));
        }
        ConfigError {
            line: self.line(path, index),
            key,
            message,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config(text, Path::new("."), &Overrides::default())
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("mode = \"regret\"\nseeds = \"1..3\"\n").unwrap();
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.horizon, 100_000);
        assert_eq!(cfg.plant.source, PlantSource::Random);
        assert_eq!(cfg.predictor.q, 1);
        assert_eq!(cfg.predictor.poles, vec![PoleSpec::Real(0.4)]);
        assert_eq!(cfg.predictor.condition_cap, 1e12);
    }

    #[test]
    fn diffusion_defaults() {
        let cfg = parse("mode = \"bench-diffusion\"\n").unwrap();
        assert_eq!(cfg.horizon, 2000);
        assert_eq!(cfg.predictor.q, 10);
        assert_eq!(cfg.plant.source, PlantSource::Diffusion);
        assert!(cfg.output.region);
    }

    #[test]
    fn bad_pole_names_index_and_line() {
        let text = "mode = \"regret\"\n\n[predictor]\npoles = [0.3,\n  1.2]\n";
        let err = parse(text).unwrap_err();
        assert_eq!(err.key, "predictor.poles[1]");
        assert_eq!(err.line, Some(5));
        assert!(err.message.contains("pole 1"), "{err}");
    }

    #[test]
    fn unknown_key_reports_path_and_line() {
        let text = "mode = \"regret\"\n[predictor]\nq = 2\nbogus = 1\n";
        let err = parse(text).unwrap_err();
        assert!(err.key.starts_with("predictor"), "{err}");
        assert_eq!(err.line, Some(4), "{err}");
        assert!(err.message.contains("bogus"), "{err}");
    }

    #[test]
    fn type_mismatch_reports_path() {
        let err = parse("mode = \"regret\"\nhorizon = \"long\"\n").unwrap_err();
        assert_eq!(err.key, "horizon");
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn seed_forms() {
        assert_eq!(parse_seed_range("3..5").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seed_range("3..=5").unwrap(), vec![3, 4, 5]);
        assert!(parse_seed_range("5..3").is_err());
        let cfg = parse("mode = \"regret\"\nseeds = { count = 3, base = 10 }\n").unwrap();
        assert_eq!(cfg.seeds, vec![10, 11, 12]);
        let cfg = parse("mode = \"regret\"\nseeds = [4, 2]\n").unwrap();
        assert_eq!(cfg.seeds, vec![4, 2]);
        assert!(parse("mode = \"regret\"\nseeds = []\n").is_err());
    }

    #[test]
    fn mode_conflict_rejected() {
        let o = Overrides { mode: Some(Mode::TauTable), seeds: None };
        let err = parse_config("mode = \"regret\"\n", Path::new("."), &o).unwrap_err();
        assert_eq!(err.key, "mode");
        assert_eq!(err.line, Some(1));
    }

    #[test]
    fn unstable_diffusion_rejected() {
        let text = "mode = \"bench-diffusion\"\n[diffusion]\nalpha_range = [0.005, 0.5]\n";
        let err = parse(text).unwrap_err();
        assert_eq!(err.key, "diffusion.alpha_range");
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn complex_poles_need_partner() {
        let text = "mode = \"regret\"\n[predictor]\npoles = [[0.3, 0.2]]\n";
        let err = parse(text).unwrap_err();
        assert_eq!(err.key, "predictor.poles[0]");
        let ok = "mode = \"regret\"\n[predictor]\npoles = [[0.3, 0.2], [0.3, -0.2]]\n";
        assert_eq!(parse(ok).unwrap().predictor.poles.len(), 2);
    }

    #[test]
    fn echo_is_stable_and_reparses() {
        let cfg = parse("mode = \"bench-diffusion\"\nseeds = \"1..2\"\n").unwrap();
        let a = cfg.echo();
        assert_eq!(a, cfg.echo());
        assert!(a.contains("alpha_range"));
    }
}
