//! Heat diffusion on a square plate with obstacles, discretized into a
//! 100-state LTI plant observed by one noisy temperature sensor.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{evaluate, ExperimentOptions, ExperimentRecord, Setup};
use crate::linalg;
use crate::lti::{NoiseSpec, NoisySystem, StateSpace};
use crate::obf_arx::PredictorConfig;
use crate::rng::{stream, NoiseSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlatSide {
    /// Dome points up; the flat edge faces `y = 0`.
    Down,
    Up,
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Obstacle {
    Circle { center: [f64; 2], radius: f64 },
    HalfCircle { center: [f64; 2], radius: f64, flat_side: FlatSide },
}

impl Obstacle {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Obstacle::Circle { center, radius } => {
                (x - center[0]).powi(2) + (y - center[1]).powi(2) <= radius * radius
            }
            Obstacle::HalfCircle { center, radius, flat_side } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                if dx * dx + dy * dy > radius * radius {
                    return false;
                }
                match flat_side {
                    FlatSide::Down => dy >= 0.0,
                    FlatSide::Up => dy <= 0.0,
                    FlatSide::Left => dx >= 0.0,
                    FlatSide::Right => dx <= 0.0,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSpec {
    pub side: f64,
    pub obstacles: Vec<Obstacle>,
    pub source: [f64; 2],
    pub sensor: [f64; 2],
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec {
            side: 3.0,
            obstacles: vec![
                Obstacle::Circle { center: [0.75, 2.25], radius: 0.1 },
                Obstacle::Circle { center: [2.25, 2.25], radius: 0.1 },
                Obstacle::HalfCircle {
                    center: [1.5, 0.95],
                    radius: 0.55,
                    flat_side: FlatSide::Down,
                },
            ],
            source: [1.5, 2.25],
            sensor: [1.5, 1.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceMode {
    /// The input acts like a neighbor of the source cell held at temperature `u`.
    NeighborForcing,
    /// The source cell is overwritten with `u` every step.
    Clamp,
}

/// Cells are indexed `(ix, iy)` with state index `iy·nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMask {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    /// `true` for free cells.
    pub free: Vec<bool>,
    pub source: (usize, usize),
    pub sensor: (usize, usize),
}

impl CellMask {
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn is_free(&self, ix: usize, iy: usize) -> bool {
        self.free[self.index(ix, iy)]
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    /// Character grid, top row first: `#` obstacle, `.` free, `S` source,
    /// `o` sensor.
    pub fn art(&self) -> String {
        let mut s = String::new();
        for iy in (0..self.ny).rev() {
            for ix in 0..self.nx {
                let ch = if (ix, iy) == self.source {
                    'S'
                } else if (ix, iy) == self.sensor {
                    'o'
                } else if self.is_free(ix, iy) {
                    '.'
                } else {
                    '#'
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}

/// Marks a cell blocked when its center lies inside an obstacle.
pub fn build_region(spec: &RegionSpec, cells_per_side: usize) -> Result<CellMask> {
    if cells_per_side == 0 || !(spec.side > 0.0) {
        return Err(Error::InvalidArgument("grid must have positive size".into()));
    }
    let n = cells_per_side;
    let dx = spec.side / n as f64;
    let mut free = vec![true; n * n];
    for iy in 0..n {
        for ix in 0..n {
            let (cx, cy) = ((ix as f64 + 0.5) * dx, (iy as f64 + 0.5) * dx);
            if spec.obstacles.iter().any(|o| o.contains(cx, cy)) {
                free[iy * n + ix] = false;
            }
        }
    }
    let locate = |what: &str, p: [f64; 2]| -> Result<(usize, usize)> {
        if !(0.0..=spec.side).contains(&p[0]) || !(0.0..=spec.side).contains(&p[1]) {
            return Err(Error::InvalidArgument(format!("{what} lies outside the region")));
        }
        // half-open cells; points on a shared edge go to the upper/right cell
        let cell = |v: f64| ((v / dx + 1e-9).floor() as usize).min(n - 1);
        Ok((cell(p[0]), cell(p[1])))
    };
    let source = locate("source", spec.source)?;
    let sensor = locate("sensor", spec.sensor)?;
    let mask = CellMask { nx: n, ny: n, dx, free, source, sensor };
    if !mask.is_free(source.0, source.1) {
        return Err(Error::InvalidArgument("source cell is inside an obstacle".into()));
    }
    if !mask.is_free(sensor.0, sensor.1) {
        return Err(Error::InvalidArgument("sensor cell is inside an obstacle".into()));
    }
    Ok(mask)
}

/// Explicit-Euler five-point discretization with zero temperature on
/// obstacle cells and outside the plate. Every grid cell is a state;
/// obstacle rows and columns are zero. An axis with a single cell carries no
/// Laplacian term, so a `n×1` grid reduces to the 1-D stencil.
pub fn discretize_heat(
    mask: &CellMask,
    alpha: &[f64],
    dt: f64,
    mode: SourceMode,
) -> Result<StateSpace> {
    let n = mask.nx * mask.ny;
    if alpha.len() != n {
        return Err(Error::dims("diffusion constant field", n, alpha.len()));
    }
    let h2 = mask.dx * mask.dx;
    for (i, &a) in alpha.iter().enumerate() {
        let r = a * dt / h2;
        if !(a >= 0.0) || r > 0.25 {
            return Err(Error::InvalidArgument(format!(
                "cell {i}: α·dt/dx² = {r:.4} violates explicit-Euler stability (must be in [0, 0.25])"
            )));
        }
    }

    let axes = (mask.nx > 1) as usize + (mask.ny > 1) as usize;
    let mut a = DMatrix::zeros(n, n);
    for iy in 0..mask.ny {
        for ix in 0..mask.nx {
            if !mask.is_free(ix, iy) {
                continue;
            }
            let i = mask.index(ix, iy);
            let r = alpha[i] * dt / h2;
            a[(i, i)] = 1.0 - 2.0 * axes as f64 * r;
            let neighbors = [
                (ix.wrapping_sub(1), iy),
                (ix + 1, iy),
                (ix, iy.wrapping_sub(1)),
                (ix, iy + 1),
            ];
            for (jx, jy) in neighbors {
                if jx < mask.nx && jy < mask.ny && mask.is_free(jx, jy) {
                    a[(i, mask.index(jx, jy))] = r;
                }
            }
        }
    }

    let src = mask.index(mask.source.0, mask.source.1);
    let mut b = DMatrix::zeros(n, 1);
    match mode {
        SourceMode::NeighborForcing => b[(src, 0)] = alpha[src] * dt / h2,
        SourceMode::Clamp => {
            a.row_mut(src).fill(0.0);
            b[(src, 0)] = 1.0;
        }
    }
    let mut c = DMatrix::zeros(1, n);
    c[(0, mask.index(mask.sensor.0, mask.sensor.1))] = 1.0;
    StateSpace::strictly_proper(a, b, c)
}

/// Laguerre pole used by the benchmark. No plant knowledge goes into it.
pub const DEFAULT_LAGUERRE_POLE: f64 = 0.5;
pub const DEFAULT_BASES: usize = 10;

/// Predictor used by the benchmark: 10 Laguerre bases per channel.
pub fn default_predictor() -> PredictorConfig {
    PredictorConfig::laguerre(DEFAULT_LAGUERRE_POLE, DEFAULT_BASES, 1, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub region: RegionSpec,
    pub cells_per_side: usize,
    pub dt: f64,
    /// Diffusion constants are drawn uniformly from this interval.
    pub alpha_range: [f64; 2],
    /// Draw one constant per cell instead of one per experiment.
    pub per_cell_alpha: bool,
    pub measurement_noise: f64,
    pub input_variance: f64,
    pub horizon: usize,
    pub source_mode: SourceMode,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            region: RegionSpec::default(),
            cells_per_side: 10,
            dt: 0.1,
            alpha_range: [0.005, 0.02],
            per_cell_alpha: false,
            measurement_noise: 0.01,
            input_variance: 1.0,
            horizon: 2000,
            source_mode: SourceMode::Clamp,
        }
    }
}

/// Diffusion plant for one experiment; `alpha` is the drawn constant (the
/// mean when drawn per cell).
#[derive(Debug, Clone)]
pub struct DiffusionPlant {
    pub plant: NoisySystem,
    pub mask: CellMask,
    pub alpha: f64,
}

pub fn diffusion_plant(config: &DiffusionConfig, seed: u64) -> Result<DiffusionPlant> {
    let [lo, hi] = config.alpha_range;
    if !(0.0 <= lo && lo <= hi) {
        return Err(Error::InvalidArgument("alpha_range must satisfy 0 ≤ lo ≤ hi".into()));
    }
    let mask = build_region(&config.region, config.cells_per_side)?;
    let n = mask.nx * mask.ny;
    let mut rng = stream(seed, NoiseSource::Parameters);
    let draw = |rng: &mut ChaCha8Rng| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let field: Vec<f64> = if config.per_cell_alpha {
        (0..n).map(|_| draw(&mut rng)).collect()
    } else {
        vec![draw(&mut rng); n]
    };
    let alpha = field.iter().sum::<f64>() / n as f64;
    let sys = discretize_heat(&mask, &field, config.dt, config.source_mode)?;
    sys.ensure_stable("diffusion plant")?;
    if !(config.measurement_noise > 0.0) {
        return Err(Error::InvalidArgument("measurement noise must be positive".into()));
    }
    let noise = NoiseSpec::new(
        DMatrix::zeros(n, n),
        DMatrix::from_element(1, 1, config.measurement_noise),
    )?;
    noise.check_plant(&sys)?;
    Ok(DiffusionPlant {
        plant: NoisySystem::new(sys, noise)?,
        mask,
        alpha,
    })
}

pub fn diffusion_setup(config: &DiffusionConfig, seed: u64) -> Result<Setup> {
    let d = diffusion_plant(config, seed)?;
    if !(config.input_variance > 0.0) {
        return Err(Error::InvalidArgument("input variance must be positive".into()));
    }
    Setup::white_noise(
        d.plant,
        DMatrix::from_element(1, 1, config.input_variance),
        Some(d.alpha),
    )
}

/// One diffusion experiment over `config.horizon` steps.
pub fn run_experiment(
    config: &DiffusionConfig,
    predictor: &PredictorConfig,
    seed: u64,
    decomposition: bool,
) -> Result<ExperimentRecord> {
    let setup = diffusion_setup(config, seed)?;
    let opts = ExperimentOptions {
        horizon: config.horizon as u64,
        decomposition,
        ..Default::default()
    };
    evaluate(&setup, predictor, seed, &opts)
}

/// Random single-input single-output plant with spectral radius drawn
/// uniformly from `[0.3, 0.95]`.
pub fn random_stable_plant(dim: usize, seed: u64) -> Result<NoisySystem> {
    random_stable_plant_io(dim, 1, 1, seed)
}

pub fn random_stable_plant_io(
    dim: usize,
    inputs: usize,
    outputs: usize,
    seed: u64,
) -> Result<NoisySystem> {
    if dim == 0 || outputs == 0 {
        return Err(Error::InvalidArgument(
            "random plant needs at least one state and one output".into(),
        ));
    }
    let mut rng = stream(seed, NoiseSource::Parameters);
    let mut normal = |rows: usize, cols: usize| {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    let raw = normal(dim, dim);
    let b = normal(dim, inputs);
    let c = normal(outputs, dim);
    let g = normal(dim, dim);
    let rg = normal(outputs, outputs);
    let target = rng.random_range(0.3..0.95);
    let rho = linalg::spectral_radius(&raw)?;
    let a = if rho > 0.0 { raw * (target / rho) } else { raw };
    let mut q = &g * g.transpose() / dim as f64;
    linalg::symmetrize(&mut q);
    let mut r = &rg * rg.transpose() / outputs as f64 + DMatrix::identity(outputs, outputs) * 0.1;
    linalg::symmetrize(&mut r);
    let sys = StateSpace::strictly_proper(a, b, c)?;
    let noise = NoiseSpec::new(q, r)?;
    noise.check_plant(&sys)?;
    NoisySystem::new(sys, noise)
}
