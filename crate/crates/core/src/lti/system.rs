use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, expect_shape, min_eigenvalue_sym};

/// Dense discrete-time LTI system
/// `x(t+1) = A x(t) + B u(t)`, `y(t) = C x(t) + D u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    #[serde(with = "crate::serde_matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub c: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let sys = StateSpace { a, b, c, d };
        sys.validate()?;
        Ok(sys)
    }

    /// System with zero feedthrough.
    pub fn strictly_proper(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let d = DMatrix::zeros(c.nrows(), b.ncols());
        Self::new(a, b, c, d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        expect_shape("state matrix A", &self.a, n, n)?;
        expect_shape("input matrix B", &self.b, n, self.b.ncols())?;
        expect_shape("output matrix C", &self.c, self.c.nrows(), n)?;
        expect_shape("feedthrough D", &self.d, self.c.nrows(), self.b.ncols())?;
        if ![&self.a, &self.b, &self.c, &self.d]
            .iter()
            .all(|m| linalg::is_finite(m))
        {
            return Err(Error::InvalidArgument(
                "state-space matrices must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        linalg::spectral_radius(&self.a)
    }

    /// Checks `ρ(A) < 1` and returns ρ.
    pub fn ensure_stable(&self, context: &'static str) -> Result<f64> {
        let rho = self.spectral_radius()?;
        if rho < 1.0 {
            Ok(rho)
        } else {
            Err(Error::Unstable {
                context,
                spectral_radius: rho,
            })
        }
    }

    pub fn has_zero_feedthrough(&self) -> bool {
        self.d.iter().all(|&x| x == 0.0)
    }
}

/// Process (`q`) and measurement (`r`) noise covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(with = "crate::serde_matrix")]
    pub q: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub r: DMatrix<f64>,
}

pub const PSD_TOLERANCE: f64 = -1e-10;

impl NoiseSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_psd("process noise covariance Q", &q)?;
        check_psd("measurement noise covariance R", &r)?;
        Ok(NoiseSpec { q, r })
    }

    pub fn zeros(state_dim: usize, output_dim: usize) -> Self {
        NoiseSpec {
            q: DMatrix::zeros(state_dim, state_dim),
            r: DMatrix::zeros(output_dim, output_dim),
        }
    }

    pub fn check_against(&self, sys: &StateSpace) -> Result<()> {
        expect_shape("noise Q", &self.q, sys.state_dim(), sys.state_dim())?;
        expect_shape("noise R", &self.r, sys.output_dim(), sys.output_dim())
    }

    /// Plant noise must additionally have `R ≻ 0`.
    pub fn check_plant(&self, sys: &StateSpace) -> Result<()> {
        self.check_against(sys)?;
        if self.r.nrows() > 0 && min_eigenvalue_sym(&self.r) <= 0.0 {
            return Err(Error::InvalidArgument(
                "plant measurement noise covariance R must be positive definite".into(),
            ));
        }
        Ok(())
    }
}

fn check_psd(what: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dims(what, "square matrix", linalg::shape(m)));
    }
    let scale = 1.0 + m.amax();
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidArgument(format!("{what} must be symmetric")));
    }
    let lambda = min_eigenvalue_sym(m);
    if lambda < PSD_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "{what} is not positive semidefinite (min eigenvalue {lambda:.3e})"
        )));
    }
    Ok(())
}

/// Recorded input/output (and optionally state) samples, one row per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(with = "crate::serde_matrix")]
    pub inputs: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub outputs: DMatrix<f64>,
    pub states: Option<RowStates>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowStates(#[serde(with = "crate::serde_matrix")] pub DMatrix<f64>);

impl Trajectory {
    pub fn len(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
