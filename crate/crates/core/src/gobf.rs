//! Generalized orthonormal basis functions.
//!
//! An [`InnerFunction`] is a balanced realization `(A_b, B_b, C_b, D_b)` of the
//! all-pass filter `G_b(z) = Π_k (1 − μ̄_k z) / (z − μ_k)`. A [`GobfBank`]
//! chains `q` copies of it so that basis `j + (k−1) n_b` is
//! `e_jᵀ (zI − A_b)⁻¹ B_b G_b(z)^{k−1}`.
//!
//! Bank outputs are ordered basis-major, channel-minor: for input channels
//! `s = [u; y]` the regressor is `(V₁s; V₂s; …)` with `V_k s` listing every
//! channel of `s` in order.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lti::StateSpace;

/// Poles with |Im| at or below this are treated as real.
const REAL_TOL: f64 = 1e-12;
/// Conjugate partners must agree to this tolerance.
const PAIR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct InnerFunction {
    pub poles: Vec<Complex64>,
    pub realization: StateSpace,
}

impl InnerFunction {
    pub fn order(&self) -> usize {
        self.realization.state_dim()
    }

    /// `G_b(e^{iω})` from the realization.
    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        let sys = &self.realization;
        let n = sys.state_dim();
        let z = Complex64::from_polar(1.0, omega);
        let resolvent = resolvent_apply(&sys.a, &sys.b, z);
        let mut g = Complex64::new(sys.d[(0, 0)], 0.0);
        for i in 0..n {
            g += sys.c[(0, i)] * resolvent[i];
        }
        g
    }

    /// Largest deviation of `[[A_b, B_b], [C_b, D_b]]ᵀ [[A_b, B_b], [C_b, D_b]]`
    /// from the identity.
    pub fn orthogonality_defect(&self) -> f64 {
        let m = self.system_matrix();
        let k = m.nrows();
        (m.transpose() * &m - DMatrix::<f64>::identity(k, k)).amax()
    }

    pub fn system_matrix(&self) -> DMatrix<f64> {
        let sys = &self.realization;
        let n = sys.state_dim();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&sys.a);
        m.view_mut((0, n), (n, 1)).copy_from(&sys.b);
        m.view_mut((n, 0), (1, n)).copy_from(&sys.c);
        m[(n, n)] = sys.d[(0, 0)];
        m
    }
}

/// Balanced realization of the all-pass filter with the given poles.
///
/// Real poles become 1×1 sections, conjugate pairs 2×2 sections; sections are
/// cascaded in order of first appearance. A complex pole without its
/// conjugate is rejected.
pub fn balanced_allpass(poles: &[Complex64]) -> Result<InnerFunction> {
    if poles.is_empty() {
        return Err(Error::InvalidArgument(
            "inner function needs at least one pole".into(),
        ));
    }
    for (index, p) in poles.iter().enumerate() {
        if !(p.re.is_finite() && p.im.is_finite()) {
            return Err(Error::InvalidPole {
                index,
                reason: "pole is not finite".into(),
            });
        }
        if p.norm() >= 1.0 {
            return Err(Error::InvalidPole {
                index,
                reason: format!("modulus {:.6} is not inside the unit disc", p.norm()),
            });
        }
    }

    let mut used = vec![false; poles.len()];
    let mut sections = Vec::new();
    let mut normalized = Vec::with_capacity(poles.len());
    for i in 0..poles.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let p = poles[i];
        if p.im.abs() <= REAL_TOL {
            sections.push(real_section(p.re));
            normalized.push(Complex64::new(p.re, 0.0));
            continue;
        }
        let partner = (0..poles.len())
            .find(|&j| !used[j] && (poles[j] - p.conj()).norm() <= PAIR_TOL)
            .ok_or_else(|| Error::InvalidPole {
                index: i,
                reason: format!("complex pole {p} has no conjugate partner"),
            })?;
        used[partner] = true;
        sections.push(complex_section(p)?);
        normalized.push(p);
        normalized.push(p.conj());
    }

    let mut realization = sections.remove(0);
    for s in sections {
        realization = cascade(&realization, &s)?;
    }
    Ok(InnerFunction {
        poles: normalized,
        realization,
    })
}

fn real_section(a: f64) -> StateSpace {
    let s = (1.0 - a * a).sqrt();
    StateSpace {
        a: DMatrix::from_element(1, 1, a),
        b: DMatrix::from_element(1, 1, s),
        c: DMatrix::from_element(1, 1, s),
        d: DMatrix::from_element(1, 1, -a),
    }
}

/// 2×2 section for the pair (μ, μ̄): controllable canonical form balanced by
/// the Cholesky factor of its reachability Gramian.
fn complex_section(mu: Complex64) -> Result<StateSpace> {
    let a1 = -2.0 * mu.re;
    let a2 = mu.norm_sqr();
    let a = DMatrix::from_row_slice(2, 2, &[-a1, -a2, 1.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let c = DMatrix::from_row_slice(1, 2, &[a1 * (1.0 - a2), 1.0 - a2 * a2]);

    // (I − A⊗A) vec(P) = vec(B Bᵀ)
    let kron = DMatrix::<f64>::identity(4, 4) - a.kronecker(&a);
    let bb = &b * b.transpose();
    let rhs = DVector::from_column_slice(bb.as_slice());
    let vec_p = kron
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("all-pass reachability Gramian"))?;
    let mut gram = DMatrix::from_column_slice(2, 2, vec_p.as_slice());
    crate::linalg::symmetrize(&mut gram);
    let chol = gram
        .cholesky()
        .ok_or(Error::Singular("all-pass reachability Gramian"))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("all-pass reachability Gramian"))?;
    Ok(StateSpace {
        a: &l_inv * &a * &l,
        b: &l_inv * &b,
        c: &c * &l,
        d: DMatrix::from_element(1, 1, a2),
    })
}

/// Series connection: `first` feeds `second`.
fn cascade(first: &StateSpace, second: &StateSpace) -> Result<StateSpace> {
    let (n1, n2) = (first.state_dim(), second.state_dim());
    let n = n1 + n2;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n1, n1)).copy_from(&first.a);
    a.view_mut((n1, 0), (n2, n1)).copy_from(&(&second.b * &first.c));
    a.view_mut((n1, n1), (n2, n2)).copy_from(&second.a);
    let mut b = DMatrix::zeros(n, 1);
    b.view_mut((0, 0), (n1, 1)).copy_from(&first.b);
    b.view_mut((n1, 0), (n2, 1)).copy_from(&(&second.b * &first.d));
    let mut c = DMatrix::zeros(1, n);
    c.view_mut((0, 0), (1, n1)).copy_from(&(&second.d * &first.c));
    c.view_mut((0, n1), (1, n2)).copy_from(&second.c);
    let d = &second.d * &first.d;
    StateSpace::new(a, b, c, d)
}

/// `(zI − A)⁻¹ B` for a single-column `B`.
fn resolvent_apply(a: &DMatrix<f64>, b: &DMatrix<f64>, z: Complex64) -> DVector<Complex64> {
    let n = a.nrows();
    if n == 0 {
        return DVector::zeros(0);
    }
    let m = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { z } else { Complex64::new(0.0, 0.0) };
        diag - Complex64::new(a[(i, j)], 0.0)
    });
    let rhs = DVector::from_fn(n, |i, _| Complex64::new(b[(i, 0)], 0.0));
    m.lu()
        .solve(&rhs)
        .unwrap_or_else(|| DVector::from_element(n, Complex64::new(f64::NAN, f64::NAN)))
}

/// Stacked realization of `V₁ … V_{q·n_b}` applied to every input channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GobfBank {
    pub inner: InnerFunction,
    pub q: usize,
    pub input_dim: usize,
    /// Single-channel chain: `q·n_b` states, one input, identity output.
    pub scalar: StateSpace,
    /// Multi-channel bank: `q·n_b·input_dim` states and outputs.
    pub realization: StateSpace,
}

/// Chains `q` copies of `inner` and replicates the chain over `input_dim`
/// channels. `q = 0` yields an empty bank.
pub fn gobf_bank(inner: &InnerFunction, q: usize, input_dim: usize) -> Result<GobfBank> {
    if input_dim == 0 {
        return Err(Error::InvalidArgument(
            "basis bank needs at least one input channel".into(),
        ));
    }
    let nb = inner.order();
    let (ab, bb, cb, db) = (
        &inner.realization.a,
        &inner.realization.b,
        &inner.realization.c,
        inner.realization.d[(0, 0)],
    );
    let ns = q * nb;
    let mut a = DMatrix::zeros(ns, ns);
    let mut b = DMatrix::zeros(ns, 1);
    let bc = bb * cb;
    for k in 0..q {
        a.view_mut((k * nb, k * nb), (nb, nb)).copy_from(ab);
        // block (k, j): B_b D_b^{k-j-1} C_b
        for j in 0..k {
            let scale = db.powi((k - j - 1) as i32);
            a.view_mut((k * nb, j * nb), (nb, nb)).copy_from(&(&bc * scale));
        }
        b.view_mut((k * nb, 0), (nb, 1))
            .copy_from(&(bb * db.powi(k as i32)));
    }
    let scalar = StateSpace::new(
        a,
        b,
        DMatrix::identity(ns, ns),
        DMatrix::zeros(ns, 1),
    )?;
    let eye = DMatrix::<f64>::identity(input_dim, input_dim);
    let n = ns * input_dim;
    let realization = StateSpace::new(
        scalar.a.kronecker(&eye),
        scalar.b.kronecker(&eye),
        DMatrix::identity(n, n),
        DMatrix::zeros(n, input_dim),
    )?;
    Ok(GobfBank {
        inner: inner.clone(),
        q,
        input_dim,
        scalar,
        realization,
    })
}

impl GobfBank {
    /// Builds a bank from a total basis count, which must be a multiple of
    /// the inner-function order.
    pub fn with_basis_count(inner: &InnerFunction, count: usize, input_dim: usize) -> Result<Self> {
        let nb = inner.order();
        if !count.is_multiple_of(nb) {
            return Err(Error::InvalidArgument(format!(
                "basis count {count} is not a multiple of the inner-function order {nb}"
            )));
        }
        gobf_bank(inner, count / nb, input_dim)
    }

    /// Number of scalar bases `q̌ = q·n_b`.
    pub fn basis_count(&self) -> usize {
        self.scalar.state_dim()
    }

    /// Regressor dimension `q̌ · input_dim`.
    pub fn regressor_dim(&self) -> usize {
        self.realization.state_dim()
    }

    /// `(V₁(e^{iω}), …, V_q̌(e^{iω}))`.
    pub fn frequency_response(&self, omega: f64) -> DVector<Complex64> {
        resolvent_apply(&self.scalar.a, &self.scalar.b, Complex64::from_polar(1.0, omega))
    }

    /// Impulse responses of the scalar bases, one row per time step starting
    /// at `t = 0` (which is always zero: every basis is strictly proper).
    pub fn impulse_response(&self, length: usize) -> DMatrix<f64> {
        let ns = self.basis_count();
        let mut out = DMatrix::zeros(length, ns);
        if length < 2 || ns == 0 {
            return out;
        }
        let mut state = self.scalar.b.column(0).into_owned();
        let mut next = DVector::zeros(ns);
        for t in 1..length {
            out.row_mut(t).copy_from(&state.transpose());
            next.gemv(1.0, &self.scalar.a, &state, 0.0);
            std::mem::swap(&mut state, &mut next);
        }
        out
    }

    pub fn spectral_radius(&self) -> f64 {
        self.inner.poles.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}
