use nalgebra::{Cholesky, DMatrix, Dyn};

/// Normal-equation solver `L = W_{y x̌} W_{x̌ x̌}⁻¹` with reusable buffers.
///
/// The regressor block is accepted only when its 2-norm condition number is
/// at most the cap. `trace(W) trace(W⁻¹)` bounds the condition number from
/// above and costs one triangular inverse; exact eigenvalues are computed
/// only when that bound exceeds the cap.
#[derive(Debug, Clone)]
pub struct BatchSolver {
    p: usize,
    nx: usize,
    gram: DMatrix<f64>,
    rhs: DMatrix<f64>,
    inv_l: DMatrix<f64>,
}

impl BatchSolver {
    pub fn new(p: usize, nx: usize) -> Self {
        BatchSolver {
            p,
            nx,
            gram: DMatrix::zeros(nx, nx),
            rhs: DMatrix::zeros(nx, p),
            inv_l: DMatrix::zeros(nx, nx),
        }
    }

    /// Writes the solution into `out` and returns `true`, or leaves `out`
    /// untouched and returns `false` when the regressor block is too badly
    /// conditioned.
    pub fn solve(&mut self, w: &DMatrix<f64>, condition_cap: f64, out: &mut DMatrix<f64>) -> bool {
        let (p, nx) = (self.p, self.nx);
        if nx == 0 {
            return true;
        }
        self.gram.copy_from(&w.view((p, p), (nx, nx)));
        let trace: f64 = self.gram.diagonal().sum();
        if !(trace > 0.0) || !trace.is_finite() {
            return false;
        }
        let buffer = std::mem::replace(&mut self.gram, DMatrix::zeros(0, 0));
        let Some(chol) = Cholesky::<f64, Dyn>::new(buffer) else {
            self.gram = DMatrix::zeros(nx, nx);
            return false;
        };

        if !self.condition_ok(&chol, trace, w, condition_cap) {
            self.gram = chol.unpack();
            return false;
        }

        for i in 0..nx {
            for j in 0..p {
                self.rhs[(i, j)] = w[(j, p + i)];
            }
        }
        chol.solve_mut(&mut self.rhs);
        self.gram = chol.unpack();
        if !self.rhs.iter().all(|v| v.is_finite()) {
            return false;
        }
        for i in 0..p {
            for j in 0..nx {
                out[(i, j)] = self.rhs[(j, i)];
            }
        }
        true
    }

    fn condition_ok(
        &mut self,
        chol: &Cholesky<f64, Dyn>,
        trace: f64,
        w: &DMatrix<f64>,
        cap: f64,
    ) -> bool {
        let nx = self.nx;
        // ‖L⁻¹‖_F² = trace(W⁻¹)
        self.inv_l.fill_with_identity();
        let factor = chol.l_dirty();
        if !factor.solve_lower_triangular_mut(&mut self.inv_l) {
            return false;
        }
        let mut trace_inv = 0.0;
        for j in 0..nx {
            for i in j..nx {
                trace_inv += self.inv_l[(i, j)] * self.inv_l[(i, j)];
            }
        }
        if !trace_inv.is_finite() {
            return false;
        }
        if trace * trace_inv <= cap {
            return true;
        }
        let block = w.view((self.p, self.p), (nx, nx)).into_owned();
        let eig = block.symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        lo > 0.0 && hi / lo <= cap
    }
}

/// Allocating convenience wrapper: `Some(L)` when `W_{x̌ x̌}` (the trailing
/// block after the first `p` rows and columns) passes the condition check.
pub fn batch_solve(w: &DMatrix<f64>, p: usize, condition_cap: f64) -> Option<DMatrix<f64>> {
    let n = w.nrows();
    if w.ncols() != n || p > n {
        return None;
    }
    let nx = n - p;
    let mut solver = BatchSolver::new(p, nx);
    let mut out = DMatrix::zeros(p, nx);
    solver.solve(w, condition_cap, &mut out).then_some(out)
}
