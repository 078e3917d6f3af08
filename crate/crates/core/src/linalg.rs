//! Small dense helpers: a Cholesky factor that reports singularity instead of
//! panicking, and compensated accumulation for matrix sums.

use nalgebra::DMatrix;

/// A pivot `d_k` is treated as zero when `d_k <= PIVOT_RTOL * max_{i<=k} a_ii`.
pub(crate) const PIVOT_RTOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor `A = G Gᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    g: DMatrix<f64>,
}

impl Cholesky {
    /// Factors a symmetric matrix. Returns `None` when a pivot falls below
    /// the relative tolerance (singular or indefinite input).
    pub(crate) fn factor(a: &DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut g = DMatrix::<f64>::zeros(n, n);
        let mut max_diag = 0.0f64;
        for j in 0..n {
            max_diag = max_diag.max(a[(j, j)]);
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= g[(j, k)] * g[(j, k)];
            }
            if !(d > PIVOT_RTOL * max_diag) {
                return None;
            }
            let djj = d.sqrt();
            g[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= g[(i, k)] * g[(j, k)];
                }
                g[(i, j)] = s / djj;
            }
        }
        Some(Cholesky { g })
    }

    pub(crate) fn log_det(&self) -> f64 {
        2.0 * self.g.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `A⁻¹ B`.
    pub(crate) fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .g
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal");
        self.g
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a positive diagonal")
    }

    pub(crate) fn inverse(&self) -> DMatrix<f64> {
        let n = self.g.nrows();
        let mut inv = self.solve(&DMatrix::identity(n, n));
        symmetrize(&mut inv);
        inv
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn principal_minor(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Entrywise Neumaier summation of equally shaped matrices.
pub(crate) struct CompensatedSum {
    sum: DMatrix<f64>,
    comp: DMatrix<f64>,
}

impl CompensatedSum {
    pub(crate) fn zeros(rows: usize, cols: usize) -> Self {
        CompensatedSum {
            sum: DMatrix::zeros(rows, cols),
            comp: DMatrix::zeros(rows, cols),
        }
    }

    pub(crate) fn add(&mut self, term: &DMatrix<f64>) {
        for ((s, c), &x) in self
            .sum
            .iter_mut()
            .zip(self.comp.iter_mut())
            .zip(term.iter())
        {
            let t = *s + x;
            if s.abs() >= x.abs() {
                *c += (*s - t) + x;
            } else {
                *c += (x - t) + *s;
            }
            *s = t;
        }
    }

    pub(crate) fn finish(self) -> DMatrix<f64> {
        self.sum + self.comp
    }
}
