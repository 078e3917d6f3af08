//! Determinantal point process primitives over an L-kernel.
//!
//! `P(y) = det(L_y) / det(L + I)`. All determinants are handled in log space
//! through Cholesky factors, so kernels with thousands of items do not
//! overflow.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{principal_minor, symmetrize, Cholesky};

/// Relative symmetry tolerance: `|L_ij - L_ji| <= SYM_TOL * max(1, |L_ij|)`.
pub const SYM_TOL: f64 = 1e-9;
/// Smallest admissible eigenvalue is `-PSD_TOL * trace / N`.
pub const PSD_TOL: f64 = 1e-8;
/// Log-determinants closer than this are considered tied.
pub const TIE_TOL: f64 = 1e-12;
/// Exhaustive MAP refuses ground sets larger than this.
pub const MAX_EXACT_ITEMS: usize = 20;

const JITTER: f64 = 1e-10;

/// A strictly increasing list of item indices into a ground set of size `ground_size`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubsetSelection {
    indices: Vec<usize>,
    ground_size: usize,
}

impl SubsetSelection {
    pub fn new(indices: Vec<usize>, ground_size: usize) -> Result<Self> {
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidSubset(format!(
                    "indices must be strictly increasing, found {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= ground_size {
                return Err(Error::InvalidSubset(format!(
                    "index {last} out of range for ground set of size {ground_size}"
                )));
            }
        }
        Ok(SubsetSelection {
            indices,
            ground_size,
        })
    }

    /// Sorts and deduplicates before validating the range.
    pub fn from_unsorted(mut indices: Vec<usize>, ground_size: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, ground_size)
    }

    pub fn empty(ground_size: usize) -> Self {
        SubsetSelection {
            indices: Vec::new(),
            ground_size,
        }
    }

    pub fn full(ground_size: usize) -> Self {
        SubsetSelection {
            indices: (0..ground_size).collect(),
            ground_size,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn into_indices(self) -> Vec<usize> {
        self.indices
    }

    pub fn ground_size(&self) -> usize {
        self.ground_size
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Indices of the ground set not in this subset.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.ground_size).filter(|&i| !self.contains(i)).collect()
    }

    /// 0/1 membership indicator of length `ground_size`.
    pub fn indicator(&self) -> Vec<bool> {
        let mut v = vec![false; self.ground_size];
        for &i in &self.indices {
            v[i] = true;
        }
        v
    }
}

/// A symmetric positive-semidefinite L-kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix(DMatrix<f64>);

impl KernelMatrix {
    /// Validates symmetry and positive semidefiniteness up to tolerance.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                context: "kernel matrix (square)",
                expected: n,
                found: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel matrix"));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (matrix[(i, j)], matrix[(j, i)]);
                if (a - b).abs() > SYM_TOL * a.abs().max(1.0) {
                    return Err(Error::NotSymmetric { i, j });
                }
            }
        }
        let mut matrix = matrix;
        symmetrize(&mut matrix);
        if n > 0 {
            let trace = matrix.trace();
            let tolerance = PSD_TOL * (trace / n as f64).max(f64::EPSILON);
            let min_eigenvalue = matrix
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eigenvalue < -tolerance {
                return Err(Error::NotPsd {
                    min_eigenvalue,
                    tolerance,
                });
            }
        }
        Ok(KernelMatrix(matrix))
    }

    /// For kernels that are PSD by construction (Gram forms, Schur complements).
    pub(crate) fn from_psd_unchecked(mut matrix: DMatrix<f64>) -> Self {
        symmetrize(&mut matrix);
        KernelMatrix(matrix)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Self::new(DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    /// `log det(L_y)`, or negative infinity when the minor is singular within
    /// tolerance. The empty minor has determinant 1.
    pub fn log_det_minor(&self, indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        match Cholesky::factor(&principal_minor(&self.0, indices)) {
            Some(c) => c.log_det(),
            None => f64::NEG_INFINITY,
        }
    }

    fn check_subset(&self, y: &SubsetSelection) -> Result<()> {
        if y.ground_size() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "subset ground size vs kernel",
                expected: self.dim(),
                found: y.ground_size(),
            });
        }
        Ok(())
    }
}

/// Cholesky factor of `L + I`, retrying once with a small diagonal jitter.
pub(crate) fn factor_shifted(l: &DMatrix<f64>) -> Result<Cholesky> {
    let n = l.nrows();
    let shifted = l + DMatrix::<f64>::identity(n, n);
    if let Some(c) = Cholesky::factor(&shifted) {
        return Ok(c);
    }
    let jitter = JITTER * (l.trace() / n.max(1) as f64).abs();
    let retried = shifted + DMatrix::<f64>::identity(n, n) * jitter;
    Cholesky::factor(&retried).ok_or(Error::Factorization("L + I"))
}

/// `log det(L + I)`, the log normalizer of the DPP.
pub fn log_partition(l: &KernelMatrix) -> Result<f64> {
    if l.dim() == 0 {
        return Ok(0.0);
    }
    Ok(factor_shifted(l.matrix())?.log_det())
}

/// `log P(y) = log det(L_y) - log det(L + I)`; negative infinity for
/// zero-probability subsets.
pub fn subset_log_prob(l: &KernelMatrix, y: &SubsetSelection) -> Result<f64> {
    l.check_subset(y)?;
    let z = log_partition(l)?;
    Ok(l.log_det_minor(y.indices()) - z)
}

/// Ordering used for all tie-breaks: smaller cardinality, then lexicographic.
fn prefer(a: &[usize], b: &[usize]) -> bool {
    a.len() < b.len() || (a.len() == b.len() && a < b)
}

/// Exact MAP by exhaustive depth-first enumeration with an incrementally
/// extended Cholesky factor. Branches whose minor becomes singular are
/// pruned, since every superset of a zero-determinant set is also singular.
pub fn map_exact(l: &KernelMatrix) -> Result<SubsetSelection> {
    let n = l.dim();
    if n > MAX_EXACT_ITEMS {
        return Err(Error::TooLarge {
            n,
            max: MAX_EXACT_ITEMS,
        });
    }
    let mut search = ExactSearch {
        a: l.matrix(),
        n,
        stack: Vec::with_capacity(n),
        rows: Vec::with_capacity(n),
        max_diag: Vec::with_capacity(n),
        best: Vec::new(),
        best_ld: 0.0,
    };
    search.descend(0, 0.0);
    Ok(SubsetSelection {
        indices: search.best,
        ground_size: n,
    })
}

struct ExactSearch<'a> {
    a: &'a DMatrix<f64>,
    n: usize,
    stack: Vec<usize>,
    // row k of the Cholesky factor of the current minor
    rows: Vec<Vec<f64>>,
    max_diag: Vec<f64>,
    best: Vec<usize>,
    best_ld: f64,
}

impl ExactSearch<'_> {
    fn descend(&mut self, start: usize, ld: f64) {
        for j in start..self.n {
            let k = self.stack.len();
            let mut row = Vec::with_capacity(k + 1);
            for p in 0..k {
                let mut s = self.a[(j, self.stack[p])];
                for q in 0..p {
                    s -= row[q] * self.rows[p][q];
                }
                row.push(s / self.rows[p][p]);
            }
            let d = self.a[(j, j)] - row.iter().map(|x| x * x).sum::<f64>();
            let md = self.max_diag.last().copied().unwrap_or(0.0).max(self.a[(j, j)]);
            if !(d > crate::linalg::PIVOT_RTOL * md) {
                continue;
            }
            row.push(d.sqrt());
            let child_ld = ld + d.ln();
            self.stack.push(j);
            self.rows.push(row);
            self.max_diag.push(md);

            if child_ld > self.best_ld + TIE_TOL
                || ((child_ld - self.best_ld).abs() <= TIE_TOL && prefer(&self.stack, &self.best))
            {
                self.best = self.stack.clone();
                self.best_ld = child_ld;
            }
            self.descend(j + 1, child_ld);

            self.stack.pop();
            self.rows.pop();
            self.max_diag.pop();
        }
    }
}

/// Greedy MAP: starting from the empty set, add the item with the largest
/// determinant gain while that gain exceeds one. Gains are maintained with
/// incremental Cholesky updates, `O(N k²)` overall.
pub fn map_greedy(l: &KernelMatrix) -> SubsetSelection {
    map_greedy_over(l, &(0..l.dim()).collect::<Vec<_>>())
}

/// Greedy MAP restricted to `candidates` (other items are never selected).
pub fn map_greedy_over(l: &KernelMatrix, candidates: &[usize]) -> SubsetSelection {
    let a = l.matrix();
    let n = l.dim();
    let mut gain: Vec<f64> = candidates.iter().map(|&i| a[(i, i)]).collect();
    let mut proj: Vec<Vec<f64>> = vec![Vec::new(); candidates.len()];
    let mut taken = vec![false; candidates.len()];
    let mut chosen = Vec::new();

    loop {
        let mut best: Option<usize> = None;
        for c in 0..candidates.len() {
            if taken[c] {
                continue;
            }
            match best {
                Some(b) if gain[c] <= gain[b] => {}
                _ => best = Some(c),
            }
        }
        let Some(b) = best else { break };
        if !(gain[b].ln() > TIE_TOL) {
            break;
        }
        taken[b] = true;
        chosen.push(candidates[b]);
        let db = gain[b].sqrt();
        let pb = proj[b].clone();
        for c in 0..candidates.len() {
            if taken[c] {
                continue;
            }
            let dot: f64 = pb.iter().zip(&proj[c]).map(|(x, y)| x * y).sum();
            let e = (a[(candidates[b], candidates[c])] - dot) / db;
            proj[c].push(e);
            gain[c] -= e * e;
        }
    }
    chosen.sort_unstable();
    SubsetSelection {
        indices: chosen,
        ground_size: n,
    }
}

/// Kernel of the DPP conditioned on every item of `forced` being selected.
#[derive(Debug, Clone)]
pub struct Conditioned {
    pub kernel: KernelMatrix,
    /// Original indices of the rows of `kernel`, ascending.
    pub remaining: Vec<usize>,
}

/// Conditions on inclusion of `forced` via the Schur complement
/// `L_BB - L_BA L_A⁻¹ L_AB` (B the complement of A), which equals
/// `([(L + I_B)⁻¹]_B)⁻¹ - I`.
pub fn condition_on(l: &KernelMatrix, forced: &SubsetSelection) -> Result<Conditioned> {
    l.check_subset(forced)?;
    let remaining = forced.complement();
    if forced.is_empty() {
        return Ok(Conditioned {
            kernel: l.clone(),
            remaining,
        });
    }
    let a = l.matrix();
    let fa = forced.indices();
    let l_aa = principal_minor(a, fa);
    let chol = Cholesky::factor(&l_aa).ok_or(Error::SingularConditioning)?;
    let l_ab = DMatrix::from_fn(fa.len(), remaining.len(), |p, q| a[(fa[p], remaining[q])]);
    let l_bb = principal_minor(a, &remaining);
    let correction = l_ab.transpose() * chol.solve(&l_ab);
    Ok(Conditioned {
        kernel: KernelMatrix::from_psd_unchecked(l_bb - correction),
        remaining,
    })
}
