//! Frame descriptors and cross-video similarity matrices.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::segments::Segmentation;

/// Maximum deviation of a frame's Euclidean norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Ordered unit-norm frame (or subshot) descriptors, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f64>,
    n: usize,
    dim: usize,
}

impl FeatureSequence {
    /// Validates shape, finiteness and unit norm of every frame.
    pub fn new(data: Vec<f64>, n: usize, dim: usize) -> Result<Self> {
        let seq = Self::unchecked(data, n, dim)?;
        for i in 0..n {
            let norm = norm(seq.frame(i));
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm { frame: i, norm });
            }
        }
        Ok(seq)
    }

    /// Rescales every frame to unit norm; rejects all-zero frames.
    pub fn normalized(mut data: Vec<f64>, n: usize, dim: usize) -> Result<Self> {
        Self::unchecked(std::mem::take(&mut data), n, dim).and_then(|mut seq| {
            for i in 0..n {
                let row = &mut seq.data[i * dim..(i + 1) * dim];
                let nr = norm(row);
                if nr == 0.0 {
                    return Err(Error::NotUnitNorm { frame: i, norm: 0.0 });
                }
                row.iter_mut().for_each(|x| *x /= nr);
            }
            Ok(seq)
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let (n, dim) = rows_shape(rows)?;
        Self::new(rows.concat(), n, dim)
    }

    pub fn from_rows_normalized(rows: &[Vec<f64>]) -> Result<Self> {
        let (n, dim) = rows_shape(rows)?;
        Self::normalized(rows.concat(), n, dim)
    }

    fn unchecked(data: Vec<f64>, n: usize, dim: usize) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature sequence needs at least one frame and dimension, got {n}x{dim}"
            )));
        }
        if data.len() != n * dim {
            return Err(Error::DimensionMismatch {
                context: "feature buffer length",
                expected: n * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature sequence"));
        }
        Ok(FeatureSequence { data, n, dim })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Sub-sequence of the given frames, in the given order.
    pub fn select(&self, frames: &[usize]) -> FeatureSequence {
        let data = frames.iter().flat_map(|&i| self.frame(i).iter().copied()).collect();
        FeatureSequence {
            data,
            n: frames.len(),
            dim: self.dim,
        }
    }
}

fn rows_shape(rows: &[Vec<f64>]) -> Result<(usize, usize)> {
    let dim = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "feature row length",
            expected: dim,
            found: bad.len(),
        });
    }
    Ok((rows.len(), dim))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Metric `Ω` of the Mahalanobis-type similarity.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    /// Positive diagonal entries.
    Diagonal(Vec<f64>),
    /// Symmetric positive-definite matrix.
    Full(DMatrix<f64>),
}

impl Metric {
    pub fn identity(dim: usize) -> Self {
        Metric::Diagonal(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            Metric::Diagonal(d) => d.len(),
            Metric::Full(m) => m.nrows(),
        }
    }

    fn quadratic(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Metric::Diagonal(w) => w
                .iter()
                .zip(u.iter().zip(v))
                .map(|(w, (a, b))| w * (a - b) * (a - b))
                .sum(),
            Metric::Full(m) => {
                let d: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
                let mut q = 0.0;
                for i in 0..d.len() {
                    for j in 0..d.len() {
                        q += d[i] * m[(i, j)] * d[j];
                    }
                }
                q
            }
        }
    }
}

/// Frame similarity function.
#[derive(Debug, Clone, PartialEq)]
pub enum Similarity {
    /// `uᵀv`
    Dot,
    /// `exp(-‖u - v‖₂ / σ)` (unsquared norm)
    Rbf { sigma: f64 },
    /// `exp(-(u - v)ᵀ Ω (u - v))`
    Mahalanobis(Metric),
}

impl Default for Similarity {
    fn default() -> Self {
        Similarity::Rbf { sigma: 1.0 }
    }
}

impl Similarity {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Similarity::Dot => Ok(()),
            Similarity::Rbf { sigma } => {
                if sigma.is_finite() && *sigma > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!("rbf sigma must be > 0, got {sigma}")))
                }
            }
            Similarity::Mahalanobis(metric) => {
                if metric.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "metric vs feature dimension",
                        expected: dim,
                        found: metric.dim(),
                    });
                }
                match metric {
                    Metric::Diagonal(w) => {
                        if w.iter().all(|x| x.is_finite() && *x > 0.0) {
                            Ok(())
                        } else {
                            Err(Error::InvalidArgument(
                                "diagonal metric entries must be positive".into(),
                            ))
                        }
                    }
                    Metric::Full(m) => {
                        let sym = (m - m.transpose()).abs().max() <= 1e-8 * m.abs().max().max(1.0);
                        let min_eig = m
                            .clone()
                            .symmetric_eigenvalues()
                            .iter()
                            .cloned()
                            .fold(f64::INFINITY, f64::min);
                        if sym && min_eig > 1e-8 {
                            Ok(())
                        } else {
                            Err(Error::InvalidArgument(
                                "full metric must be symmetric positive definite".into(),
                            ))
                        }
                    }
                }
            }
        }
    }

    /// Similarity of two frames of equal dimension (unchecked).
    pub(crate) fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Similarity::Dot => u.iter().zip(v).map(|(a, b)| a * b).sum(),
            Similarity::Rbf { sigma } => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2.sqrt() / sigma).exp()
            }
            Similarity::Mahalanobis(metric) => (-metric.quadratic(u, v)).exp(),
        }
    }
}

pub fn frame_sim(u: &[f64], v: &[f64], sim: &Similarity) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "frame similarity",
            expected: u.len(),
            found: v.len(),
        });
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("frame similarity input"));
    }
    sim.validate(u.len())?;
    Ok(sim.eval(u, v))
}

fn check_dims(test: &FeatureSequence, exemplar: &FeatureSequence, sim: &Similarity) -> Result<()> {
    if test.dim() != exemplar.dim() {
        return Err(Error::DimensionMismatch {
            context: "feature dimension of test vs exemplar",
            expected: test.dim(),
            found: exemplar.dim(),
        });
    }
    sim.validate(test.dim())
}

pub(crate) fn similarity_matrix_unchecked(
    test: &FeatureSequence,
    exemplar: &FeatureSequence,
    sim: &Similarity,
) -> DMatrix<f64> {
    let cols = exemplar.len();
    let mut buf = vec![0.0; test.len() * cols];
    buf.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
        let u = test.frame(i);
        for (k, out) in row.iter_mut().enumerate() {
            *out = sim.eval(u, exemplar.frame(k));
        }
    });
    DMatrix::from_row_slice(test.len(), cols, &buf)
}

/// `S[i, k] = sim(test_i, exemplar_k)`, shape `N × N_r`.
pub fn similarity_matrix(
    test: &FeatureSequence,
    exemplar: &FeatureSequence,
    sim: &Similarity,
) -> Result<DMatrix<f64>> {
    check_dims(test, exemplar, sim)?;
    Ok(similarity_matrix_unchecked(test, exemplar, sim))
}

/// One descriptor per segment: the mean of its frames, rescaled to unit norm.
pub fn shot_mean_features(seq: &FeatureSequence, segments: &Segmentation) -> Result<FeatureSequence> {
    if segments.n_frames() != seq.len() {
        return Err(Error::InvalidSegmentation(format!(
            "segmentation covers {} frames, sequence has {}",
            segments.n_frames(),
            seq.len()
        )));
    }
    let dim = seq.dim();
    let mut data = Vec::with_capacity(segments.len() * dim);
    for (s, range) in segments.ranges().enumerate() {
        let mut mean = vec![0.0; dim];
        for i in range {
            for (m, x) in mean.iter_mut().zip(seq.frame(i)) {
                *m += x;
            }
        }
        let nr = norm(&mean);
        if !(nr > 1e-12) {
            return Err(Error::ZeroMeanSegment { segment: s });
        }
        data.extend(mean.iter().map(|m| m / nr));
    }
    FeatureSequence::unchecked(data, segments.len(), dim)
}

/// Entry `(a, b)` is the largest frame similarity between test segment `a`
/// and exemplar segment `b`.
pub fn shot_max_similarity_matrix(
    test: &FeatureSequence,
    exemplar: &FeatureSequence,
    test_segments: &Segmentation,
    exemplar_segments: &Segmentation,
    sim: &Similarity,
) -> Result<DMatrix<f64>> {
    for (seq, seg) in [(test, test_segments), (exemplar, exemplar_segments)] {
        if seg.n_frames() != seq.len() {
            return Err(Error::InvalidSegmentation(format!(
                "segmentation covers {} frames, sequence has {}",
                seg.n_frames(),
                seq.len()
            )));
        }
    }
    let frame_level = similarity_matrix(test, exemplar, sim)?;
    Ok(block_max(&frame_level, test_segments, exemplar_segments))
}

pub(crate) fn block_max(m: &DMatrix<f64>, rows: &Segmentation, cols: &Segmentation) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
        let mut best = f64::NEG_INFINITY;
        for i in rows.range(a) {
            for k in cols.range(b) {
                best = best.max(m[(i, k)]);
            }
        }
        best
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[Vec<f64>]) -> FeatureSequence {
        FeatureSequence::from_rows(rows).unwrap()
    }

    #[test]
    fn validates_unit_norm() {
        assert!(matches!(
            FeatureSequence::from_rows(&[vec![1.0, 1.0]]),
            Err(Error::NotUnitNorm { frame: 0, .. })
        ));
        assert!(FeatureSequence::from_rows(&[vec![f64::NAN, 1.0]]).is_err());
        assert!(FeatureSequence::from_rows(&[]).is_err());
        let s = FeatureSequence::from_rows_normalized(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(s.frame(0), &[0.6, 0.8]);
        assert!(FeatureSequence::from_rows_normalized(&[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn analytic_forms() {
        let u = [1.0, 0.0];
        let v = [0.0, 1.0];
        assert_eq!(frame_sim(&u, &v, &Similarity::Dot).unwrap(), 0.0);
        assert_eq!(frame_sim(&u, &u, &Similarity::Rbf { sigma: 0.3 }).unwrap(), 1.0);
        // ‖u - v‖ = √2
        let r = frame_sim(&u, &v, &Similarity::Rbf { sigma: 2.0 }).unwrap();
        assert!((r - (-(2.0f64).sqrt() / 2.0).exp()).abs() < 1e-15);

        // ‖u - w‖² = 0.25
        let w = [0.5, 0.0];
        let m = frame_sim(&u, &w, &Similarity::Mahalanobis(Metric::identity(2))).unwrap();
        assert!((m - (-0.25f64).exp()).abs() < 1e-15);
        assert!((m - 0.7788).abs() < 1e-4);
        let full = Similarity::Mahalanobis(Metric::Full(DMatrix::identity(2, 2)));
        assert!((frame_sim(&u, &w, &full).unwrap() - m).abs() < 1e-15);

        assert!(frame_sim(&u, &[1.0], &Similarity::Dot).is_err());
        assert!(frame_sim(&u, &v, &Similarity::Rbf { sigma: 0.0 }).is_err());
        assert!(frame_sim(&u, &v, &Similarity::Mahalanobis(Metric::Diagonal(vec![1.0, -1.0]))).is_err());
    }

    #[test]
    fn rbf_and_scaled_mahalanobis_differ() {
        let u = [1.0, 0.0];
        let v = [0.0, 1.0];
        let rbf = frame_sim(&u, &v, &Similarity::Rbf { sigma: 1.0 }).unwrap();
        let mah = frame_sim(&u, &v, &Similarity::Mahalanobis(Metric::identity(2))).unwrap();
        assert!((rbf - (-(2.0f64).sqrt()).exp()).abs() < 1e-15);
        assert!((mah - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn matrices() {
        let a = seq(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let s = similarity_matrix(&a, &a, &Similarity::Dot).unwrap();
        assert_eq!(s, DMatrix::identity(3, 3));

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let b = seq(&[vec![h, h, 0.0], vec![0.0, 0.6, 0.8]]);
        let cfg = Similarity::Rbf { sigma: 0.7 };
        let s = similarity_matrix(&a, &b, &cfg).unwrap();
        assert_eq!(s.shape(), (3, 2));
        for i in 0..3 {
            for k in 0..2 {
                assert_eq!(s[(i, k)], frame_sim(a.frame(i), b.frame(k), &cfg).unwrap());
            }
        }
        let c = seq(&[vec![1.0, 0.0]]);
        assert!(similarity_matrix(&a, &c, &Similarity::Dot).is_err());
    }

    #[test]
    fn mean_features() {
        let a = seq(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
        let segs = Segmentation::new(vec![2, 3], 3).unwrap();
        let m = shot_mean_features(&a, &segs).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.frame(0)[0] - h).abs() < 1e-15 && (m.frame(0)[1] - h).abs() < 1e-15);
        assert_eq!(m.frame(1), &[0.0, 1.0]);

        let same = shot_mean_features(&a, &Segmentation::singletons(3).unwrap()).unwrap();
        assert_eq!(same, a);

        let opposite = seq(&[vec![1.0, 0.0], vec![-1.0, 0.0]]);
        assert!(matches!(
            shot_mean_features(&opposite, &Segmentation::new(vec![2], 2).unwrap()),
            Err(Error::ZeroMeanSegment { segment: 0 })
        ));
        assert!(shot_mean_features(&a, &Segmentation::new(vec![2], 2).unwrap()).is_err());
    }

    #[test]
    fn max_similarity_blocks() {
        let a = seq(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
        let b = seq(&[vec![0.8, 0.6], vec![0.0, 1.0]]);
        let cfg = Similarity::Rbf { sigma: 1.0 };
        let single_a = Segmentation::singletons(3).unwrap();
        let single_b = Segmentation::singletons(2).unwrap();
        let m = shot_max_similarity_matrix(&a, &b, &single_a, &single_b, &cfg).unwrap();
        assert_eq!(m, similarity_matrix(&a, &b, &cfg).unwrap());

        // frame 1 of `a` is identical to frame 1 of `b`
        let sa = Segmentation::new(vec![1, 3], 3).unwrap();
        let sb = Segmentation::new(vec![2], 2).unwrap();
        let m = shot_max_similarity_matrix(&a, &b, &sa, &sb, &cfg).unwrap();
        assert_eq!(m[(1, 0)], 1.0);
    }
}
