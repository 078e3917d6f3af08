//! Python bindings: corpora, training, summarization, scoring and the DPP
//! primitives on plain nested lists.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyKeyError, PyValueError};
use pyo3::prelude::*;

use sumtransfer::corpus::write_synthetic;
use sumtransfer::learning::{FitConfig, LearnConfig};
use sumtransfer::model_file::{parse_category_mode, parse_granularity};
use sumtransfer::protocol::{evaluate_video, predict, EvalConfig};
use sumtransfer::transfer::{effective_alphas, Granularity};
use sumtransfer::{
    fit, load_corpus, model_exemplar_ids, model_from_str, model_to_string, Aggregation,
    KernelMatrix, MatchConfig, Metric, Similarity, SubsetSelection, SynthConfig, TransferModel,
};

fn to_py(e: sumtransfer::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn kernel(rows: Vec<Vec<f64>>) -> PyResult<KernelMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("kernel must be a square list of rows"));
    }
    KernelMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j])).map_err(to_py)
}

/// An annotated corpus loaded from a manifest.
#[pyclass(name = "Corpus", frozen)]
struct PyCorpus {
    inner: sumtransfer::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let path = if path.is_dir() { path.join(sumtransfer::corpus::MANIFEST_FILE) } else { path };
        Ok(PyCorpus { inner: load_corpus(&path).map_err(to_py)? })
    }

    /// Writes a synthetic corpus and returns (manifest path, manifest sha256).
    #[staticmethod]
    #[pyo3(signature = (out_dir, seed=0, n_videos=10, n_frames=40, dim=32, n_categories=2, keyframes=5, noise=0.05, segment_len=5))]
    #[allow(clippy::too_many_arguments)]
    fn synth(
        out_dir: PathBuf,
        seed: u64,
        n_videos: usize,
        n_frames: usize,
        dim: usize,
        n_categories: usize,
        keyframes: usize,
        noise: f64,
        segment_len: usize,
    ) -> PyResult<(PathBuf, String)> {
        let cfg = SynthConfig {
            n_videos,
            n_frames,
            dim,
            n_categories,
            keyframes_per_video: keyframes,
            noise_level: noise,
            seed,
            segment_len,
        };
        std::fs::create_dir_all(&out_dir).map_err(|e| PyValueError::new_err(e.to_string()))?;
        write_synthetic(&out_dir, &cfg).map_err(to_py)
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.videos.iter().map(|v| v.id.clone()).collect()
    }

    #[getter]
    fn sha256(&self) -> String {
        self.inner.manifest_sha256.clone()
    }

    fn category(&self, id: &str) -> PyResult<Option<String>> {
        Ok(self.video(id)?.category.clone())
    }

    /// Frame-level reference summaries of one video.
    fn summaries(&self, id: &str) -> PyResult<Vec<Vec<usize>>> {
        Ok(self.video(id)?.summaries.iter().map(|s| s.indices().to_vec()).collect())
    }

    /// Feature rows of one video.
    fn features(&self, id: &str) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.video(id)?.features.frames().map(<[f64]>::to_vec).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.videos.len()
    }
}

impl PyCorpus {
    fn video(&self, id: &str) -> PyResult<&sumtransfer::VideoRecord> {
        self.inner
            .get(id)
            .ok_or_else(|| PyKeyError::new_err(format!("no video {id:?}")))
    }
}

/// A trained transfer model bound to the corpus it was trained on.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: TransferModel,
    corpus_sha256: String,
}

#[pymethods]
impl PyModel {
    /// Fits a model on `videos` (default: every video) of `corpus`.
    #[staticmethod]
    #[pyo3(signature = (corpus, sim="rbf", sigma=1.0, learn_metric=false, granularity="frame", category_mode="none", iters=200, step=1.0, videos=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        corpus: &PyCorpus,
        sim: &str,
        sigma: f64,
        learn_metric: bool,
        granularity: &str,
        category_mode: &str,
        iters: usize,
        step: f64,
        videos: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let c = &corpus.inner;
        let chosen: Vec<&sumtransfer::VideoRecord> = match &videos {
            None => c.videos.iter().collect(),
            Some(ids) => ids.iter().map(|id| corpus.video(id)).collect::<PyResult<_>>()?,
        };
        let dim = chosen.first().map_or(0, |v| v.features.dim());
        let similarity = match sim {
            "dot" => Similarity::Dot,
            "rbf" => Similarity::Rbf { sigma },
            "mahalanobis" => Similarity::Mahalanobis(Metric::identity(dim)),
            other => return Err(PyValueError::new_err(format!("unknown similarity {other:?}"))),
        };
        let cfg = FitConfig {
            learn: LearnConfig {
                similarity,
                granularity: parse_granularity(granularity).map_err(to_py)?,
                learn_metric,
                ..LearnConfig::default()
            },
            mode: parse_category_mode(category_mode).map_err(to_py)?,
            iters,
            step,
            sequential: None,
        };
        let exemplars = chosen
            .iter()
            .map(|v| v.exemplar())
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?;
        let (inner, _) = fit(&exemplars, &cfg).map_err(to_py)?;
        Ok(PyModel { inner, corpus_sha256: c.manifest_sha256.clone() })
    }

    #[staticmethod]
    fn load(path: PathBuf, corpus: &PyCorpus) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        let ids = model_exemplar_ids(&text).map_err(to_py)?;
        let exemplars = corpus
            .inner
            .videos
            .iter()
            .filter(|v| ids.contains(&v.id))
            .map(|v| v.exemplar())
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?;
        let sha = corpus.inner.manifest_sha256.clone();
        let inner = model_from_str(&text, exemplars, Some(&sha)).map_err(to_py)?;
        Ok(PyModel { inner, corpus_sha256: sha })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, model_to_string(&self.inner, &self.corpus_sha256))
            .map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))
    }

    fn to_json(&self) -> String {
        model_to_string(&self.inner, &self.corpus_sha256)
    }

    /// Exemplar ids in kernel order.
    #[getter]
    fn exemplar_ids(&self) -> Vec<String> {
        self.inner.exemplars().iter().map(|e| e.id.clone()).collect()
    }

    /// Scales applied to each exemplar for a video of `category`.
    #[pyo3(signature = (category=None))]
    fn alphas(&self, category: Option<&str>) -> PyResult<Vec<f64>> {
        effective_alphas(&self.inner, category).map_err(to_py)
    }

    #[getter]
    fn granularity(&self) -> &'static str {
        sumtransfer::model_file::granularity_name(self.inner.params().granularity)
    }

    /// Frame indices of the summary predicted for video `id` of `corpus`.
    #[pyo3(signature = (corpus, id, budget=None))]
    fn summarize(&self, corpus: &PyCorpus, id: &str, budget: Option<f64>) -> PyResult<Vec<usize>> {
        let v = corpus.video(id)?;
        if self.inner.params().granularity != Granularity::Frame && v.segments.is_none() {
            return Err(PyValueError::new_err(format!("video {id:?} has no boundaries")));
        }
        Ok(predict(&self.inner, v, budget).map_err(to_py)?.into_indices())
    }

    /// (precision, recall, f_score) of the prediction for video `id`.
    #[pyo3(signature = (corpus, id, threshold=0.5, aggregation="mean", budget=None))]
    fn evaluate(
        &self,
        corpus: &PyCorpus,
        id: &str,
        threshold: f64,
        aggregation: &str,
        budget: Option<f64>,
    ) -> PyResult<(f64, f64, f64)> {
        let aggregation = match aggregation {
            "mean" => Aggregation::Mean,
            "max" => Aggregation::Max,
            other => return Err(PyValueError::new_err(format!("unknown aggregation {other:?}"))),
        };
        let cfg = EvalConfig {
            matching: MatchConfig::new(threshold).map_err(to_py)?,
            aggregation,
            budget,
        };
        let row = evaluate_video(&self.inner, corpus.video(id)?, &cfg).map_err(to_py)?;
        let s = row.result.score;
        Ok((s.precision, s.recall, s.f_score))
    }
}

/// Most probable subset of a DPP kernel, by exhaustive search.
#[pyfunction]
fn map_exact(kernel_rows: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    Ok(sumtransfer::map_exact(&kernel(kernel_rows)?).map_err(to_py)?.into_indices())
}

/// Greedy approximation of the most probable subset.
#[pyfunction]
fn map_greedy(kernel_rows: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    Ok(sumtransfer::map_greedy(&kernel(kernel_rows)?).into_indices())
}

/// Log-probability of `subset` under the DPP with kernel `kernel_rows`.
#[pyfunction]
fn subset_log_prob(kernel_rows: Vec<Vec<f64>>, subset: Vec<usize>) -> PyResult<f64> {
    let l = kernel(kernel_rows)?;
    let y = SubsetSelection::from_unsorted(subset, l.dim()).map_err(to_py)?;
    sumtransfer::subset_log_prob(&l, &y).map_err(to_py)
}

/// (precision, recall, f_score) of `pred` against `truth`, both frame indices into `features`.
#[pyfunction]
#[pyo3(signature = (pred, truth, features, threshold=0.5))]
fn score(pred: Vec<usize>, truth: Vec<usize>, features: Vec<Vec<f64>>, threshold: f64) -> PyResult<(f64, f64, f64)> {
    let seq = sumtransfer::FeatureSequence::from_rows(&features).map_err(to_py)?;
    let n = seq.len();
    let p = SubsetSelection::from_unsorted(pred, n).map_err(to_py)?;
    let t = SubsetSelection::from_unsorted(truth, n).map_err(to_py)?;
    let s = sumtransfer::score(&p, &seq, &t, &seq, &MatchConfig::new(threshold).map_err(to_py)?).map_err(to_py)?;
    Ok((s.precision, s.recall, s.f_score))
}

#[pymodule]
fn sumtransfer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(map_exact, m)?)?;
    m.add_function(wrap_pyfunction!(map_greedy, m)?)?;
    m.add_function(wrap_pyfunction!(subset_log_prob, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    Ok(())
}
