//! Nonparametric summary transfer.
//!
//! Each annotated exemplar `r` contributes an idealized kernel
//! `L_r = α_r · diag(1[n ∈ y_r])`. A new video's kernel is synthesized as
//! `L = Σ_r S_r L_r S_rᵀ`, where `S_r` holds the similarities between the new
//! video's items and exemplar `r`'s items, and the summary is read off by MAP
//! inference on `L`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dpp::{condition_on, map_greedy, KernelMatrix, SubsetSelection};
use crate::error::{Error, Result};
use crate::linalg::CompensatedSum;
use crate::segments::Segmentation;
use crate::similarity::{
    block_max, shot_mean_features, similarity_matrix_unchecked, FeatureSequence, Metric,
    Similarity,
};

/// An annotated training video.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub id: String,
    pub sequence: FeatureSequence,
    /// Frame-level ground-truth summary.
    pub summary: SubsetSelection,
    pub category: Option<String>,
    /// Subshot boundaries, required for subshot granularity.
    pub segments: Option<Segmentation>,
}

impl Exemplar {
    pub fn new(
        id: impl Into<String>,
        sequence: FeatureSequence,
        summary: SubsetSelection,
        category: Option<String>,
        segments: Option<Segmentation>,
    ) -> Result<Self> {
        let id = id.into();
        if summary.ground_size() != sequence.len() {
            return Err(Error::video(
                &id,
                format!(
                    "summary is over {} items but the video has {} frames",
                    summary.ground_size(),
                    sequence.len()
                ),
            ));
        }
        if summary.is_empty() {
            return Err(Error::video(&id, "ground-truth summary is empty"));
        }
        if let Some(seg) = &segments {
            if seg.n_frames() != sequence.len() {
                return Err(Error::video(
                    &id,
                    format!(
                        "segmentation covers {} frames but the video has {}",
                        seg.n_frames(),
                        sequence.len()
                    ),
                ));
            }
        }
        Ok(Exemplar {
            id,
            sequence,
            summary,
            category,
            segments,
        })
    }

    /// Ground truth at the requested granularity.
    pub fn ground_truth(&self, granularity: Granularity) -> Result<SubsetSelection> {
        match granularity {
            Granularity::Frame => Ok(self.summary.clone()),
            Granularity::Subshot(_) => self.segments_or_err()?.frames_to_segments(&self.summary),
        }
    }

    /// Number of selectable items at the requested granularity.
    pub fn n_items(&self, granularity: Granularity) -> Result<usize> {
        match granularity {
            Granularity::Frame => Ok(self.sequence.len()),
            Granularity::Subshot(_) => Ok(self.segments_or_err()?.len()),
        }
    }

    fn segments_or_err(&self) -> Result<&Segmentation> {
        self.segments
            .as_ref()
            .ok_or_else(|| Error::video(&self.id, "subshot granularity needs segment boundaries"))
    }

    pub(crate) fn as_items(&self) -> Items<'_> {
        Items {
            features: &self.sequence,
            segments: self.segments.as_ref(),
        }
    }
}

/// How subshots are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubshotSimilarity {
    /// Similarity of the (renormalized) mean frame descriptors.
    Mean,
    /// Largest frame-pair similarity between the two subshots.
    Max,
}

/// Selection unit of the ground set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    #[default]
    Frame,
    Subshot(SubshotSimilarity),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CategoryMode {
    /// One scale vector shared by every test video.
    #[default]
    None,
    /// Per-category scales, zero for exemplars of other categories.
    Hard,
    /// Per-category scales over all exemplars.
    Soft,
}

impl CategoryMode {
    pub fn name(self) -> &'static str {
        match self {
            CategoryMode::None => "none",
            CategoryMode::Hard => "hard",
            CategoryMode::Soft => "soft",
        }
    }
}

/// Scale parameters (and optionally a learned diagonal metric) for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryWeights {
    pub alphas: Vec<f64>,
    pub metric: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Shared(Vec<f64>),
    PerCategory(BTreeMap<String, CategoryWeights>),
}

/// Everything about a transfer model except the exemplar data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub similarity: Similarity,
    pub granularity: Granularity,
    pub mode: CategoryMode,
    pub weights: Weights,
    /// Segment length for sequential extraction, if enabled.
    pub sequential: Option<usize>,
}

impl ModelParams {
    /// Shared scale `alpha` for `n` exemplars.
    pub fn uniform(n: usize, alpha: f64, similarity: Similarity) -> Self {
        ModelParams {
            similarity,
            granularity: Granularity::Frame,
            mode: CategoryMode::None,
            weights: Weights::Shared(vec![alpha; n]),
            sequential: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferModel {
    exemplars: Vec<Exemplar>,
    params: ModelParams,
}

impl TransferModel {
    pub fn new(exemplars: Vec<Exemplar>, params: ModelParams) -> Result<Self> {
        let n = exemplars.len();
        let check = |alphas: &[f64], what: &str| -> Result<()> {
            if alphas.len() != n {
                return Err(Error::Model(format!(
                    "{what}: {} scale values for {n} exemplars",
                    alphas.len()
                )));
            }
            if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
                return Err(Error::Model(format!("{what}: scales must be finite and >= 0")));
            }
            Ok(())
        };
        if let Some(dim) = exemplars.first().map(|e| e.sequence.dim()) {
            if let Some(bad) = exemplars.iter().find(|e| e.sequence.dim() != dim) {
                return Err(Error::video(
                    &bad.id,
                    format!("feature dimension {} differs from {dim}", bad.sequence.dim()),
                ));
            }
            params.similarity.validate(dim)?;
        }
        match (&params.mode, &params.weights) {
            (CategoryMode::None, Weights::Shared(a)) => check(a, "shared weights")?,
            (CategoryMode::Hard | CategoryMode::Soft, Weights::PerCategory(map)) => {
                for (c, w) in map {
                    check(&w.alphas, c)?;
                    if params.mode == CategoryMode::Hard {
                        for (ex, a) in exemplars.iter().zip(&w.alphas) {
                            if ex.category.as_deref() != Some(c.as_str()) && *a != 0.0 {
                                return Err(Error::Model(format!(
                                    "hard mode: exemplar {:?} is outside category {c:?} but has scale {a}",
                                    ex.id
                                )));
                            }
                        }
                    }
                    if let Some(m) = &w.metric {
                        if !matches!(params.similarity, Similarity::Mahalanobis(_)) {
                            return Err(Error::Model(
                                "per-category metric requires mahalanobis similarity".into(),
                            ));
                        }
                        if let Some(first) = exemplars.first() {
                            Similarity::Mahalanobis(Metric::Diagonal(m.clone()))
                                .validate(first.sequence.dim())?;
                        }
                    }
                }
            }
            (mode, _) => {
                return Err(Error::Model(format!(
                    "weights layout does not match category mode {:?}",
                    mode.name()
                )))
            }
        }
        if let Some(0) = params.sequential {
            return Err(Error::Model("sequential segment length must be >= 1".into()));
        }
        for ex in &exemplars {
            ex.n_items(params.granularity)?;
        }
        Ok(TransferModel { exemplars, params })
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Similarity function used for test videos of `category`.
    pub fn similarity_for(&self, category: Option<&str>) -> Similarity {
        if let (Weights::PerCategory(map), Some(c)) = (&self.params.weights, category) {
            if let Some(CategoryWeights {
                metric: Some(m), ..
            }) = map.get(c)
            {
                return Similarity::Mahalanobis(Metric::Diagonal(m.clone()));
            }
        }
        self.params.similarity.clone()
    }
}

/// A video to summarize.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub features: &'a FeatureSequence,
    pub segments: Option<&'a Segmentation>,
    pub category: Option<&'a str>,
}

impl<'a> Query<'a> {
    pub fn new(features: &'a FeatureSequence) -> Self {
        Query {
            features,
            segments: None,
            category: None,
        }
    }

    pub fn with_segments(mut self, segments: &'a Segmentation) -> Self {
        self.segments = Some(segments);
        self
    }

    pub fn with_category(mut self, category: &'a str) -> Self {
        self.category = Some(category);
        self
    }

    fn items(&self) -> Items<'a> {
        Items {
            features: self.features,
            segments: self.segments,
        }
    }
}

/// Features plus optional segmentation: the ground items of one video.
#[derive(Clone, Copy)]
pub(crate) struct Items<'a> {
    pub features: &'a FeatureSequence,
    pub segments: Option<&'a Segmentation>,
}

impl Items<'_> {
    fn segments(&self) -> Result<&Segmentation> {
        self.segments.ok_or_else(|| {
            Error::InvalidArgument("subshot granularity needs segment boundaries".into())
        })
    }

    /// Descriptors that play the role of frames at this granularity (the
    /// frames themselves, or per-segment mean features).
    pub(crate) fn descriptors(&self, granularity: Granularity) -> Result<FeatureSequence> {
        match granularity {
            Granularity::Frame | Granularity::Subshot(SubshotSimilarity::Max) => {
                Ok(self.features.clone())
            }
            Granularity::Subshot(SubshotSimilarity::Mean) => {
                shot_mean_features(self.features, self.segments()?)
            }
        }
    }
}

/// Similarity matrix between the items of two videos at the given granularity.
pub(crate) fn item_similarity(
    test: Items<'_>,
    exemplar: Items<'_>,
    sim: &Similarity,
    granularity: Granularity,
) -> Result<DMatrix<f64>> {
    if test.features.dim() != exemplar.features.dim() {
        return Err(Error::DimensionMismatch {
            context: "feature dimension of test vs exemplar",
            expected: test.features.dim(),
            found: exemplar.features.dim(),
        });
    }
    match granularity {
        Granularity::Frame => Ok(similarity_matrix_unchecked(test.features, exemplar.features, sim)),
        Granularity::Subshot(SubshotSimilarity::Mean) => {
            let a = test.descriptors(granularity)?;
            let b = exemplar.descriptors(granularity)?;
            Ok(similarity_matrix_unchecked(&a, &b, sim))
        }
        Granularity::Subshot(SubshotSimilarity::Max) => {
            let frames = similarity_matrix_unchecked(test.features, exemplar.features, sim);
            Ok(block_max(&frames, test.segments()?, exemplar.segments()?))
        }
    }
}

/// `L_r = α · diag(1[n ∈ y_r])` over the exemplar's frames.
pub fn idealized_kernel(exemplar: &Exemplar, alpha: f64) -> Result<KernelMatrix> {
    idealized_kernel_for(&exemplar.summary, alpha)
}

pub fn idealized_kernel_for(summary: &SubsetSelection, alpha: f64) -> Result<KernelMatrix> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    let diag: Vec<f64> = summary
        .indicator()
        .into_iter()
        .map(|b| if b { alpha } else { 0.0 })
        .collect();
    Ok(KernelMatrix::from_psd_unchecked(DMatrix::from_diagonal(
        &nalgebra::DVector::from_vec(diag),
    )))
}

/// Scale vector applied to the exemplars for a test video of `category`.
pub fn effective_alphas(model: &TransferModel, category: Option<&str>) -> Result<Vec<f64>> {
    match (&model.params.mode, &model.params.weights) {
        (CategoryMode::None, Weights::Shared(a)) => Ok(a.clone()),
        (mode, Weights::PerCategory(map)) => {
            let c = category.ok_or(Error::MissingCategory(mode.name()))?;
            map.get(c)
                .map(|w| w.alphas.clone())
                .ok_or_else(|| Error::NoExemplars {
                    category: Some(c.to_string()),
                })
        }
        _ => Err(Error::Model("weights layout does not match category mode".into())),
    }
}

/// `S_r L_r S_rᵀ = α_r · S_r[:, y_r] S_r[:, y_r]ᵀ`.
pub(crate) fn contribution(similarity: &DMatrix<f64>, truth: &SubsetSelection, alpha: f64) -> DMatrix<f64> {
    let cols: Vec<usize> = truth.indices().to_vec();
    let b = similarity.select_columns(&cols);
    (&b * b.transpose()) * alpha
}

/// `L = Σ_r S_r L_r S_rᵀ`, accumulated in exemplar order with compensated summation.
pub fn synthesize_kernel(query: Query<'_>, model: &TransferModel) -> Result<KernelMatrix> {
    if model.exemplars.is_empty() {
        return Err(Error::NoExemplars { category: None });
    }
    let alphas = effective_alphas(model, query.category)?;
    if model.params.mode == CategoryMode::Hard {
        let c = query.category.expect("checked by effective_alphas");
        if !model.exemplars.iter().any(|e| e.category.as_deref() == Some(c)) {
            return Err(Error::NoExemplars {
                category: Some(c.to_string()),
            });
        }
    }
    let sim = model.similarity_for(query.category);
    sim.validate(query.features.dim())?;
    let granularity = model.params.granularity;
    let test = query.items();
    let n = match granularity {
        Granularity::Frame => query.features.len(),
        Granularity::Subshot(_) => test.segments()?.len(),
    };

    let terms: Vec<Option<DMatrix<f64>>> = model
        .exemplars
        .par_iter()
        .zip(alphas.par_iter())
        .map(|(ex, &alpha)| {
            if alpha == 0.0 {
                return Ok(None);
            }
            let s = item_similarity(test, ex.as_items(), &sim, granularity)?;
            let truth = ex.ground_truth(granularity)?;
            Ok(Some(contribution(&s, &truth, alpha)))
        })
        .collect::<Result<_>>()?;

    let mut acc = CompensatedSum::zeros(n, n);
    for term in terms.iter().flatten() {
        acc.add(term);
    }
    Ok(KernelMatrix::from_psd_unchecked(acc.finish()))
}

/// Greedy MAP summary of the synthesized kernel. At subshot granularity the
/// result indexes segments.
pub fn summarize(query: Query<'_>, model: &TransferModel) -> Result<SubsetSelection> {
    Ok(summarize_with_kernel(query, model)?.0)
}

/// Like [`summarize`], also returning the kernel the summary was read from.
pub fn summarize_with_kernel(
    query: Query<'_>,
    model: &TransferModel,
) -> Result<(SubsetSelection, KernelMatrix)> {
    let l = synthesize_kernel(query, model)?;
    Ok((map_greedy(&l), l))
}

/// Segment-by-segment extraction. At step `t` the ground set is segment `t`
/// plus the items selected at step `t - 1`; the kernel over that set is
/// conditioned on the previous selection and greedy MAP runs over the
/// segment's own items.
pub fn summarize_sequential(
    query: Query<'_>,
    model: &TransferModel,
    boundaries: &Segmentation,
) -> Result<SubsetSelection> {
    if model.params.granularity != Granularity::Frame {
        return Err(Error::InvalidArgument(
            "sequential extraction operates on frames".into(),
        ));
    }
    let n = query.features.len();
    if boundaries.n_frames() != n {
        return Err(Error::InvalidSegmentation(format!(
            "segmentation covers {} frames, video has {n}",
            boundaries.n_frames()
        )));
    }
    let mut previous: Vec<usize> = Vec::new();
    let mut selected = Vec::new();
    for range in boundaries.ranges() {
        let ground: Vec<usize> = previous.iter().copied().chain(range).collect();
        let sub = query.features.select(&ground);
        let l = synthesize_kernel(
            Query {
                features: &sub,
                segments: None,
                category: query.category,
            },
            model,
        )?;
        let forced = SubsetSelection::new((0..previous.len()).collect(), ground.len())?;
        let conditioned = condition_on(&l, &forced)?;
        let picked: Vec<usize> = map_greedy(&conditioned.kernel)
            .indices()
            .iter()
            .map(|&i| ground[conditioned.remaining[i]])
            .collect();
        selected.extend_from_slice(&picked);
        previous = picked;
    }
    SubsetSelection::from_unsorted(selected, n)
}

/// Splits every exemplar into consecutive chunks of `len` frames, each a
/// separate exemplar carrying its share of the summary. Chunks without any
/// summary frame are dropped.
pub fn chunk_exemplars(exemplars: &[Exemplar], len: usize) -> Result<Vec<Exemplar>> {
    let mut out = Vec::new();
    for ex in exemplars {
        let seg = Segmentation::uniform(ex.sequence.len(), len)?;
        for (k, range) in seg.ranges().enumerate() {
            let frames: Vec<usize> = range.clone().collect();
            let summary: Vec<usize> = ex
                .summary
                .indices()
                .iter()
                .filter(|i| range.contains(i))
                .map(|i| i - range.start)
                .collect();
            if summary.is_empty() {
                continue;
            }
            out.push(Exemplar::new(
                format!("{}#{k}", ex.id),
                ex.sequence.select(&frames),
                SubsetSelection::new(summary, frames.len())?,
                ex.category.clone(),
                None,
            )?);
        }
    }
    Ok(out)
}
