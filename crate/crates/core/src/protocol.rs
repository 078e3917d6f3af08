//! Train/test protocol: repeated random 80/20 splits, held-out scoring, and
//! a random-subset baseline.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Corpus, VideoRecord};
use crate::dpp::SubsetSelection;
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_detail, budgeted_truncate, Aggregated, Aggregation, MatchConfig, ScoreRow,
};
use crate::learning::{fit, FitConfig, FitReport};
use crate::segments::Segmentation;
use crate::transfer::{
    summarize_sequential, summarize_with_kernel, Granularity, Query, TransferModel,
};

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `rounds` random splits, stratified by category: in each category
/// `round(train_fraction * size)` videos (at least one) go to training.
/// Index lists are sorted.
pub fn make_splits(
    categories: &[Option<String>],
    rounds: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<Vec<Split>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut groups: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for (i, c) in categories.iter().enumerate() {
        groups.entry(c.as_deref()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for members in groups.values() {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            let k = ((train_fraction * m.len() as f64).round() as usize).clamp(1, m.len());
            train.extend_from_slice(&m[..k]);
            test.extend_from_slice(&m[k..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        if train.len() < 2 || test.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "corpus of {} videos is too small to split",
                categories.len()
            )));
        }
        out.push(Split { train, test });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalConfig {
    pub matching: MatchConfig,
    pub aggregation: Aggregation,
    /// Cap the summary at this fraction of the video's length.
    pub budget: Option<f64>,
}

/// Frame-level summary of `video` under `model`. Subshot selections are
/// reported as the middle frame of each selected segment.
pub fn predict(model: &TransferModel, video: &VideoRecord, budget: Option<f64>) -> Result<SubsetSelection> {
    predict_with(model, &video.id, &video.features, video.segments.as_ref(), video.category.as_deref(), budget)
}

pub fn predict_with(
    model: &TransferModel,
    id: &str,
    features: &crate::similarity::FeatureSequence,
    segments: Option<&Segmentation>,
    category: Option<&str>,
    budget: Option<f64>,
) -> Result<SubsetSelection> {
    let mut query = Query::new(features);
    if let Some(s) = segments {
        query = query.with_segments(s);
    }
    if let Some(c) = category {
        query = query.with_category(c);
    }
    let tag = |e: Error| match e {
        Error::Video { .. } => e,
        other if other.is_numerical() => other,
        other => Error::video(id, other.to_string()),
    };
    let params = model.params();
    match params.granularity {
        Granularity::Frame => {
            let singletons = Segmentation::singletons(features.len()).map_err(tag)?;
            if let Some(len) = params.sequential {
                let bounds = Segmentation::uniform(features.len(), len).map_err(tag)?;
                let sel = summarize_sequential(query, model, &bounds).map_err(tag)?;
                if let Some(b) = budget {
                    let (_, l) = summarize_with_kernel(query, model).map_err(tag)?;
                    return budgeted_truncate(&sel, &l, &singletons, b).map_err(tag);
                }
                return Ok(sel);
            }
            let (sel, l) = summarize_with_kernel(query, model).map_err(tag)?;
            match budget {
                Some(b) => budgeted_truncate(&sel, &l, &singletons, b).map_err(tag),
                None => Ok(sel),
            }
        }
        Granularity::Subshot(_) => {
            let seg = segments.ok_or_else(|| Error::video(id, "subshot granularity needs boundaries"))?;
            let (mut sel, l) = summarize_with_kernel(query, model).map_err(tag)?;
            if let Some(b) = budget {
                sel = budgeted_truncate(&sel, &l, seg, b).map_err(tag)?;
            }
            seg.middle_frames(&sel).map_err(tag)
        }
    }
}

/// Scores one video's prediction against all of its reference summaries.
pub fn evaluate_video(
    model: &TransferModel,
    video: &VideoRecord,
    cfg: &EvalConfig,
) -> Result<ScoreRow> {
    let pred = predict(model, video, cfg.budget)?;
    score_prediction(&pred, video, cfg)
}

pub fn score_prediction(pred: &SubsetSelection, video: &VideoRecord, cfg: &EvalConfig) -> Result<ScoreRow> {
    let result = aggregate_detail(pred, &video.summaries, &video.features, &cfg.matching, cfg.aggregation)
        .map_err(|e| Error::video(&video.id, e.to_string()))?;
    Ok(ScoreRow {
        video_id: video.id.clone(),
        result,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub rows: Vec<ScoreRow>,
    pub mean_f: f64,
    pub report: FitReport,
}

/// Fits on the split's training videos and scores its test videos.
pub fn evaluate_split(
    corpus: &Corpus,
    split: &Split,
    fit_cfg: &FitConfig,
    eval_cfg: &EvalConfig,
) -> Result<SplitOutcome> {
    let train = split
        .train
        .iter()
        .map(|&i| corpus.videos[i].exemplar())
        .collect::<Result<Vec<_>>>()?;
    let (model, report) = fit(&train, fit_cfg)?;
    let rows = split
        .test
        .par_iter()
        .map(|&i| evaluate_video(&model, &corpus.videos[i], eval_cfg))
        .collect::<Result<Vec<_>>>()?;
    let mean_f = mean_f(&rows);
    Ok(SplitOutcome {
        rows,
        mean_f,
        report,
    })
}

pub fn mean_f(rows: &[ScoreRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.result.score.f_score).sum::<f64>() / rows.len() as f64
}

/// Mean and standard error of the mean (zero error for fewer than two values).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSummary {
    pub per_round: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

pub fn run_protocol(
    corpus: &Corpus,
    splits: &[Split],
    fit_cfg: &FitConfig,
    eval_cfg: &EvalConfig,
) -> Result<ProtocolSummary> {
    let per_round = splits
        .iter()
        .map(|s| Ok(evaluate_split(corpus, s, fit_cfg, eval_cfg)?.mean_f))
        .collect::<Result<Vec<_>>>()?;
    let (mean, stderr) = mean_stderr(&per_round);
    Ok(ProtocolSummary {
        per_round,
        mean,
        stderr,
    })
}

/// Mean F-score of `trials` uniformly random frame subsets of `size` frames.
pub fn random_baseline(
    video: &VideoRecord,
    size: usize,
    trials: usize,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<f64> {
    let n = video.features.len();
    if size > n || trials == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {trials} subsets of {size} from {n} frames"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let pick = SubsetSelection::from_unsorted(sample(&mut rng, n, size).into_vec(), n)?;
        let Aggregated { score, .. } =
            aggregate_detail(&pick, &video.summaries, &video.features, &cfg.matching, cfg.aggregation)?;
        total += score.f_score;
    }
    Ok(total / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_stratified_and_deterministic() {
        let cats: Vec<Option<String>> = (0..10).map(|i| Some(format!("c{}", i % 2))).collect();
        let a = make_splits(&cats, 3, 9, TRAIN_FRACTION).unwrap();
        assert_eq!(a, make_splits(&cats, 3, 9, TRAIN_FRACTION).unwrap());
        for s in &a {
            assert_eq!(s.train.len(), 8);
            assert_eq!(s.test.len(), 2);
            let test_cats: Vec<usize> = s.test.iter().map(|i| i % 2).collect();
            assert!(test_cats.contains(&0) && test_cats.contains(&1));
        }
        assert_ne!(a[0], a[1]);
        assert!(make_splits(&cats[..1], 1, 0, TRAIN_FRACTION).is_err());
    }

    #[test]
    fn stderr_of_known_values() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }
}
