//! Summary quality: thresholded frame matching, precision / recall / F-score,
//! aggregation over several reference summaries, and budget helpers.

use std::io::Write;

use crate::dpp::{KernelMatrix, SubsetSelection};
use crate::error::{Error, Result};
use crate::segments::Segmentation;
use crate::similarity::FeatureSequence;

const BUDGET_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// Largest Euclidean feature distance at which two frames match.
    pub threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { threshold: 0.5 }
    }
}

impl MatchConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) || threshold.is_infinite() {
            return Err(Error::InvalidArgument(format!(
                "match threshold must be finite and >= 0, got {threshold}"
            )));
        }
        Ok(MatchConfig { threshold })
    }
}

/// Percentages in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl ScoreTriple {
    pub fn from_counts(matches: usize, pred_size: usize, truth_size: usize) -> Self {
        if matches == 0 || pred_size == 0 || truth_size == 0 {
            return ScoreTriple::default();
        }
        let precision = 100.0 * matches as f64 / pred_size as f64;
        let recall = 100.0 * matches as f64 / truth_size as f64;
        let f_score = 2.0 * precision * recall / (precision + recall);
        ScoreTriple {
            precision,
            recall,
            f_score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Componentwise mean over reference summaries.
    #[default]
    Mean,
    /// The reference summary with the highest F-score (first on ties).
    Max,
}

fn check_indices(sel: &SubsetSelection, features: &FeatureSequence) -> Result<()> {
    if sel.ground_size() != features.len() {
        return Err(Error::DimensionMismatch {
            context: "summary vs feature sequence",
            expected: features.len(),
            found: sel.ground_size(),
        });
    }
    Ok(())
}

/// Size of a maximum matching between the frames of `a` and `b`, with an edge
/// wherever two frames are within `cfg.threshold` of each other.
pub fn match_pairs(
    a: &SubsetSelection,
    a_features: &FeatureSequence,
    b: &SubsetSelection,
    b_features: &FeatureSequence,
    cfg: &MatchConfig,
) -> Result<usize> {
    check_indices(a, a_features)?;
    check_indices(b, b_features)?;
    if a_features.dim() != b_features.dim() {
        return Err(Error::DimensionMismatch {
            context: "feature dimension of compared summaries",
            expected: a_features.dim(),
            found: b_features.dim(),
        });
    }
    let t2 = cfg.threshold * cfg.threshold;
    let adj: Vec<Vec<usize>> = a
        .indices()
        .iter()
        .map(|&i| {
            let u = a_features.frame(i);
            b.indices()
                .iter()
                .enumerate()
                .filter(|(_, &j)| {
                    let v = b_features.frame(j);
                    let d2: f64 = u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum();
                    d2 <= t2
                })
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    Ok(maximum_matching(&adj, b.len()))
}

/// Kuhn's augmenting-path algorithm; `adj[i]` lists right vertices of left vertex `i`.
pub fn maximum_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    let mut count = 0;
    for i in 0..adj.len() {
        let mut seen = vec![false; n_right];
        if augment(i, adj, &mut seen, &mut owner) {
            count += 1;
        }
    }
    count
}

/// Scores `pred` against the reference `truth`.
pub fn score(
    pred: &SubsetSelection,
    pred_features: &FeatureSequence,
    truth: &SubsetSelection,
    truth_features: &FeatureSequence,
    cfg: &MatchConfig,
) -> Result<ScoreTriple> {
    let m = match_pairs(pred, pred_features, truth, truth_features, cfg)?;
    Ok(ScoreTriple::from_counts(m, pred.len(), truth.len()))
}

/// Score of one prediction against several references of the same video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregated {
    pub score: ScoreTriple,
    /// Matched pairs (mean over references in mean mode).
    pub matches: f64,
    pub pred_size: usize,
    /// Reference size (mean over references in mean mode).
    pub truth_size: f64,
}

pub fn aggregate_detail(
    pred: &SubsetSelection,
    users: &[SubsetSelection],
    features: &FeatureSequence,
    cfg: &MatchConfig,
    mode: Aggregation,
) -> Result<Aggregated> {
    if users.is_empty() {
        return Err(Error::InvalidArgument("no reference summaries to compare against".into()));
    }
    let per_user = users
        .iter()
        .map(|u| {
            let m = match_pairs(pred, features, u, features, cfg)?;
            Ok(Aggregated {
                score: ScoreTriple::from_counts(m, pred.len(), u.len()),
                matches: m as f64,
                pred_size: pred.len(),
                truth_size: u.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(match mode {
        Aggregation::Max => {
            let mut best = per_user[0];
            for a in &per_user[1..] {
                if a.score.f_score > best.score.f_score {
                    best = *a;
                }
            }
            best
        }
        Aggregation::Mean => {
            let n = per_user.len() as f64;
            let mean = |f: fn(&Aggregated) -> f64| per_user.iter().map(f).sum::<f64>() / n;
            Aggregated {
                score: ScoreTriple {
                    precision: mean(|a| a.score.precision),
                    recall: mean(|a| a.score.recall),
                    f_score: mean(|a| a.score.f_score),
                },
                matches: mean(|a| a.matches),
                pred_size: pred.len(),
                truth_size: mean(|a| a.truth_size),
            }
        }
    })
}

pub fn aggregate(
    pred: &SubsetSelection,
    users: &[SubsetSelection],
    features: &FeatureSequence,
    cfg: &MatchConfig,
    mode: Aggregation,
) -> Result<ScoreTriple> {
    Ok(aggregate_detail(pred, users, features, cfg, mode)?.score)
}

fn check_budget(budget_fraction: f64) -> Result<()> {
    if budget_fraction > 0.0 && budget_fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "budget fraction must be in (0, 1], got {budget_fraction}"
        )))
    }
}

/// Shrinks a segment selection to at most `budget_fraction` of the video's
/// length, keeping the segments with the largest kernel diagonal. Segments
/// are added in that order until the next one would exceed the budget.
pub fn budgeted_truncate(
    selected: &SubsetSelection,
    kernel: &KernelMatrix,
    boundaries: &Segmentation,
    budget_fraction: f64,
) -> Result<SubsetSelection> {
    check_budget(budget_fraction)?;
    if selected.ground_size() != boundaries.len() || kernel.dim() != boundaries.len() {
        return Err(Error::DimensionMismatch {
            context: "segment selection / kernel vs segmentation",
            expected: boundaries.len(),
            found: if kernel.dim() != boundaries.len() {
                kernel.dim()
            } else {
                selected.ground_size()
            },
        });
    }
    let total = boundaries.n_frames() as f64;
    let budget = budget_fraction * total + BUDGET_RTOL * total;
    let lengths = boundaries.lengths();
    let used: usize = selected.indices().iter().map(|&s| lengths[s]).sum();
    if used as f64 <= budget {
        return Ok(selected.clone());
    }
    let diag = kernel.diagonal();
    let mut order = selected.indices().to_vec();
    order.sort_by(|&a, &b| diag[b].total_cmp(&diag[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut len = 0usize;
    for s in order {
        if (len + lengths[s]) as f64 > budget {
            break;
        }
        len += lengths[s];
        kept.push(s);
    }
    SubsetSelection::from_unsorted(kept, boundaries.len())
}

/// Segment-level training target built from several frame-level user
/// summaries: segments ranked by mean per-frame vote count, taken until their
/// total length reaches `budget_fraction` of the video (the crossing segment
/// is included).
pub fn oracle_subshot_summary(
    users: &[SubsetSelection],
    boundaries: &Segmentation,
    budget_fraction: f64,
) -> Result<SubsetSelection> {
    check_budget(budget_fraction)?;
    if users.is_empty() {
        return Err(Error::InvalidArgument("no user summaries".into()));
    }
    let n = boundaries.n_frames();
    let mut votes = vec![0usize; n];
    for u in users {
        if u.ground_size() != n {
            return Err(Error::DimensionMismatch {
                context: "user summary vs segmentation",
                expected: n,
                found: u.ground_size(),
            });
        }
        for &f in u.indices() {
            votes[f] += 1;
        }
    }
    let mean_vote: Vec<f64> = boundaries
        .ranges()
        .map(|r| votes[r.clone()].iter().sum::<usize>() as f64 / r.len() as f64)
        .collect();
    let mut order: Vec<usize> = (0..boundaries.len()).collect();
    order.sort_by(|&a, &b| mean_vote[b].total_cmp(&mean_vote[a]).then(a.cmp(&b)));
    let target = budget_fraction * n as f64 - BUDGET_RTOL * n as f64;
    let lengths = boundaries.lengths();
    let mut kept = Vec::new();
    let mut len = 0usize;
    for s in order {
        if len as f64 >= target {
            break;
        }
        len += lengths[s];
        kept.push(s);
    }
    SubsetSelection::from_unsorted(kept, boundaries.len())
}

/// One line of a score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub video_id: String,
    pub result: Aggregated,
}

pub const SCORE_HEADER: &str = "video_id,precision,recall,f_score,matches,pred_size,truth_size";

/// Writes per-video rows followed by a `mean` row.
pub fn write_score_table<W: Write>(out: &mut W, rows: &[ScoreRow]) -> std::io::Result<()> {
    writeln!(out, "{SCORE_HEADER}")?;
    let line = |out: &mut W, id: &str, a: &Aggregated, pred: f64| {
        writeln!(
            out,
            "{id},{:.6},{:.6},{:.6},{},{},{}",
            a.score.precision,
            a.score.recall,
            a.score.f_score,
            a.matches,
            pred,
            a.truth_size
        )
    };
    for r in rows {
        line(out, &r.video_id, &r.result, r.result.pred_size as f64)?;
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&Aggregated) -> f64| rows.iter().map(|r| f(&r.result)).sum::<f64>() / n;
        let m = Aggregated {
            score: ScoreTriple {
                precision: mean(&|a| a.score.precision),
                recall: mean(&|a| a.score.recall),
                f_score: mean(&|a| a.score.f_score),
            },
            matches: mean(&|a| a.matches),
            pred_size: 0,
            truth_size: mean(&|a| a.truth_size),
        };
        line(out, "mean", &m, mean(&|a| a.pred_size as f64))?;
    }
    Ok(())
}
