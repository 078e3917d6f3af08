//! Maximum-likelihood estimation of the transfer scales `α` and, for the
//! Mahalanobis similarity, a diagonal metric `Ω`.
//!
//! Every training video `q` is treated as a new video: its kernel
//! `L̂_q = Σ_r S_r^q L_r (S_r^q)ᵀ` is synthesized from the source exemplars
//! and the objective is `Σ_q log P(y_q; L̂_q)`. Positivity is handled by
//! optimizing `β = ln α` and `θ = ln diag(Ω)`.
//!
//! With `G = M - (L̂ + I)⁻¹`, where `M` embeds `(L̂_y)⁻¹` and is zero elsewhere:
//!
//! * `∂ log P / ∂α_r = 1ᵀ[(S_rᵀ G S_r) ∘ I_r]1`
//! * `∂ log P / ∂Ω_dd = -2 Σ_{i,k} C_r[i,k] (v_id - u_kd)²` with
//!   `C_r = (G S_r L_r) ∘ S_r`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dpp::{factor_shifted, SubsetSelection};
use crate::error::{Error, Result};
use crate::linalg::{principal_minor, Cholesky};
use crate::similarity::{similarity_matrix_unchecked, FeatureSequence, Metric, Similarity};
use crate::transfer::{
    item_similarity, CategoryMode, CategoryWeights, Exemplar, Granularity, ModelParams,
    SubshotSimilarity, TransferModel, Weights,
};

/// Log-likelihood assigned to a training video whose ground truth has zero
/// probability under its transferred kernel.
pub const DEGENERATE_PENALTY: f64 = 1e6;
pub const INITIAL_ALPHA: f64 = 2.0;
const MAX_HALVINGS: usize = 20;
const GRAD_TOL: f64 = 1e-9;
/// Relative objective gain below which an accepted step counts as converged.
const REL_TOL: f64 = 1e-10;
/// Step sizes never grow beyond this multiple of the initial step.
const MAX_STEP_GROWTH: f64 = 1024.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub similarity: Similarity,
    pub granularity: Granularity,
    /// Learn a diagonal Mahalanobis metric alongside the scales.
    pub learn_metric: bool,
    /// Let video `q` contribute to its own synthesized kernel.
    pub include_self: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            similarity: Similarity::default(),
            granularity: Granularity::Frame,
            learn_metric: false,
            include_self: true,
        }
    }
}

/// Optimization variables in log space plus the running objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnState {
    /// `α_r = exp(β_r)`, one per source exemplar.
    pub beta: Vec<f64>,
    /// `Ω_dd = exp(θ_d)`, present when the metric is learned.
    pub omega_log: Option<Vec<f64>>,
    pub step_size: f64,
    pub iteration: usize,
    pub objective_trace: Vec<f64>,
}

impl LearnState {
    pub fn initial(n_sources: usize, metric_dim: Option<usize>) -> Self {
        LearnState {
            beta: vec![INITIAL_ALPHA.ln(); n_sources],
            omega_log: metric_dim.map(|d| vec![0.0; d]),
            step_size: 1.0,
            iteration: 0,
            objective_trace: Vec::new(),
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.beta.iter().map(|b| b.exp()).collect()
    }

    pub fn metric(&self) -> Option<Vec<f64>> {
        self.omega_log
            .as_ref()
            .map(|t| t.iter().map(|x| x.exp()).collect())
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        if let Some(t) = &self.omega_log {
            v.extend_from_slice(t);
        }
        v
    }

    fn with_flat(&self, x: &[f64]) -> LearnState {
        let nb = self.beta.len();
        LearnState {
            beta: x[..nb].to_vec(),
            omega_log: self.omega_log.as_ref().map(|_| x[nb..].to_vec()),
            ..self.clone()
        }
    }
}

/// The likelihood over a set of target videos, each explained by a set of
/// source exemplars.
pub struct Problem<'a> {
    exemplars: &'a [Exemplar],
    targets: Vec<usize>,
    sources: Vec<usize>,
    cfg: LearnConfig,
    truths: Vec<SubsetSelection>,
    descriptors: Vec<FeatureSequence>,
    n_items: Vec<usize>,
    // S_r^q restricted to the columns of y_r, when it does not depend on the state
    fixed_blocks: Option<Vec<Vec<DMatrix<f64>>>>,
}

/// Value of the log-likelihood, optionally with gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Penalized log-likelihood (each degenerate target contributes `-DEGENERATE_PENALTY`).
    pub log_likelihood: f64,
    /// Ids of targets whose ground truth had zero probability.
    pub degenerate: Vec<String>,
    pub gradient: Option<Gradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// `∂/∂α_r` per source.
    pub wrt_alpha: Vec<f64>,
    /// `∂/∂β_r = α_r ∂/∂α_r`.
    pub wrt_beta: Vec<f64>,
    /// `∂/∂Ω_dd`.
    pub wrt_metric: Option<Vec<f64>>,
    /// `∂/∂θ_d = Ω_dd ∂/∂Ω_dd`.
    pub wrt_log_metric: Option<Vec<f64>>,
}

impl<'a> Problem<'a> {
    /// Every exemplar is both a target and a source.
    pub fn full(exemplars: &'a [Exemplar], cfg: LearnConfig) -> Result<Self> {
        let all: Vec<usize> = (0..exemplars.len()).collect();
        Self::new(exemplars, all.clone(), all, cfg)
    }

    pub fn new(
        exemplars: &'a [Exemplar],
        targets: Vec<usize>,
        sources: Vec<usize>,
        cfg: LearnConfig,
    ) -> Result<Self> {
        if exemplars.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "learning needs at least 2 exemplars, got {}",
                exemplars.len()
            )));
        }
        if targets.is_empty() || sources.is_empty() {
            return Err(Error::NoExemplars { category: None });
        }
        if let Some(&bad) = targets.iter().chain(&sources).find(|&&i| i >= exemplars.len()) {
            return Err(Error::InvalidArgument(format!("exemplar index {bad} out of range")));
        }
        if !cfg.include_self && sources.len() == 1 && targets == sources {
            return Err(Error::NoExemplars { category: None });
        }
        let dim = exemplars[0].sequence.dim();
        if let Some(bad) = exemplars.iter().find(|e| e.sequence.dim() != dim) {
            return Err(Error::video(&bad.id, "feature dimension differs from the corpus"));
        }
        if cfg.learn_metric {
            if !matches!(cfg.similarity, Similarity::Mahalanobis(_)) {
                return Err(Error::InvalidArgument(
                    "metric learning requires the mahalanobis similarity".into(),
                ));
            }
            if cfg.granularity == Granularity::Subshot(SubshotSimilarity::Max) {
                return Err(Error::InvalidArgument(
                    "metric learning is not supported with max-similarity subshots".into(),
                ));
            }
        } else {
            cfg.similarity.validate(dim)?;
        }
        let truths = exemplars
            .iter()
            .map(|e| e.ground_truth(cfg.granularity))
            .collect::<Result<Vec<_>>>()?;
        let descriptors = exemplars
            .iter()
            .map(|e| e.as_items().descriptors(cfg.granularity))
            .collect::<Result<Vec<_>>>()?;
        let n_items = exemplars
            .iter()
            .map(|e| e.n_items(cfg.granularity))
            .collect::<Result<Vec<_>>>()?;
        let mut problem = Problem {
            exemplars,
            targets,
            sources,
            cfg,
            truths,
            descriptors,
            n_items,
            fixed_blocks: None,
        };
        if !problem.cfg.learn_metric {
            let sim = problem.cfg.similarity.clone();
            let blocks = problem
                .targets
                .par_iter()
                .map(|&q| {
                    problem
                        .sources
                        .iter()
                        .map(|&r| problem.block(q, r, &sim))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            problem.fixed_blocks = Some(blocks);
        }
        Ok(problem)
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn initial_state(&self) -> LearnState {
        LearnState::initial(
            self.sources.len(),
            self.cfg.learn_metric.then(|| self.exemplars[0].sequence.dim()),
        )
    }

    fn similarity(&self, state: &LearnState) -> Similarity {
        match state.metric() {
            Some(m) => Similarity::Mahalanobis(Metric::Diagonal(m)),
            None => self.cfg.similarity.clone(),
        }
    }

    /// `S_r^q[:, y_r]`.
    fn block(&self, q: usize, r: usize, sim: &Similarity) -> Result<DMatrix<f64>> {
        let cols = self.truths[r].indices();
        let s = match self.cfg.granularity {
            Granularity::Frame | Granularity::Subshot(SubshotSimilarity::Mean) => {
                let u = self.descriptors[r].select(cols);
                similarity_matrix_unchecked(&self.descriptors[q], &u, sim)
            }
            Granularity::Subshot(SubshotSimilarity::Max) => item_similarity(
                self.exemplars[q].as_items(),
                self.exemplars[r].as_items(),
                sim,
                self.cfg.granularity,
            )?
            .select_columns(cols),
        };
        Ok(s)
    }

    fn active(&self, q: usize, r: usize) -> bool {
        self.cfg.include_self || q != r
    }

    pub fn evaluate(&self, state: &LearnState, with_gradient: bool) -> Result<Evaluation> {
        if state.beta.len() != self.sources.len() {
            return Err(Error::DimensionMismatch {
                context: "scale parameters vs sources",
                expected: self.sources.len(),
                found: state.beta.len(),
            });
        }
        let alphas = state.alphas();
        let sim = self.similarity(state);
        let metric = state.metric();

        let per_target: Vec<TargetTerm> = self
            .targets
            .par_iter()
            .enumerate()
            .map(|(ti, &q)| {
                let blocks: Vec<DMatrix<f64>> = match &self.fixed_blocks {
                    Some(b) => b[ti].clone(),
                    None => self
                        .sources
                        .iter()
                        .map(|&r| self.block(q, r, &sim))
                        .collect::<Result<_>>()?,
                };
                self.target_term(q, &blocks, &alphas, metric.as_deref(), with_gradient)
            })
            .collect::<Result<_>>()?;

        let mut log_likelihood = 0.0;
        let mut degenerate = Vec::new();
        let ns = self.sources.len();
        let mut g_alpha = vec![0.0; ns];
        let mut g_metric = metric.as_ref().map(|m| vec![0.0; m.len()]);
        for (term, &q) in per_target.iter().zip(&self.targets) {
            log_likelihood += term.log_prob;
            if term.degenerate {
                degenerate.push(self.exemplars[q].id.clone());
            }
            if let Some(g) = &term.grad_alpha {
                for (a, b) in g_alpha.iter_mut().zip(g) {
                    *a += b;
                }
            }
            if let (Some(acc), Some(g)) = (g_metric.as_mut(), &term.grad_metric) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }

        let gradient = if with_gradient {
            if let Some(id) = degenerate.first() {
                return Err(Error::DegenerateLikelihood {
                    exemplar: id.clone(),
                });
            }
            let wrt_beta = g_alpha.iter().zip(&alphas).map(|(g, a)| g * a).collect();
            let wrt_log_metric = match (&g_metric, &metric) {
                (Some(g), Some(m)) => Some(g.iter().zip(m).map(|(g, w)| g * w).collect()),
                _ => None,
            };
            Some(Gradient {
                wrt_alpha: g_alpha,
                wrt_beta,
                wrt_metric: g_metric,
                wrt_log_metric,
            })
        } else {
            None
        };
        Ok(Evaluation {
            log_likelihood,
            degenerate,
            gradient,
        })
    }

    fn target_term(
        &self,
        q: usize,
        blocks: &[DMatrix<f64>],
        alphas: &[f64],
        metric: Option<&[f64]>,
        with_gradient: bool,
    ) -> Result<TargetTerm> {
        let n = self.n_items[q];
        let mut l_hat = DMatrix::<f64>::zeros(n, n);
        for (j, (&r, b)) in self.sources.iter().zip(blocks).enumerate() {
            if self.active(q, r) {
                l_hat += (b * b.transpose()) * alphas[j];
            }
        }
        let shifted = factor_shifted(&l_hat)?;
        let y = self.truths[q].indices();
        let Some(minor) = Cholesky::factor(&principal_minor(&l_hat, y)) else {
            return Ok(TargetTerm {
                log_prob: -DEGENERATE_PENALTY,
                degenerate: true,
                grad_alpha: None,
                grad_metric: None,
            });
        };
        let log_prob = minor.log_det() - shifted.log_det();
        if !with_gradient {
            return Ok(TargetTerm {
                log_prob,
                degenerate: false,
                grad_alpha: None,
                grad_metric: None,
            });
        }

        let mut g = -shifted.inverse();
        let m_y = minor.inverse();
        for (a, &i) in y.iter().enumerate() {
            for (b, &j) in y.iter().enumerate() {
                g[(i, j)] += m_y[(a, b)];
            }
        }

        let mut grad_alpha = vec![0.0; self.sources.len()];
        let mut grad_metric = metric.map(|m| vec![0.0; m.len()]);
        let v = &self.descriptors[q];
        for (j, (&r, b)) in self.sources.iter().zip(blocks).enumerate() {
            if !self.active(q, r) {
                continue;
            }
            let gb = &g * b;
            grad_alpha[j] = gb.component_mul(b).sum();
            if let Some(acc) = grad_metric.as_mut() {
                let u = &self.descriptors[r];
                let cols = self.truths[r].indices();
                for (kc, &k) in cols.iter().enumerate() {
                    let uk = u.frame(k);
                    for i in 0..n {
                        let c = alphas[j] * gb[(i, kc)] * b[(i, kc)];
                        if c == 0.0 {
                            continue;
                        }
                        for (d, (vi, ukd)) in v.frame(i).iter().zip(uk).enumerate() {
                            acc[d] -= 2.0 * c * (vi - ukd) * (vi - ukd);
                        }
                    }
                }
            }
        }
        Ok(TargetTerm {
            log_prob,
            degenerate: false,
            grad_alpha: Some(grad_alpha),
            grad_metric,
        })
    }

    /// The metric gradient as printed in matrix form,
    /// `Σ_q Σ_r 4Ω(Φ C_r Φ_rᵀ + Φ_r C_rᵀ Φᵀ - Φ C_r⁽¹⁾ Φᵀ - Φ_r C_r⁽²⁾ Φ_rᵀ)`,
    /// with `Φ`, `Φ_r` the descriptor matrices (one column per item).
    ///
    /// For a diagonal metric its diagonal equals `2 ∂/∂θ_d`; the optimizer
    /// uses [`Gradient::wrt_log_metric`] instead.
    pub fn printed_metric_gradient(&self, state: &LearnState) -> Result<DMatrix<f64>> {
        let metric = state
            .metric()
            .ok_or_else(|| Error::InvalidArgument("state has no metric parameters".into()))?;
        let alphas = state.alphas();
        let sim = self.similarity(state);
        let dim = metric.len();
        let mut total = DMatrix::<f64>::zeros(dim, dim);
        for &q in &self.targets {
            let n = self.descriptors[q].len();
            let blocks: Vec<DMatrix<f64>> = self
                .sources
                .iter()
                .map(|&r| self.block(q, r, &sim))
                .collect::<Result<_>>()?;
            let mut l_hat = DMatrix::<f64>::zeros(n, n);
            for (j, (&r, b)) in self.sources.iter().zip(&blocks).enumerate() {
                if self.active(q, r) {
                    l_hat += (b * b.transpose()) * alphas[j];
                }
            }
            let y = self.truths[q].indices();
            let minor = Cholesky::factor(&principal_minor(&l_hat, y)).ok_or_else(|| {
                Error::DegenerateLikelihood {
                    exemplar: self.exemplars[q].id.clone(),
                }
            })?;
            let mut g = -factor_shifted(&l_hat)?.inverse();
            let m_y = minor.inverse();
            for (a, &i) in y.iter().enumerate() {
                for (b, &j) in y.iter().enumerate() {
                    g[(i, j)] += m_y[(a, b)];
                }
            }
            let phi = DMatrix::from_column_slice(dim, n, self.descriptors[q].as_slice());
            for (j, (&r, b)) in self.sources.iter().zip(&blocks).enumerate() {
                if !self.active(q, r) {
                    continue;
                }
                let cols = self.truths[r].indices();
                let u = self.descriptors[r].select(cols);
                let phi_r = DMatrix::from_column_slice(dim, cols.len(), u.as_slice());
                let c = (&g * b * alphas[j]).component_mul(b);
                let c1 = DMatrix::from_diagonal(&c.column_sum());
                let c2 = DMatrix::from_diagonal(&c.row_sum().transpose());
                total += &phi * &c * phi_r.transpose() + &phi_r * c.transpose() * phi.transpose()
                    - &phi * c1 * phi.transpose()
                    - &phi_r * c2 * phi_r.transpose();
            }
        }
        let omega = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(metric));
        Ok(omega * total * 4.0)
    }
}

struct TargetTerm {
    log_prob: f64,
    degenerate: bool,
    grad_alpha: Option<Vec<f64>>,
    grad_metric: Option<Vec<f64>>,
}

/// `-Σ_q log P(y_q; L̂_q)` (penalized for zero-probability targets).
pub fn leave_self_in_nll(state: &LearnState, problem: &Problem<'_>) -> Result<f64> {
    Ok(-problem.evaluate(state, false)?.log_likelihood)
}

/// Log-likelihood gradient with respect to `β = ln α`.
pub fn grad_alpha(state: &LearnState, problem: &Problem<'_>) -> Result<Vec<f64>> {
    Ok(problem
        .evaluate(state, true)?
        .gradient
        .expect("requested gradient")
        .wrt_beta)
}

/// Log-likelihood gradient with respect to `θ = ln diag(Ω)`.
pub fn grad_metric(state: &LearnState, problem: &Problem<'_>) -> Result<Vec<f64>> {
    problem
        .evaluate(state, true)?
        .gradient
        .expect("requested gradient")
        .wrt_log_metric
        .ok_or_else(|| Error::InvalidArgument("metric is not being learned".into()))
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` in every coordinate.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            Ok((f(&xp)? - f(&xm)?) / (2.0 * h))
        })
        .collect()
}

/// Numerical log-likelihood gradient, split like the analytic one.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericGradient {
    pub wrt_beta: Vec<f64>,
    pub wrt_log_metric: Option<Vec<f64>>,
}

/// Central differences of the negated [`leave_self_in_nll`], i.e. of the
/// log-likelihood, in every `β` and `θ` coordinate.
pub fn finite_difference_oracle(
    state: &LearnState,
    problem: &Problem<'_>,
    h: f64,
) -> Result<NumericGradient> {
    let x = state.flat();
    let g = central_difference(
        |p| Ok(-leave_self_in_nll(&state.with_flat(p), problem)?),
        &x,
        h,
    )?;
    let nb = state.beta.len();
    Ok(NumericGradient {
        wrt_beta: g[..nb].to_vec(),
        wrt_log_metric: state.omega_log.as_ref().map(|_| g[nb..].to_vec()),
    })
}

/// Gradient ascent with backtracking on one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AscentReport {
    pub state: LearnState,
    /// Gradient norm fell below tolerance.
    pub converged: bool,
    /// Line search could not find a non-decreasing step; `state` is the best iterate.
    pub stalled: bool,
}

pub fn ascend(problem: &Problem<'_>, iters: usize, step: f64) -> Result<AscentReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be > 0, got {step}")));
    }
    let initial_step = step;
    let mut state = problem.initial_state();
    state.step_size = step;
    let mut current = problem.evaluate(&state, iters > 0)?;
    state.objective_trace.push(current.log_likelihood);
    let mut converged = false;
    let mut stalled = false;

    while state.iteration < iters {
        let grad = current.gradient.as_ref().expect("gradient requested");
        let mut direction = grad.wrt_beta.clone();
        if let Some(g) = &grad.wrt_log_metric {
            direction.extend_from_slice(g);
        }
        if direction.iter().all(|g| g.abs() < GRAD_TOL) {
            converged = true;
            break;
        }
        let x = state.flat();
        let mut step = state.step_size;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial_x: Vec<f64> = x.iter().zip(&direction).map(|(a, g)| a + step * g).collect();
            let trial = state.with_flat(&trial_x);
            if trial_x.iter().all(|v| v.is_finite()) {
                if let Ok(eval) = problem.evaluate(&trial, false) {
                    if eval.degenerate.is_empty()
                        && eval.log_likelihood.is_finite()
                        && eval.log_likelihood >= current.log_likelihood
                    {
                        accepted = Some(trial);
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some(mut next) = accepted else {
            stalled = true;
            break;
        };
        next.iteration += 1;
        next.step_size = (step * 2.0).min(initial_step * MAX_STEP_GROWTH);
        let previous = current.log_likelihood;
        current = problem.evaluate(&next, true)?;
        next.objective_trace.push(current.log_likelihood);
        state = next;
        if current.log_likelihood - previous <= REL_TOL * previous.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(AscentReport {
        state,
        converged,
        stalled,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub learn: LearnConfig,
    pub mode: CategoryMode,
    pub iters: usize,
    pub step: f64,
    /// Stored on the model for sequential extraction at test time.
    pub sequential: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learn: LearnConfig::default(),
            mode: CategoryMode::None,
            iters: 200,
            step: 1.0,
            sequential: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub category: Option<String>,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub groups: Vec<GroupReport>,
}

impl FitReport {
    /// Some group's line search failed to improve before the iteration cap.
    pub fn warning(&self) -> bool {
        self.groups.iter().any(|g| g.stalled)
    }
}

/// Fits scale parameters (and optionally the metric) on `corpus`.
///
/// In hard mode each category is fit on its own videos only; in soft mode
/// each category's videos are explained by every exemplar with
/// category-specific scales.
pub fn fit(corpus: &[Exemplar], cfg: &FitConfig) -> Result<(TransferModel, FitReport)> {
    if corpus.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 exemplars, got {}",
            corpus.len()
        )));
    }
    let mut learn = cfg.learn.clone();
    if learn.learn_metric {
        learn.similarity = Similarity::Mahalanobis(Metric::identity(corpus[0].sequence.dim()));
    }
    let run = |targets: Vec<usize>, sources: Vec<usize>, category: Option<String>| -> Result<(AscentReport, GroupReport, Vec<usize>)> {
        let problem = Problem::new(corpus, targets, sources.clone(), learn.clone())?;
        let report = ascend(&problem, cfg.iters, cfg.step)?;
        let group = GroupReport {
            category,
            iterations: report.state.iteration,
            objective_trace: report.state.objective_trace.clone(),
            converged: report.converged,
            stalled: report.stalled,
        };
        Ok((report, group, sources))
    };

    let all: Vec<usize> = (0..corpus.len()).collect();
    let (weights, similarity, groups) = match cfg.mode {
        CategoryMode::None => {
            let (report, group, _) = run(all.clone(), all, None)?;
            let similarity = match report.state.metric() {
                Some(m) => Similarity::Mahalanobis(Metric::Diagonal(m)),
                None => learn.similarity.clone(),
            };
            (Weights::Shared(report.state.alphas()), similarity, vec![group])
        }
        CategoryMode::Hard | CategoryMode::Soft => {
            let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, ex) in corpus.iter().enumerate() {
                let c = ex.category.as_ref().ok_or_else(|| {
                    Error::video(&ex.id, format!("{} category mode needs a category label", cfg.mode.name()))
                })?;
                members.entry(c.clone()).or_default().push(i);
            }
            let mut map = BTreeMap::new();
            let mut groups = Vec::new();
            for (c, idx) in members {
                let sources = if cfg.mode == CategoryMode::Hard {
                    idx.clone()
                } else {
                    all.clone()
                };
                let (report, group, sources) = run(idx, sources, Some(c.clone()))?;
                let mut alphas = vec![0.0; corpus.len()];
                for (&r, a) in sources.iter().zip(report.state.alphas()) {
                    alphas[r] = a;
                }
                map.insert(
                    c,
                    CategoryWeights {
                        alphas,
                        metric: report.state.metric(),
                    },
                );
                groups.push(group);
            }
            (Weights::PerCategory(map), learn.similarity.clone(), groups)
        }
    };
    let params = ModelParams {
        similarity,
        granularity: learn.granularity,
        mode: cfg.mode,
        weights,
        sequential: cfg.sequential,
    };
    Ok((TransferModel::new(corpus.to_vec(), params)?, FitReport { groups }))
}
