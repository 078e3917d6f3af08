//! Batch driver: synthesize a corpus, train, summarize, evaluate, check
//! gradients and run the split protocol.
//!
//! Exit status is 0 on success, 1 for invalid input and 2 for numerical
//! failures (including a failed gradient check).

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use sumtransfer::corpus::{data_dir, decode_summary, encode_summary, write_synthetic, MANIFEST_FILE};
use sumtransfer::evaluation::{write_score_table, Aggregation, MatchConfig};
use sumtransfer::learning::{finite_difference_oracle, FitConfig, LearnConfig, LearnState, Problem};
use sumtransfer::protocol::{make_splits, predict, run_protocol, score_prediction, EvalConfig};
use sumtransfer::transfer::{CategoryMode, Granularity, SubshotSimilarity};
use sumtransfer::{
    fit, load_corpus, model_exemplar_ids, model_from_str, model_to_string, Corpus, Metric,
    Similarity, SynthConfig, VideoRecord,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or input files.
    Invalid(String),
    /// Numerical breakdown or a failed check.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<sumtransfer::Error> for CliError {
    fn from(e: sumtransfer::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn invalid<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Invalid(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "sumtransfer", version, about = "Exemplar-based video summary transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus
    Synth(SynthArgs),
    /// Fit scales (and optionally a metric) and write a model file
    Train(TrainArgs),
    /// Write one summary file per video
    Summarize(SummarizeArgs),
    /// Score summary files against the corpus annotations
    Eval(EvalArgs),
    /// Compare analytic gradients with central differences
    Gradcheck(GradcheckArgs),
    /// Write train/test splits and optionally run the split protocol
    Splits(SplitsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory [default: $SUMTRANSFER_DATA or ./data]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub videos: usize,
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub categories: usize,
    #[arg(long, default_value_t = 5)]
    pub keyframes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 5)]
    pub segment_len: usize,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Manifest file or corpus directory [default: $SUMTRANSFER_DATA or ./data]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated video ids to use [default: all]
    #[arg(long, value_delimiter = ',')]
    pub videos: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Dot,
    Rbf,
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Frame,
    SubshotMean,
    SubshotMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    None,
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mean,
    Max,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = SimKind::Rbf)]
    pub sim: SimKind,
    /// Bandwidth of the rbf similarity
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Learn a diagonal metric (requires --sim mahalanobis)
    #[arg(long)]
    pub learn_metric: bool,
    #[arg(long, value_enum, default_value_t = GranularityArg::Frame)]
    pub granularity: GranularityArg,
    #[arg(long, value_enum, default_value_t = ModeArg::None)]
    pub category_mode: ModeArg,
    /// Extract summaries sequentially over segments of this many frames
    #[arg(long)]
    pub sequential: Option<usize>,
    /// Let each training video contribute to its own kernel
    #[arg(long)]
    pub include_self: bool,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    /// Initial gradient step
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    /// Largest feature distance at which two frames match
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = AggregationArg::Mean)]
    pub aggregation: AggregationArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model_args: ModelArgs,
    /// Model file to write
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Model file written by `train` on the same corpus
    #[arg(long)]
    pub model: PathBuf,
    /// Directory receiving `<id>.txt` summary files
    #[arg(long)]
    pub out: PathBuf,
    /// Cap summaries at this fraction of the video's frames
    #[arg(long)]
    pub budget: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Directory of `<id>.txt` summary files
    #[arg(long)]
    pub pred: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Score table path [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model_args: ModelArgs,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Number of parameter points (the first is the initial point)
    #[arg(long, default_value_t = 3)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-coordinate table path [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 5)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = sumtransfer::protocol::TRAIN_FRACTION)]
    pub train_fraction: f64,
    /// Split table path [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Train and score every split, writing per-round F-scores here
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[command(flatten)]
    pub model_args: ModelArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long)]
    pub budget: Option<f64>,
}

/// Parses `args` (program name first), runs the subcommand and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run_with(args, &mut out, &mut err)
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out, err),
        Command::Summarize(a) => summarize(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out, err),
        Command::Splits(a) => splits(a, out, err),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Invalid(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn emit(path: Option<&Path>, contents: &str, out: &mut dyn Write) -> CliResult<()> {
    match path {
        Some(p) => write_file(p, contents.as_bytes()),
        None => out
            .write_all(contents.as_bytes())
            .map_err(|e| CliError::Invalid(format!("stdout: {e}"))),
    }
}

fn synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = SynthConfig {
        n_videos: a.videos,
        n_frames: a.frames,
        dim: a.dim,
        n_categories: a.categories,
        keyframes_per_video: a.keyframes,
        noise_level: a.noise,
        seed: a.seed,
        segment_len: a.segment_len,
    };
    cfg.validate()?;
    let dir = a.out.clone().unwrap_or_else(data_dir);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let (manifest, sha) = write_synthetic(&dir, &cfg)?;
    let _ = writeln!(out, "{}\t{sha}", manifest.display());
    Ok(())
}

/// A loaded corpus and the indices of the selected videos, in manifest order.
struct Selection {
    corpus: Corpus,
    chosen: Vec<usize>,
}

impl Selection {
    fn videos(&self) -> impl Iterator<Item = &VideoRecord> {
        self.chosen.iter().map(|&i| &self.corpus.videos[i])
    }
}

fn manifest_path(a: &CorpusArgs) -> PathBuf {
    let p = a.corpus.clone().unwrap_or_else(data_dir);
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p
    }
}

fn select(a: &CorpusArgs) -> CliResult<Selection> {
    let path = manifest_path(a);
    if !path.is_file() {
        return invalid(format!(
            "no corpus manifest at {} (pass --corpus or run `synth` first)",
            path.display()
        ));
    }
    let corpus = load_corpus(&path)?;
    let chosen = if a.videos.is_empty() {
        (0..corpus.videos.len()).collect()
    } else {
        let wanted: BTreeSet<&str> = a.videos.iter().map(String::as_str).collect();
        if let Some(missing) = wanted.iter().find(|id| corpus.get(id).is_none()) {
            return invalid(format!("video {missing:?} is not in the corpus"));
        }
        (0..corpus.videos.len())
            .filter(|&i| wanted.contains(corpus.videos[i].id.as_str()))
            .collect()
    };
    Ok(Selection { corpus, chosen })
}

fn check_budget(budget: Option<f64>) -> CliResult<()> {
    match budget {
        Some(b) if !(b > 0.0 && b <= 1.0) => invalid(format!("--budget must be in (0, 1], got {b}")),
        _ => Ok(()),
    }
}

/// Validates model flags against the videos they will be applied to.
fn fit_config(a: &ModelArgs, videos: &[&VideoRecord]) -> CliResult<FitConfig> {
    let dim = videos.first().map_or(0, |v| v.features.dim());
    let similarity = match a.sim {
        SimKind::Dot => Similarity::Dot,
        SimKind::Rbf => Similarity::Rbf { sigma: a.sigma },
        SimKind::Mahalanobis => Similarity::Mahalanobis(Metric::identity(dim)),
    };
    similarity.validate(dim)?;
    if a.learn_metric && a.sim != SimKind::Mahalanobis {
        return invalid("--learn-metric requires --sim mahalanobis");
    }
    let granularity = match a.granularity {
        GranularityArg::Frame => Granularity::Frame,
        GranularityArg::SubshotMean => Granularity::Subshot(SubshotSimilarity::Mean),
        GranularityArg::SubshotMax => Granularity::Subshot(SubshotSimilarity::Max),
    };
    if let Some(len) = a.sequential {
        if len == 0 {
            return invalid("--sequential must be at least 1");
        }
        if granularity != Granularity::Frame {
            return invalid("--sequential requires --granularity frame");
        }
    }
    if granularity != Granularity::Frame {
        if let Some(v) = videos.iter().find(|v| v.segments.is_none()) {
            return invalid(format!("video {:?} has no boundaries; subshot granularity needs them", v.id));
        }
    }
    let mode = match a.category_mode {
        ModeArg::None => CategoryMode::None,
        ModeArg::Hard => CategoryMode::Hard,
        ModeArg::Soft => CategoryMode::Soft,
    };
    if mode != CategoryMode::None {
        if let Some(v) = videos.iter().find(|v| v.category.is_none()) {
            return invalid(format!("video {:?} has no category; {} mode needs one", v.id, mode.name()));
        }
    }
    if !(a.step.is_finite() && a.step > 0.0) {
        return invalid(format!("--step must be > 0, got {}", a.step));
    }
    Ok(FitConfig {
        learn: LearnConfig {
            similarity,
            granularity,
            learn_metric: a.learn_metric,
            include_self: a.include_self,
        },
        mode,
        iters: a.iters,
        step: a.step,
        sequential: a.sequential,
    })
}

fn eval_config(a: &ScoringArgs, budget: Option<f64>) -> CliResult<EvalConfig> {
    check_budget(budget)?;
    Ok(EvalConfig {
        matching: MatchConfig::new(a.threshold)?,
        aggregation: match a.aggregation {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::Max => Aggregation::Max,
        },
        budget,
    })
}

fn train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let sel = select(&a.corpus)?;
    let videos: Vec<&VideoRecord> = sel.videos().collect();
    let cfg = fit_config(&a.model_args, &videos)?;
    let exemplars = videos.iter().map(|v| v.exemplar()).collect::<Result<Vec<_>, _>>()?;
    let (model, report) = fit(&exemplars, &cfg)?;
    for g in &report.groups {
        let _ = writeln!(
            err,
            "{}: {} iterations, log-likelihood {:.6}, converged {}, stalled {}",
            g.category.as_deref().unwrap_or("all"),
            g.iterations,
            g.objective_trace.last().copied().unwrap_or(f64::NAN),
            g.converged,
            g.stalled
        );
    }
    if report.warning() {
        let _ = writeln!(err, "warning: line search stalled before convergence");
    }
    write_file(&a.model, model_to_string(&model, &sel.corpus.manifest_sha256).as_bytes())?;
    let _ = writeln!(out, "{}", a.model.display());
    Ok(())
}

fn load_bound_model(path: &Path, corpus: &Corpus) -> CliResult<sumtransfer::TransferModel> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let ids = model_exemplar_ids(&text)?;
    if let Some(missing) = ids.iter().find(|id| corpus.get(id).is_none()) {
        return invalid(format!("model exemplar {missing:?} is not in the corpus"));
    }
    let exemplars = corpus
        .videos
        .iter()
        .filter(|v| ids.contains(&v.id))
        .map(VideoRecord::exemplar)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(model_from_str(&text, exemplars, Some(&corpus.manifest_sha256))?)
}

fn summarize(a: &SummarizeArgs, out: &mut dyn Write) -> CliResult<()> {
    check_budget(a.budget)?;
    let sel = select(&a.corpus)?;
    let model = load_bound_model(&a.model, &sel.corpus)?;
    let videos: Vec<&VideoRecord> = sel.videos().collect();
    let preds = videos
        .par_iter()
        .map(|v| predict(&model, v, a.budget))
        .collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    for (v, p) in videos.iter().zip(&preds) {
        write_file(&a.out.join(format!("{}.txt", v.id)), encode_summary(p).as_bytes())?;
    }
    let _ = writeln!(out, "{} summaries in {}", preds.len(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = eval_config(&a.scoring, None)?;
    let sel = select(&a.corpus)?;
    let mut rows = Vec::new();
    for v in sel.videos() {
        let path = a.pred.join(format!("{}.txt", v.id));
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let pred = decode_summary(&text, v.features.len())
            .map_err(|m| CliError::Invalid(format!("video {:?}: {}: {m}", v.id, path.display())))?;
        rows.push(score_prediction(&pred, v, &cfg)?);
    }
    let mut table = Vec::new();
    write_score_table(&mut table, &rows).expect("write to memory");
    emit(a.out.as_deref(), &String::from_utf8(table).expect("ascii table"), out)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    if !(a.h.is_finite() && a.h > 0.0) {
        return invalid(format!("--h must be > 0, got {}", a.h));
    }
    if !(a.tol.is_finite() && a.tol > 0.0) {
        return invalid(format!("--tol must be > 0, got {}", a.tol));
    }
    if a.points == 0 {
        return invalid("--points must be at least 1");
    }
    let sel = select(&a.corpus)?;
    let videos: Vec<&VideoRecord> = sel.videos().collect();
    let cfg = fit_config(&a.model_args, &videos)?;
    let exemplars = videos.iter().map(|v| v.exemplar()).collect::<Result<Vec<_>, _>>()?;
    let problem = Problem::full(&exemplars, cfg.learn)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut jitter = |x: &[f64]| -> Vec<f64> {
        x.iter().map(|v| v + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let mut states = vec![problem.initial_state()];
    while states.len() < a.points {
        let s0 = problem.initial_state();
        states.push(LearnState {
            beta: jitter(&s0.beta),
            omega_log: s0.omega_log.as_deref().map(&mut jitter),
            ..s0
        });
    }
    let mut table = String::from("point,parameter,index,analytic,numeric,relative_error\n");
    let mut worst: f64 = 0.0;
    for (p, state) in states.iter().enumerate() {
        let grad = problem
            .evaluate(state, true)?
            .gradient
            .ok_or_else(|| CliError::Numerical("gradient unavailable".into()))?;
        let numeric = finite_difference_oracle(state, &problem, a.h)?;
        let mut blocks = vec![("log_scale", grad.wrt_beta.clone(), numeric.wrt_beta.clone())];
        if let (Some(g), Some(n)) = (grad.wrt_log_metric, numeric.wrt_log_metric) {
            blocks.push(("log_metric", g, n));
        }
        for (name, g, n) in blocks {
            for (i, (x, y)) in g.iter().zip(&n).enumerate() {
                let e = relative_error(*x, *y);
                worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
                writeln!(table, "{p},{name},{i},{x:.10e},{y:.10e},{e:.3e}").expect("write to string");
            }
        }
    }
    emit(a.out.as_deref(), &table, out)?;
    let _ = writeln!(err, "largest relative error {worst:.3e} (tolerance {:.1e})", a.tol);
    if worst > a.tol {
        return Err(CliError::Numerical(format!(
            "gradient check failed: relative error {worst:.3e} exceeds {:.1e}",
            a.tol
        )));
    }
    Ok(())
}

fn splits(a: &SplitsArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    if a.rounds == 0 {
        return invalid("--rounds must be at least 1");
    }
    let sel = select(&a.corpus)?;
    if sel.chosen.len() != sel.corpus.videos.len() {
        return invalid("splits are drawn over the whole corpus; --videos is not supported here");
    }
    let corpus = &sel.corpus;
    let cats: Vec<Option<String>> = corpus.videos.iter().map(|v| v.category.clone()).collect();
    let splits = make_splits(&cats, a.rounds, a.seed, a.train_fraction)?;
    let run = match &a.results {
        Some(_) => {
            let videos: Vec<&VideoRecord> = corpus.videos.iter().collect();
            Some((fit_config(&a.model_args, &videos)?, eval_config(&a.scoring, a.budget)?))
        }
        None => None,
    };
    let mut table = String::from("round,video_id,role\n");
    for (r, s) in splits.iter().enumerate() {
        let mut roles: Vec<(usize, &str)> = s.train.iter().map(|&i| (i, "train")).collect();
        roles.extend(s.test.iter().map(|&i| (i, "test")));
        roles.sort_unstable();
        for (i, role) in roles {
            writeln!(table, "{r},{},{role}", corpus.videos[i].id).expect("write to string");
        }
    }
    let summary = match &run {
        Some((fit_cfg, eval_cfg)) => Some(run_protocol(corpus, &splits, fit_cfg, eval_cfg)?),
        None => None,
    };
    emit(a.out.as_deref(), &table, out)?;
    if let (Some(path), Some(s)) = (&a.results, summary) {
        let mut res = String::from("round,f_score\n");
        for (r, f) in s.per_round.iter().enumerate() {
            writeln!(res, "{r},{f:.6}").expect("write to string");
        }
        writeln!(res, "mean,{:.6}\nstderr,{:.6}", s.mean, s.stderr).expect("write to string");
        write_file(path, res.as_bytes())?;
        let _ = writeln!(err, "F = {:.2} ± {:.2} over {} rounds", s.mean, s.stderr, s.per_round.len());
    }
    Ok(())
}
