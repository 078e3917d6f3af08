//! Exemplar-based video summary transfer with determinantal point processes.
//!
//! A new video's DPP kernel is synthesized from annotated exemplar videos by
//! projecting each exemplar's summary structure through cross-video frame
//! similarity. The scale of every exemplar's contribution (and optionally a
//! diagonal similarity metric) is learned by maximum likelihood.

pub mod corpus;
pub mod dpp;
pub mod error;
pub mod evaluation;
pub mod learning;
mod linalg;
pub mod model_file;
pub mod protocol;
pub mod segments;
pub mod similarity;
pub mod transfer;

pub use dpp::{
    condition_on, log_partition, map_exact, map_greedy, subset_log_prob, KernelMatrix,
    SubsetSelection,
};
pub use corpus::{gen_synthetic, load_corpus, save_corpus, Corpus, SynthConfig, VideoRecord};
pub use error::{Error, Result};
pub use evaluation::{aggregate, match_pairs, score, Aggregation, MatchConfig, ScoreTriple};
pub use learning::{
    fit, finite_difference_oracle, grad_alpha, grad_metric, leave_self_in_nll, FitConfig,
    FitReport, LearnConfig, LearnState, Problem,
};
pub use model_file::{load_model, model_exemplar_ids, model_from_str, model_to_string, save_model};
pub use segments::Segmentation;
pub use similarity::{FeatureSequence, Metric, Similarity};
pub use transfer::{
    effective_alphas, idealized_kernel, summarize, summarize_sequential, synthesize_kernel,
    CategoryMode, Exemplar, Granularity, ModelParams, Query, SubshotSimilarity, TransferModel,
    Weights,
};
