//! Evaluation: 13a tokenization, BLEU, Sigma, CPL conformity, break
//! coverage, paired bootstrap significance and break pattern statistics.

mod bleu;
mod bootstrap;
mod patterns;
mod report;
mod segmentation;
mod sigma;
mod tokenize;

use thiserror::Error;

use crate::corpus::BreakToken;

pub use bleu::{bleu, bleu_tokens, BleuScore, BleuStats, Smoothing, MAX_ORDER};
pub use bootstrap::{paired_bootstrap, BootstrapResult, DEFAULT_SAMPLES, SIGNIFICANCE_LEVEL};
pub use patterns::{
    break_pattern_stats, function_words, parse_word_list, KindStats, PatternStats, PUNCTUATION,
};
pub use report::{evaluate, EvaluationReport};
pub use segmentation::{break_coverage, cpl_conformity, BreakCounts};
pub use sigma::{align, break_placement, oracle_projection, sigma, sigma_tokens, PlacementScore, SigmaScore};
pub use tokenize::tokenize_13a;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("Sigma upper bound is zero")]
    ZeroUpperBound,
    #[error("no reference {0} breaks")]
    ZeroReferenceBreaks(BreakToken),
    #[error("no {0} breaks in corpus")]
    NoBreaksOfKind(BreakToken),
    #[error("bootstrap needs at least 100 samples, got {0}")]
    TooFewSamples(usize),
}
