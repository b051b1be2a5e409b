//! Corpus BLEU (`nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp`) and paired
//! bootstrap significance testing.

mod bleu;
mod bootstrap;
mod tok13a;

pub use bleu::{corpus_bleu, sentence_stats, BleuReport, BleuStats, MAX_ORDER};
pub use bootstrap::{paired_bootstrap, resample_indices, SignificanceResult};
pub use tok13a::tokenize_13a;

/// Resample count used for significance testing by default.
pub const DEFAULT_RESAMPLES: usize = 1000;
/// Significance threshold used by default.
pub const DEFAULT_THRESHOLD: f64 = 0.05;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("evaluation: {hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("evaluation: empty corpus")]
    Empty,
    #[error("evaluation: at least one bootstrap resample is required")]
    NoResamples,
}
