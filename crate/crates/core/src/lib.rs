//! Tools for turning speech-translation corpora into subtitling corpora.
//!
//! The crate covers the whole workflow: the break-annotated text format
//! (`<eol>` / `<eob>`), a rule-based and neural segmenters, the evaluation
//! metrics used for subtitle segmentation (BLEU, Sigma, CPL conformity,
//! break coverage), corpus preparation pipelines and synthetic corpus
//! generation.

pub mod corpus;
pub mod datapipe;
pub mod metrics;
pub mod neural;
pub mod par;
pub mod rng;
pub mod rulebased;
pub mod synth;

pub use corpus::{BreakToken, Corpus, ParseMode, SegmentedSentence, Token};
pub use par::Execution;
