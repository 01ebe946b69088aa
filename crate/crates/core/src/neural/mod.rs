//! Neural segmenters: a textual encoder-decoder, a multimodal model with
//! parallel cross-attention over text and speech, and a speech-only model.
//!
//! Everything runs on the CPU through a small tape-based autograd over
//! dense matrices. Training uses `f32`; the same code runs in `f64` for
//! gradient checks.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod ctc;
pub mod decode;
pub mod gradcheck;
pub mod model;
pub mod tensor;
pub mod train;
pub mod vocab;

use thiserror::Error;

pub use autograd::{Gradients, Parameters, Tape, Var};
pub use checkpoint::{average_checkpoints, Checkpoint, CheckpointMeta};
pub use config::{Mode, ModelConfig, ModelShape, TrainConfig, TrainOptions};
pub use ctc::{ctc_loss, min_frames};
pub use decode::{beam_search, greedy_search, segment_words, Hypothesis, ModelScorer, StepScorer};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{Encoded, ForwardOutput, Model, ModelInput};
pub use tensor::{Mat, Scalar};
pub use train::{
    batch_loss, lr_schedule, train, train_step, BatchSampler, Example, LossOptions, LossParts, StepRecord,
    TrainState,
};
pub use vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("{mode:?} model got text={text} speech={speech}")]
    ModeMismatch { mode: Mode, text: bool, speech: bool },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("CTC target needs {needed} frames, only {frames} available")]
    TargetTooLong { frames: usize, needed: usize },
    #[error("non-finite loss at step {step}: {detail}")]
    NaNLoss { step: u64, detail: String },
    #[error("language token for {0:?} is not in the vocabulary")]
    UnknownLanguageToken(String),
    #[error("checkpoint configurations differ: {0}")]
    ConfigMismatch(String),
    #[error("expected 7 checkpoints, got {0}")]
    WrongCount(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for NeuralError {
    fn from(e: std::io::Error) -> Self {
        NeuralError::Io(e.to_string())
    }
}
