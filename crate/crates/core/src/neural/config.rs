//! Model and training configuration.

use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, EOB_ID, EOL_ID};
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Unsegmented text in, segmented text out.
    Textual,
    /// Text plus speech features, decoded with parallel cross-attention.
    Multimodal,
    /// Speech features only.
    SpeechOnly,
}

impl Mode {
    pub fn uses_text(self) -> bool {
        matches!(self, Mode::Textual | Mode::Multimodal)
    }

    pub fn uses_speech(self) -> bool {
        matches!(self, Mode::Multimodal | Mode::SpeechOnly)
    }

    /// Speech-conditioned models prefix the target with a language token.
    pub fn uses_language_token(self) -> bool {
        self.uses_speech()
    }
}

impl std::str::FromStr for Mode {
    type Err = NeuralError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "textual" => Ok(Mode::Textual),
            "multimodal" => Ok(Mode::Multimodal),
            "speech_only" => Ok(Mode::SpeechOnly),
            other => Err(NeuralError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

/// Architecture sizes without the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub mode: Mode,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    #[serde(default)]
    pub text_enc_layers: usize,
    #[serde(default)]
    pub speech_enc_layers: usize,
    pub dec_layers: usize,
    #[serde(default = "default_downsample")]
    pub speech_downsample: usize,
    #[serde(default)]
    pub feature_dims: usize,
    #[serde(default)]
    pub dropout: f64,
}

fn default_downsample() -> usize {
    4
}

impl ModelShape {
    /// Desk-scale defaults: d_model 64, 4 heads, ffn 128, 3 text / 6 speech
    /// encoder layers and 3 decoder layers.
    pub fn toy(mode: Mode, feature_dims: usize) -> ModelShape {
        ModelShape {
            mode,
            d_model: 64,
            n_heads: 4,
            ffn_dim: 128,
            text_enc_layers: if mode.uses_text() { 3 } else { 0 },
            speech_enc_layers: if mode.uses_speech() { 6 } else { 0 },
            dec_layers: 3,
            speech_downsample: 4,
            feature_dims: if mode.uses_speech() { feature_dims } else { 0 },
            dropout: 0.0,
        }
    }

    /// One layer of everything at width 8, for numerical checks.
    pub fn tiny(mode: Mode, feature_dims: usize) -> ModelShape {
        ModelShape {
            mode,
            d_model: 8,
            n_heads: 2,
            ffn_dim: 16,
            text_enc_layers: usize::from(mode.uses_text()),
            speech_enc_layers: usize::from(mode.uses_speech()),
            dec_layers: 1,
            speech_downsample: 4,
            feature_dims: if mode.uses_speech() { feature_dims } else { 0 },
            dropout: 0.0,
        }
    }

    /// Full-size profile: 512-wide, 12 speech encoder layers, 3 text
    /// encoder and 3 decoder layers. Configuration only; not trained here.
    pub fn full_scale(mode: Mode, feature_dims: usize) -> ModelShape {
        ModelShape {
            mode,
            d_model: 512,
            n_heads: 8,
            ffn_dim: 2048,
            text_enc_layers: if mode.uses_text() { 3 } else { 0 },
            speech_enc_layers: if mode.uses_speech() { 12 } else { 0 },
            dec_layers: if mode == Mode::SpeechOnly { 6 } else { 3 },
            speech_downsample: 4,
            feature_dims: if mode.uses_speech() { feature_dims } else { 0 },
            dropout: 0.1,
        }
    }

    pub fn with_vocab(self, vocab: &Vocab) -> ModelConfig {
        ModelConfig {
            shape: self,
            vocab: vocab.tokens().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub shape: ModelShape,
    pub vocab: Vec<String>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<Vocab, NeuralError> {
        let s = &self.shape;
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.to_string()));
        if s.d_model == 0 || s.n_heads == 0 || s.d_model % s.n_heads != 0 {
            return bad("d_model must be a positive multiple of n_heads");
        }
        if s.ffn_dim == 0 || s.dec_layers == 0 {
            return bad("ffn_dim and dec_layers must be positive");
        }
        match s.mode {
            Mode::Textual if s.speech_enc_layers != 0 => return bad("textual mode has no speech encoder"),
            Mode::SpeechOnly if s.text_enc_layers != 0 => return bad("speech-only mode has no text encoder"),
            _ => {}
        }
        if s.mode.uses_speech() {
            if s.feature_dims == 0 {
                return bad("speech modes need feature_dims");
            }
            if s.speech_downsample < 2 || !s.speech_downsample.is_power_of_two() {
                return bad("speech_downsample must be a power of two >= 2");
            }
        }
        if !(0.0..1.0).contains(&s.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        let vocab = Vocab::from_tokens(self.vocab.clone())?;
        if vocab.token(EOL_ID) != crate::corpus::EOL || vocab.token(EOB_ID) != crate::corpus::EOB {
            return bad("vocabulary lacks break tokens");
        }
        Ok(vocab)
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub label_smoothing: f64,
    /// Weight of the CTC term on the speech encoder.
    pub ctc_weight: f64,
    /// Global gradient-norm clipping; 0 disables it.
    pub clip_norm: f64,
    pub log_every: usize,
    /// Steps between checkpoints; 0 saves only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 1000,
            batch_size: 16,
            base_lr: 1e-3,
            warmup_steps: 4000,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            label_smoothing: 0.1,
            ctc_weight: 0.5,
            clip_norm: 0.0,
            log_every: 10,
            checkpoint_every: 0,
        }
    }
}

/// Declarative training configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelShape,
    #[serde(default)]
    pub train: TrainOptions,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<TrainConfig, NeuralError> {
        toml::from_str(text).map_err(|e| NeuralError::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable")
    }
}
