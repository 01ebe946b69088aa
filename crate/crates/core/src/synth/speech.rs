//! Synthetic speech features with pauses at subtitle breaks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{BreakToken, FeatureMatrix, SegmentedSentence, Token};
use crate::rng;

/// Codebook vectors depend only on this seed and the character, so every
/// sentence and language shares one acoustic inventory.
const CODEBOOK_SEED: u64 = 0x5eed_c0de;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeechConfig {
    /// Silent frames after an `<eob>`; an `<eol>` gets half, rounded up.
    pub pause_frames: usize,
    pub feature_dims: usize,
    /// Voiced frames per character. Each word also carries one extra
    /// character-length span of a word-boundary sound.
    pub frames_per_char: usize,
    /// Standard deviation of the noise on voiced frames.
    pub voiced_noise: f32,
    /// Standard deviation of the pause frames.
    pub pause_noise: f32,
    pub frame_shift_ms: u32,
}

impl Default for SpeechConfig {
    fn default() -> Self {
        SpeechConfig {
            pause_frames: 8,
            feature_dims: 16,
            frames_per_char: 6,
            voiced_noise: 0.3,
            pause_noise: 0.05,
            frame_shift_ms: 10,
        }
    }
}

impl SpeechConfig {
    pub fn eol_pause_frames(&self) -> usize {
        self.pause_frames.div_ceil(2)
    }

    pub fn word_frames(&self, word: &str) -> usize {
        self.frames_per_char * (word.chars().count() + 1)
    }

    /// Exact number of frames generated for `s`.
    pub fn expected_frames(&self, s: &SegmentedSentence) -> usize {
        s.tokens()
            .iter()
            .map(|t| match t {
                Token::Word(w) => self.word_frames(w),
                Token::Break(BreakToken::Eob) => self.pause_frames,
                Token::Break(BreakToken::Eol) => self.eol_pause_frames(),
            })
            .sum()
    }
}

/// Unit-energy vector for one sound (mean square 1 per component).
fn codebook(key: u64, dims: usize) -> Vec<f32> {
    let mut r = rng::derived(CODEBOOK_SEED, key);
    let v: Vec<f32> = (0..dims).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
    v
}

fn char_key(c: char) -> u64 {
    c as u64 + 1
}

/// Renders `sentence` as a frame sequence: each word is a run of voiced
/// frames, one span per character followed by a word-boundary span, and
/// each break is a run of near-silent frames (`pause_frames` for `<eob>`,
/// half of that rounded up for `<eol>`).
pub fn generate_synthetic_speech<R: Rng + ?Sized>(
    sentence: &SegmentedSentence,
    cfg: &SpeechConfig,
    rng: &mut R,
) -> FeatureMatrix {
    let dims = cfg.feature_dims.max(1);
    let voiced = Normal::new(0.0f32, cfg.voiced_noise.max(0.0)).expect("finite std");
    let silent = Normal::new(0.0f32, cfg.pause_noise.max(0.0)).expect("finite std");
    let boundary = codebook(0, dims);
    let mut data: Vec<f32> = Vec::with_capacity(cfg.expected_frames(sentence) * dims);
    let voice = |data: &mut Vec<f32>, proto: &[f32], rng: &mut R| {
        for _ in 0..cfg.frames_per_char {
            data.extend(proto.iter().map(|&p| p + voiced.sample(rng)));
        }
    };
    for tok in sentence.tokens() {
        match tok {
            Token::Word(w) => {
                for c in w.chars() {
                    let proto = codebook(char_key(c), dims);
                    voice(&mut data, &proto, rng);
                }
                voice(&mut data, &boundary, rng);
            }
            Token::Break(b) => {
                let n = match b {
                    BreakToken::Eob => cfg.pause_frames,
                    BreakToken::Eol => cfg.eol_pause_frames(),
                };
                data.extend((0..n * dims).map(|_| silent.sample(rng)));
            }
        }
    }
    if data.is_empty() {
        data.extend((0..dims).map(|_| silent.sample(rng)));
    }
    let frames = data.len() / dims;
    FeatureMatrix::new(frames, dims, data, cfg.frame_shift_ms).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ParseMode;
    use crate::rng::seeded;

    fn s(x: &str) -> SegmentedSentence {
        SegmentedSentence::parse(x, ParseMode::Strict).unwrap()
    }

    #[test]
    fn frame_bookkeeping() {
        let cfg = SpeechConfig::default();
        let sent = s("ab cde <eol> f <eob> gh <eob>");
        let m = generate_synthetic_speech(&sent, &cfg, &mut seeded(1));
        let words = 6 * 3 + 6 * 4 + 6 * 2 + 6 * 3;
        assert_eq!(m.frames(), words + 4 + 8 + 8);
        assert_eq!(m.frames(), cfg.expected_frames(&sent));
        assert_eq!(m.dims(), 16);
    }

    #[test]
    fn single_trailing_pause() {
        let cfg = SpeechConfig::default();
        let m = generate_synthetic_speech(&s("ab c <eob>"), &cfg, &mut seeded(2));
        let silent: Vec<bool> = (0..m.frames()).map(|f| m.frame_energy(f) < 0.1).collect();
        let first_silent = silent.iter().position(|&x| x).unwrap();
        assert_eq!(first_silent, m.frames() - 8);
        assert!(silent[first_silent..].iter().all(|&x| x));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SpeechConfig::default();
        let a = generate_synthetic_speech(&s("ab <eob> cd <eob>"), &cfg, &mut seeded(3));
        let b = generate_synthetic_speech(&s("ab <eob> cd <eob>"), &cfg, &mut seeded(3));
        assert_eq!(a, b);
    }

    #[test]
    fn pauses_are_quiet() {
        use crate::synth::language::{synthetic_corpus, CorpusSpec, LanguageSpec};
        let [a, ..] = LanguageSpec::presets();
        let spec = CorpusSpec {
            sentences: 100,
            ..CorpusSpec::default()
        };
        let (mut pause, mut np, mut voiced, mut nv) = (0.0f64, 0usize, 0.0f64, 0usize);
        for u in synthetic_corpus(&a, &spec, 4, 4) {
            let mut f = 0;
            for t in u.target.tokens() {
                let n = match t {
                    Token::Word(w) => spec.speech.word_frames(w),
                    Token::Break(BreakToken::Eob) => spec.speech.pause_frames,
                    Token::Break(BreakToken::Eol) => spec.speech.eol_pause_frames(),
                };
                for k in f..f + n {
                    let e = u.features.frame_energy(k) as f64;
                    if t.is_break() {
                        pause += e;
                        np += 1;
                    } else {
                        voiced += e;
                        nv += 1;
                    }
                }
                f += n;
            }
        }
        assert!(pause / (np as f64) < 0.1 * voiced / (nv as f64));
    }
}
