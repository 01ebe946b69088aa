//! Synthetic subtitling corpora.
//!
//! A segmenter (Count Chars or a trained neural model, applied zero-shot)
//! annotates unsegmented transcripts with breaks; the result is paired
//! with the audio features to give training data for a speech-only model.
//! The module also produces synthetic speech whose pauses follow the
//! breaks, and toy languages for controlled experiments.

pub mod experiment;
pub mod language;
pub mod manifest;
pub mod profile;
pub mod speech;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BreakToken, Corpus, CorpusError, FeatureMatrix, ParseMode, SegmentedSentence, Token, Utterance};
use crate::neural::{segment_words, Checkpoint, Model, NeuralError, Parameters};
use crate::par::Execution;
use crate::rng;
use crate::rulebased::{count_chars_corpus, CountCharsConfig};

pub use language::{synthetic_corpus, CorpusSpec, LanguageSpec};
pub use manifest::{manifest_to_string, parse_manifest, read_dataset, write_dataset, ManifestRecord};
pub use profile::{closest_language, cosine, trigram_profile, Profile};
pub use speech::{generate_synthetic_speech, SpeechConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{sentences} sentences but {features} feature matrices")]
    FeatureCountMismatch { sentences: usize, features: usize },
    #[error("this segmenter needs speech features")]
    MissingFeatures,
    #[error("sentence {0} has no words")]
    EmptySentence(usize),
    #[error("input lengths differ: {ids} ids, {sources} sources, {features} features, {targets} targets")]
    CountMismatch {
        ids: usize,
        sources: usize,
        features: usize,
        targets: usize,
    },
    #[error("malformed target for utterance {0}")]
    MalformedTarget(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("utterance {0}: {1}")]
    Feature(String, CorpusError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SynthError {
    fn from(e: std::io::Error) -> Self {
        SynthError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SegmenterSpec {
    CountChars { limit: usize, eol_prob: f64 },
    Neural { checkpoint: PathBuf, beam: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub segmenter: SegmenterSpec,
    /// Prefix language token for speech-conditioned segmenters. When absent
    /// the seen language closest to the input text is used.
    pub language_token: Option<String>,
    pub speech: SpeechConfig,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.speech.pause_frames < 1 {
            return Err(SynthError::InvalidConfig("pause_frames must be at least 1".into()));
        }
        if self.speech.feature_dims < 1 {
            return Err(SynthError::InvalidConfig("feature_dims must be at least 1".into()));
        }
        if let SegmenterSpec::CountChars { limit, eol_prob } = self.segmenter {
            self.count_chars(limit, eol_prob)
                .validate()
                .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    fn count_chars(&self, limit: usize, eol_prob: f64) -> CountCharsConfig {
        CountCharsConfig {
            limit,
            eol_prob,
            seed: self.seed,
        }
    }

    /// Builds the runtime segmenter, loading the checkpoint if needed.
    /// `unseg` is only read to pick a default language token.
    pub fn build_segmenter(&self, unseg: &Corpus) -> Result<Segmenter, SynthError> {
        self.validate()?;
        match &self.segmenter {
            SegmenterSpec::CountChars { limit, eol_prob } => Ok(Segmenter::CountChars(self.count_chars(*limit, *eol_prob))),
            SegmenterSpec::Neural { checkpoint, beam } => {
                let ckpt = Checkpoint::load(checkpoint)?;
                let seg = NeuralSegmenter::from_checkpoint(ckpt, self.language_token.as_deref(), *beam, unseg)?;
                Ok(Segmenter::Neural(Box::new(seg)))
            }
        }
    }
}

/// A trained model with its decoding settings.
#[derive(Debug, Clone)]
pub struct NeuralSegmenter {
    model: Model,
    params: Parameters<f32>,
    language: Option<String>,
    beam: usize,
}

impl NeuralSegmenter {
    /// `language` must name a language token of the model when the model
    /// conditions its decoder on one; it is ignored otherwise.
    pub fn new(model: Model, params: Parameters<f32>, language: Option<String>, beam: usize) -> Result<Self, SynthError> {
        model.check_params(&params)?;
        let language = if model.mode().uses_language_token() {
            let l = language.ok_or_else(|| NeuralError::UnknownLanguageToken(String::new()))?;
            model.vocab().lang_id(&l)?;
            Some(l)
        } else {
            None
        };
        Ok(NeuralSegmenter {
            model,
            params,
            language,
            beam: beam.max(1),
        })
    }

    /// Uses `language` when given, otherwise the training language whose
    /// character 3-gram profile is closest to `unseg`.
    pub fn from_checkpoint(
        ckpt: Checkpoint,
        language: Option<&str>,
        beam: usize,
        unseg: &Corpus,
    ) -> Result<Self, SynthError> {
        let model = Model::new(ckpt.config.clone())?;
        let language = match language {
            Some(l) => Some(l.to_string()),
            None if model.mode().uses_language_token() => Some(default_language(&model, &ckpt.meta.language_profiles, unseg)),
            None => None,
        };
        NeuralSegmenter::new(model, ckpt.params, language, beam)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn language(&self) -> Option<&str> {
        self.language.as_deref()
    }

    pub fn segment(&self, words: &[&str], speech: Option<&FeatureMatrix>) -> Result<Option<SegmentedSentence>, NeuralError> {
        segment_words(&self.model, &self.params, words, speech, self.language.as_deref(), self.beam)
    }
}

fn default_language(model: &Model, profiles: &BTreeMap<String, Profile>, unseg: &Corpus) -> String {
    let known: BTreeMap<String, Profile> = profiles
        .iter()
        .filter(|(l, _)| model.vocab().lang_id(l).is_ok())
        .map(|(l, p)| (l.clone(), p.clone()))
        .collect();
    let target = trigram_profile(&unseg.sentences);
    match closest_language(&known, &target) {
        Some(l) => {
            log::info!("using language token {l} for {}", unseg.language);
            l
        }
        None => {
            let l = model.vocab().languages().into_iter().next().unwrap_or_default();
            log::warn!("checkpoint has no language profiles; using language token {l}");
            l
        }
    }
}

#[derive(Debug, Clone)]
pub enum Segmenter {
    CountChars(CountCharsConfig),
    Neural(Box<NeuralSegmenter>),
}

impl Segmenter {
    pub fn needs_features(&self) -> bool {
        match self {
            Segmenter::CountChars(_) => false,
            Segmenter::Neural(n) => n.model.mode().uses_speech(),
        }
    }
}

/// A sentence that fell back to a single final `<eob>`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmenterFailure {
    /// 0-based sentence index.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedCorpus {
    pub corpus: Corpus,
    pub failures: Vec<SegmenterFailure>,
}

fn fallback(words: &[&str]) -> SegmentedSentence {
    let mut tokens: Vec<Token> = words.iter().map(|w| Token::Word(w.to_string())).collect();
    tokens.push(Token::Break(BreakToken::Eob));
    SegmentedSentence::from_tokens(tokens, ParseMode::Strict).expect("non-empty word list")
}

/// Segments every sentence of `unseg` (breaks in the input are ignored).
///
/// Output order and count match the input. A sentence the segmenter
/// cannot handle gets a single final `<eob>` and is reported in
/// `failures` and through the log.
pub fn segment_corpus(
    unseg: &Corpus,
    features: Option<&[Arc<FeatureMatrix>]>,
    segmenter: &Segmenter,
    exec: Execution,
) -> Result<SegmentedCorpus, SynthError> {
    if let Some(f) = features {
        if f.len() != unseg.len() {
            return Err(SynthError::FeatureCountMismatch {
                sentences: unseg.len(),
                features: f.len(),
            });
        }
    }
    if segmenter.needs_features() && features.is_none() {
        return Err(SynthError::MissingFeatures);
    }
    if let Some(i) = unseg.sentences.iter().position(|s| s.words().next().is_none()) {
        return Err(SynthError::EmptySentence(i));
    }
    let results: Vec<Result<SegmentedSentence, String>> = match segmenter {
        Segmenter::CountChars(cfg) => count_chars_corpus(&unseg.sentences, cfg, exec)
            .into_iter()
            .map(|r| r.map_err(|e| e.to_string()))
            .collect(),
        Segmenter::Neural(n) => exec.map_indexed(&unseg.sentences, |i, s| {
            let words: Vec<&str> = s.words().collect();
            let speech = features.map(|f| f[i].as_ref());
            match n.segment(&words, speech) {
                Ok(Some(out)) => Ok(out),
                Ok(None) => Err("empty output".to_string()),
                Err(e) => Err(e.to_string()),
            }
        }),
    };
    let mut failures = Vec::new();
    let sentences = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(s) if s.is_well_formed() => s,
            other => {
                let reason = other.err().unwrap_or_else(|| "malformed output".to_string());
                log::warn!("sentence {i}: segmenter failed ({reason}); using a single final <eob>");
                failures.push(SegmenterFailure { index: i, reason });
                let words: Vec<&str> = unseg.sentences[i].words().collect();
                fallback(&words)
            }
        })
        .collect();
    Ok(SegmentedCorpus {
        corpus: unseg.with_sentences(sentences),
        failures,
    })
}

/// Synthetic speech for every sentence, each from its own derived stream.
pub fn synthesize_corpus(corpus: &Corpus, cfg: &SpeechConfig, seed: u64, exec: Execution) -> Vec<FeatureMatrix> {
    exec.map_indexed(&corpus.sentences, |i, s| {
        generate_synthetic_speech(s, cfg, &mut rng::derived(seed, i as u64))
    })
}

/// Zips ids, features, transcripts and segmented targets into utterances
/// in the language of `segmented`.
pub fn build_subst_dataset(
    ids: &[String],
    unseg: &Corpus,
    features: &[Arc<FeatureMatrix>],
    segmented: &Corpus,
) -> Result<Vec<Utterance>, SynthError> {
    let n = ids.len();
    if unseg.len() != n || features.len() != n || segmented.len() != n {
        return Err(SynthError::CountMismatch {
            ids: n,
            sources: unseg.len(),
            features: features.len(),
            targets: segmented.len(),
        });
    }
    let utts = (0..n)
        .map(|i| {
            let target = &segmented.sentences[i];
            if !target.is_well_formed() {
                return Err(SynthError::MalformedTarget(ids[i].clone()));
            }
            Ok(Utterance {
                id: ids[i].clone(),
                features: features[i].clone(),
                source_text: unseg.sentences[i].strip_breaks(),
                target: target.clone(),
                target_language: segmented.language.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    crate::corpus::validate_utterances(&utts)?;
    Ok(utts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Mode, ModelShape, Vocab};

    fn corpus(lines: &[&str]) -> Corpus {
        Corpus::parse("t", "xx", &lines.join("\n"), ParseMode::Lenient).unwrap()
    }

    #[test]
    fn count_chars_delegates() {
        let c = corpus(&["aaaa bbbb cccc dddd eeee ffff", "a b"]);
        let cfg = CountCharsConfig {
            limit: 10,
            eol_prob: 0.25,
            seed: 5,
        };
        let out = segment_corpus(&c, None, &Segmenter::CountChars(cfg), Execution::Sequential).unwrap();
        let direct: Vec<_> = count_chars_corpus(&c.sentences, &cfg, Execution::Sequential)
            .into_iter()
            .map(Result::unwrap)
            .collect();
        assert_eq!(out.corpus.sentences, direct);
        assert!(out.failures.is_empty());
        let empty = segment_corpus(&corpus(&[]), None, &Segmenter::CountChars(cfg), Execution::Parallel).unwrap();
        assert!(empty.corpus.is_empty());
    }

    #[test]
    fn failure_falls_back() {
        let c = corpus(&["a b", "averyveryverylongword b", "c"]);
        let cfg = CountCharsConfig {
            limit: 5,
            eol_prob: 0.0,
            seed: 0,
        };
        let out = segment_corpus(&c, None, &Segmenter::CountChars(cfg), Execution::Parallel).unwrap();
        assert_eq!(out.corpus.len(), 3);
        assert_eq!(out.corpus.sentences[1].to_string(), "averyveryverylongword b <eob>");
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].index, 1);
    }

    #[test]
    fn feature_count_checked() {
        let c = corpus(&["a b"]);
        let seg = Segmenter::CountChars(CountCharsConfig::default());
        let err = segment_corpus(&c, Some(&[]), &seg, Execution::Sequential).unwrap_err();
        assert_eq!(err, SynthError::FeatureCountMismatch { sentences: 1, features: 0 });
    }

    #[test]
    fn neural_needs_known_language_and_features() {
        let v = Vocab::build(&["xx"], ["ab"]);
        let model = Model::new(ModelShape::tiny(Mode::Multimodal, 3).with_vocab(&v)).unwrap();
        let params = model.init_params(0);
        assert!(matches!(
            NeuralSegmenter::new(model.clone(), params.clone(), Some("qq".into()), 1),
            Err(SynthError::Neural(NeuralError::UnknownLanguageToken(_)))
        ));
        let seg = Segmenter::Neural(Box::new(NeuralSegmenter::new(model, params, Some("xx".into()), 1).unwrap()));
        let c = corpus(&["ab ba"]);
        assert_eq!(segment_corpus(&c, None, &seg, Execution::Sequential), Err(SynthError::MissingFeatures));
        let f = Arc::new(FeatureMatrix::new(12, 3, vec![0.5; 36], 10).unwrap());
        let out = segment_corpus(&c, Some(&[f]), &seg, Execution::Sequential).unwrap();
        assert_eq!(out.corpus.len(), 1);
        assert!(out.corpus.sentences[0].is_well_formed());
    }

    #[test]
    fn dataset_checks() {
        let unseg = corpus(&["a b", "c"]);
        let seg = corpus(&["a <eob> b <eob>", "c <eob>"]);
        let f = Arc::new(FeatureMatrix::new(2, 1, vec![0.0; 2], 10).unwrap());
        let ids = vec!["u1".to_string(), "u2".to_string()];
        let utts = build_subst_dataset(&ids, &unseg, &[f.clone(), f.clone()], &seg).unwrap();
        assert_eq!(utts.len(), 2);
        assert_eq!(utts[0].target.strip_breaks(), unseg.sentences[0]);
        assert!(matches!(
            build_subst_dataset(&ids, &unseg, &[f.clone()], &seg),
            Err(SynthError::CountMismatch { .. })
        ));
        let bad = corpus(&["a <eob> b <eob>", "c"]);
        assert_eq!(
            build_subst_dataset(&ids, &unseg, &[f.clone(), f], &bad),
            Err(SynthError::MalformedTarget("u2".into()))
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = SynthConfig {
            segmenter: SegmenterSpec::CountChars { limit: 42, eol_prob: 0.25 },
            language_token: None,
            speech: SpeechConfig::default(),
            seed: 1,
        };
        assert!(cfg.validate().is_ok());
        cfg.speech.pause_frames = 0;
        assert!(cfg.validate().is_err());
    }
}
