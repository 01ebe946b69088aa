//! Desk-scale segmentation experiments on the toy languages.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::language::{synthetic_corpus, CorpusSpec, LanguageSpec};
use super::profile::trigram_profile;
use super::{segment_corpus, NeuralSegmenter, Segmenter, SynthError};
use crate::corpus::{BreakToken, Corpus, FeatureMatrix, SegmentedSentence, Utterance};
use crate::metrics::break_placement;
use crate::neural::{
    train, CheckpointMeta, Example, Mode, Model, ModelShape, Parameters, StepRecord, TrainOptions, TrainState, Vocab,
};
use crate::par::Execution;

/// Vocabulary with one token per language of `utts` and every character
/// of their targets and transcripts.
pub fn vocab_for(utts: &[Utterance]) -> Vocab {
    let mut langs: Vec<&str> = utts.iter().map(|u| u.target_language.as_str()).collect();
    langs.sort_unstable();
    langs.dedup();
    let texts: Vec<String> = utts
        .iter()
        .flat_map(|u| [u.target.words().collect::<String>(), u.source_text.words().collect::<String>()])
        .collect();
    Vocab::build(&langs, texts.iter().map(String::as_str))
}

/// Trains a model of `shape` on `utts` with the vocabulary of
/// [`vocab_for`] and returns it with the step log.
pub fn train_segmenter(
    shape: ModelShape,
    utts: &[Utterance],
    opts: &TrainOptions,
    seed: u64,
    exec: Execution,
) -> Result<(Model, Parameters<f32>, Vec<StepRecord>), SynthError> {
    let model = Model::new(shape.with_vocab(&vocab_for(utts)))?;
    let examples = utts
        .iter()
        .map(|u| Example::from_utterance(u, &model))
        .collect::<Result<Vec<_>, _>>()?;
    let mut params = model.init_params::<f32>(seed);
    let mut state = TrainState::new(&params, opts, seed);
    let log = train(&model, &mut params, &mut state, &examples, opts, exec, |_, _| Ok(()))?;
    Ok((model, params, log))
}

/// Character 3-gram profiles of the training targets, per language.
pub fn language_profiles(utts: &[Utterance]) -> CheckpointMeta {
    let mut by_lang: BTreeMap<&str, Vec<&SegmentedSentence>> = BTreeMap::new();
    for u in utts {
        by_lang.entry(&u.target_language).or_default().push(&u.target);
    }
    CheckpointMeta {
        language_profiles: by_lang
            .into_iter()
            .map(|(l, s)| (l.to_string(), trigram_profile(s)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    /// F1 of breaks at the reference position with the reference kind,
    /// both kinds pooled.
    pub exact_break_f1: f64,
    pub eob_f1: f64,
    pub eol_f1: f64,
    /// Percentage of outputs whose words equal the input words. Fallback
    /// outputs of failed sentences do not count.
    pub text_preserved: f64,
    /// Percentage of outputs identical to the reference.
    pub sentence_exact: f64,
    pub failures: usize,
}

/// Scores predictions against references of the same length.
pub fn score_segmentation(hyps: &[SegmentedSentence], refs: &[SegmentedSentence]) -> Result<SegmentationScores, SynthError> {
    let eob = break_placement(hyps, refs, BreakToken::Eob).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let eol = break_placement(hyps, refs, BreakToken::Eol).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let (matched, pred, reference) = (
        eob.matched + eol.matched,
        eob.predicted + eol.predicted,
        eob.reference + eol.reference,
    );
    let exact_break_f1 = if pred + reference == 0 {
        100.0
    } else {
        200.0 * matched as f64 / (pred + reference) as f64
    };
    let n = refs.len().max(1) as f64;
    let text = hyps.iter().zip(refs).filter(|(h, r)| h.words().eq(r.words())).count();
    let exact = hyps.iter().zip(refs).filter(|(h, r)| h == r).count();
    Ok(SegmentationScores {
        exact_break_f1,
        eob_f1: eob.f1,
        eol_f1: eol.f1,
        text_preserved: 100.0 * text as f64 / n,
        sentence_exact: 100.0 * exact as f64 / n,
        failures: 0,
    })
}

/// Segments the transcripts of `utts` with a trained model, decoding with
/// `language` as prefix token, and scores the output against the targets.
pub fn evaluate_segmenter(
    model: &Model,
    params: &Parameters<f32>,
    utts: &[Utterance],
    language: Option<&str>,
    beam: usize,
    exec: Execution,
) -> Result<(Vec<SegmentedSentence>, SegmentationScores), SynthError> {
    let lang = utts.first().map(|u| u.target_language.clone()).unwrap_or_default();
    let unseg = Corpus::new("eval", lang, utts.iter().map(|u| u.source_text.clone()).collect());
    let features: Vec<Arc<FeatureMatrix>> = utts.iter().map(|u| u.features.clone()).collect();
    let seg = NeuralSegmenter::new(model.clone(), params.clone(), language.map(str::to_string), beam)?;
    let out = segment_corpus(&unseg, Some(&features), &Segmenter::Neural(Box::new(seg)), exec)?;
    let refs: Vec<SegmentedSentence> = utts.iter().map(|u| u.target.clone()).collect();
    let mut scores = score_segmentation(&out.corpus.sentences, &refs)?;
    // A fallback output keeps the words but was not produced by the model.
    let failed: Vec<usize> = out.failures.iter().map(|f| f.index).collect();
    let kept = (0..refs.len())
        .filter(|i| !failed.contains(i) && out.corpus.sentences[*i].words().eq(refs[*i].words()))
        .count();
    scores.text_preserved = 100.0 * kept as f64 / refs.len().max(1) as f64;
    scores.failures = failed.len();
    Ok((out.corpus.sentences, scores))
}

/// Settings shared by both experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub train: TrainOptions,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub text_enc_layers: usize,
    pub speech_enc_layers: usize,
    pub dec_layers: usize,
    pub beam: usize,
    /// Held-out sentences per evaluation language.
    pub test_sentences: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let toy = ModelShape::toy(Mode::Multimodal, 1);
        ExperimentConfig {
            corpus: CorpusSpec::default(),
            train: TrainOptions {
                steps: 2000,
                batch_size: 8,
                base_lr: 2e-3,
                warmup_steps: 200,
                ..TrainOptions::default()
            },
            d_model: toy.d_model,
            n_heads: toy.n_heads,
            ffn_dim: toy.ffn_dim,
            text_enc_layers: toy.text_enc_layers,
            speech_enc_layers: toy.speech_enc_layers,
            dec_layers: toy.dec_layers,
            beam: 1,
            test_sentences: 50,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for [`zero_shot_experiment`]: 200 sentences per training
    /// language. With fewer, both models memorise whole words and copy
    /// the held-out text poorly.
    pub fn zero_shot() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.corpus.sentences = 200;
        cfg
    }

    pub fn shape(&self, mode: Mode) -> ModelShape {
        let mut s = ModelShape::toy(mode, self.corpus.speech.feature_dims);
        s.d_model = self.d_model;
        s.n_heads = self.n_heads;
        s.ffn_dim = self.ffn_dim;
        if mode.uses_text() {
            s.text_enc_layers = self.text_enc_layers;
        }
        if mode.uses_speech() {
            s.speech_enc_layers = self.speech_enc_layers;
        }
        s.dec_layers = self.dec_layers;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyReport {
    pub steps: usize,
    pub final_loss: f64,
    pub scores: SegmentationScores,
}

/// Trains a multimodal segmenter on `cfg.corpus.sentences` utterances of
/// the first toy language and segments the same utterances again.
pub fn copy_experiment(cfg: &ExperimentConfig, seed: u64, exec: Execution) -> Result<CopyReport, SynthError> {
    let [lang, ..] = LanguageSpec::presets();
    let utts = synthetic_corpus(&lang, &cfg.corpus, seed, seed);
    let (model, params, log) = train_segmenter(cfg.shape(Mode::Multimodal), &utts, &cfg.train, seed, exec)?;
    let (_, scores) = evaluate_segmenter(&model, &params, &utts, Some(&lang.name), cfg.beam, exec)?;
    Ok(CopyReport {
        steps: log.len(),
        final_loss: log.last().map_or(f64::NAN, |r| r.loss),
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub seed: u64,
    pub held_out: String,
    /// Prefix token chosen for the held-out language.
    pub language_token: String,
    pub textual: SegmentationScores,
    pub multimodal: SegmentationScores,
}

/// Trains a textual and a multimodal segmenter with the same budget on the
/// first two toy languages and segments the third one zero-shot.
pub fn zero_shot_experiment(cfg: &ExperimentConfig, seed: u64, exec: Execution) -> Result<ZeroShotReport, SynthError> {
    let [a, b, c] = LanguageSpec::presets();
    let mut train_utts = synthetic_corpus(&a, &cfg.corpus, 1, seed);
    train_utts.extend(synthetic_corpus(&b, &cfg.corpus, 2, seed));
    let test_spec = CorpusSpec {
        sentences: cfg.test_sentences,
        ..cfg.corpus.clone()
    };
    let test = synthetic_corpus(&c, &test_spec, 3, seed ^ 0x7e57);

    let (tm, tp, _) = train_segmenter(cfg.shape(Mode::Textual), &train_utts, &cfg.train, seed, exec)?;
    let (_, textual) = evaluate_segmenter(&tm, &tp, &test, None, cfg.beam, exec)?;

    let (mm, mp, _) = train_segmenter(cfg.shape(Mode::Multimodal), &train_utts, &cfg.train, seed, exec)?;
    let meta = language_profiles(&train_utts);
    let unseg = Corpus::new("held-out", c.name.clone(), test.iter().map(|u| u.source_text.clone()).collect());
    let known: BTreeMap<String, _> = meta.language_profiles;
    let token = super::profile::closest_language(&known, &trigram_profile(&unseg.sentences)).unwrap_or_default();
    let (_, multimodal) = evaluate_segmenter(&mm, &mp, &test, Some(&token), cfg.beam, exec)?;
    Ok(ZeroShotReport {
        seed,
        held_out: c.name,
        language_token: token,
        textual,
        multimodal,
    })
}
