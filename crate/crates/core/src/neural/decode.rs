//! Greedy and beam-search decoding.

use std::cmp::Ordering;

use super::autograd::{log_softmax_rows, Parameters, Tape};
use super::model::{Encoded, Model, ModelInput};
use super::tensor::Mat;
use super::vocab::{BLANK, BOS, EOS, PAD};
use super::NeuralError;
use crate::corpus::{FeatureMatrix, SegmentedSentence};

/// Next-token log-probabilities given a decoder prefix.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens after the start prefix, without the final eos.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// `log_prob` divided by the number of generated tokens (eos included).
    pub score: f64,
    pub finished: bool,
}

fn masked(mut lp: Vec<f64>, banned: &[u32]) -> Vec<f64> {
    for &b in banned {
        if let Some(x) = lp.get_mut(b as usize) {
            *x = f64::NEG_INFINITY;
        }
    }
    lp
}

/// Token ids sorted by descending log-probability, ties by id.
fn ranked(lp: &[f64], k: usize) -> Vec<(u32, f64)> {
    let mut idx: Vec<(u32, f64)> = lp
        .iter()
        .enumerate()
        .filter(|(_, x)| x.is_finite())
        .map(|(i, &x)| (i as u32, x))
        .collect();
    idx.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    idx.truncate(k);
    idx
}

fn finish(tokens: Vec<u32>, log_prob: f64, with_eos: bool) -> Hypothesis {
    let len = tokens.len() + usize::from(with_eos);
    Hypothesis {
        score: log_prob / len.max(1) as f64,
        tokens,
        log_prob,
        finished: with_eos,
    }
}

/// Picks the most probable allowed token at every step.
pub fn greedy_search<S: StepScorer + ?Sized>(scorer: &S, start: &[u32], max_len: usize, banned: &[u32]) -> Hypothesis {
    let mut prefix = start.to_vec();
    let mut tokens = Vec::new();
    let mut lp_sum = 0.0;
    for _ in 0..max_len {
        let lp = masked(scorer.next_log_probs(&prefix), banned);
        let Some(&(tok, lp)) = ranked(&lp, 1).first() else { break };
        lp_sum += lp;
        if tok == EOS {
            return finish(tokens, lp_sum, true);
        }
        tokens.push(tok);
        prefix.push(tok);
    }
    finish(tokens, lp_sum, false)
}

/// Beam search with length-normalized final scores.
///
/// Each step extends every live hypothesis with its `2 * beam` best tokens
/// and ranks the candidates by cumulative log-probability. An eos candidate
/// ranked within the first `beam` ends a hypothesis; the best non-eos
/// candidates stay alive. Search stops once `beam` hypotheses have ended or
/// `max_len` tokens (eos included) have been generated; the result is the
/// ended hypothesis with the best per-token score. With `beam == 1` this is
/// exactly [`greedy_search`].
pub fn beam_search<S: StepScorer + ?Sized>(
    scorer: &S,
    start: &[u32],
    beam: usize,
    max_len: usize,
    banned: &[u32],
) -> Hypothesis {
    let beam = beam.max(1);
    let mut alive: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut done: Vec<Hypothesis> = Vec::new();
    for step in 0..max_len {
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (hi, (toks, lp)) in alive.iter().enumerate() {
            let mut prefix = start.to_vec();
            prefix.extend_from_slice(toks);
            let next = masked(scorer.next_log_probs(&prefix), banned);
            for (tok, l) in ranked(&next, 2 * beam) {
                cands.push((lp + l, hi, tok));
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next_alive = Vec::with_capacity(beam);
        for (rank, &(lp, hi, tok)) in cands.iter().enumerate() {
            if tok == EOS {
                if rank < beam {
                    done.push(finish(alive[hi].0.clone(), lp, true));
                }
            } else if next_alive.len() < beam {
                let mut t = alive[hi].0.clone();
                t.push(tok);
                next_alive.push((t, lp));
            }
            if rank + 1 >= beam && next_alive.len() >= beam {
                break;
            }
        }
        if done.len() >= beam || next_alive.is_empty() {
            alive.clear();
            break;
        }
        alive = next_alive;
        if step + 1 == max_len {
            break;
        }
    }
    done.extend(alive.into_iter().map(|(t, lp)| finish(t, lp, false)));
    done.into_iter()
        .reduce(|best, h| if h.score > best.score { h } else { best })
        .unwrap_or_else(|| finish(Vec::new(), 0.0, false))
}

/// Scores decoder prefixes against encoder outputs computed once.
pub struct ModelScorer<'a> {
    model: &'a Model,
    params: &'a Parameters<f32>,
    text: Option<Mat<f32>>,
    speech: Option<Mat<f32>>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, params: &'a Parameters<f32>, input: &ModelInput) -> Result<Self, NeuralError> {
        let mut t = Tape::new(params);
        let enc = model.encode(&mut t, input, None)?;
        Ok(ModelScorer {
            model,
            params,
            text: enc.text.map(|v| t.value(v).clone()),
            speech: enc.speech.map(|v| t.value(v).clone()),
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.vocab().len()
    }

    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        let mut t = Tape::new(self.params);
        let enc = Encoded {
            text: self.text.clone().map(|m| t.input(m)),
            speech: self.speech.clone().map(|m| t.input(m)),
            ctc_logits: None,
        };
        let logits = self.model.decode(&mut t, &enc, prefix, None).expect("non-empty prefix");
        let v = t.value(logits);
        let last = Mat::from_vec(1, v.cols, v.row(v.rows - 1).to_vec()).cast::<f64>();
        log_softmax_rows(&last).data
    }
}

/// Tokens never produced by the decoder.
pub fn banned_tokens(model: &Model) -> Vec<u32> {
    let v = model.vocab();
    let mut out = vec![PAD, BOS, BLANK];
    out.extend((0..v.len() as u32).filter(|&i| v.is_lang(i)));
    out
}

/// Segments one sentence with a trained model.
///
/// `words` feeds the text encoder and `speech` the speech encoder, as the
/// mode requires; `language` selects the target prefix token of
/// speech-conditioned models. The raw output is repaired into a
/// well-formed sentence; `None` means nothing usable was generated.
pub fn segment_words<S: AsRef<str>>(
    model: &Model,
    params: &Parameters<f32>,
    words: &[S],
    speech: Option<&FeatureMatrix>,
    language: Option<&str>,
    beam: usize,
) -> Result<Option<SegmentedSentence>, NeuralError> {
    let mode = model.mode();
    let src = mode.uses_text().then(|| model.vocab().encode_words(words));
    let input = ModelInput {
        src: src.as_deref(),
        speech: if mode.uses_speech() { speech } else { None },
    };
    let mut start = vec![BOS];
    if mode.uses_language_token() {
        let lang = language.ok_or_else(|| NeuralError::UnknownLanguageToken(String::new()))?;
        start.push(model.vocab().lang_id(lang)?);
    }
    let expected = match (&src, speech) {
        (Some(s), _) => s.len(),
        (None, Some(f)) => model.speech_steps(f.frames()) * 2,
        (None, None) => 0,
    };
    let max_len = expected + expected / 4 + 8;
    let scorer = ModelScorer::new(model, params, &input)?;
    let hyp = beam_search(&scorer, &start, beam, max_len, &banned_tokens(model));
    Ok(model.vocab().decode_segmented(&hyp.tokens))
}
