//! Losses, the Adam update with an inverse square-root schedule, and the
//! training loop.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::autograd::{Gradients, Parameters, Tape};
use super::config::{Mode, TrainOptions};
use super::ctc::min_frames;
use super::model::{Model, ModelInput};
use super::tensor::{Mat, Scalar};
use super::vocab::{BLANK, BOS, EOS, PAD};
use super::NeuralError;
use crate::corpus::{FeatureMatrix, Utterance};
use crate::par::Execution;
use crate::rng::{self, Prng};

/// An encoded training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub lang: String,
    pub src: Option<Vec<u32>>,
    pub speech: Option<Arc<FeatureMatrix>>,
    /// Transcript labels for the CTC head.
    pub ctc_target: Option<Vec<u32>>,
    /// `[bos, lang?, t_1 .. t_n]`.
    pub dec_in: Vec<u32>,
    /// `[ignored?, t_1 .. t_n, eos]`, with `PAD` marking rows left out of the loss.
    pub dec_out: Vec<u32>,
}

impl Example {
    /// Encodes an utterance for `model`'s mode. The text input is the
    /// target with its breaks removed; the CTC target is the transcript.
    pub fn from_utterance(u: &Utterance, model: &Model) -> Result<Example, NeuralError> {
        let vocab = model.vocab();
        let mode = model.mode();
        let target = vocab.encode_segmented(&u.target);
        if target.is_empty() {
            return Err(NeuralError::ShapeMismatch(format!("utterance {} has an empty target", u.id)));
        }
        let words: Vec<&str> = u.target.words().collect();
        let src = mode.uses_text().then(|| vocab.encode_words(&words));
        let (speech, ctc_target) = if mode.uses_speech() {
            let transcript: Vec<&str> = u.source_text.words().collect();
            (Some(u.features.clone()), Some(vocab.encode_words(&transcript)))
        } else {
            (None, None)
        };
        let mut dec_in = vec![BOS];
        let mut dec_out = Vec::with_capacity(target.len() + 2);
        if mode.uses_language_token() {
            dec_in.push(vocab.lang_id(&u.target_language)?);
            dec_out.push(PAD);
        }
        dec_in.extend_from_slice(&target);
        dec_out.extend_from_slice(&target);
        dec_out.push(EOS);
        Ok(Example {
            id: u.id.clone(),
            lang: u.target_language.clone(),
            src,
            speech,
            ctc_target,
            dec_in,
            dec_out,
        })
    }

    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            src: self.src.as_deref(),
            speech: self.speech.as_deref(),
        }
    }

    /// Rows that contribute to the cross-entropy.
    pub fn target_tokens(&self) -> usize {
        self.dec_out.iter().filter(|&&t| t != PAD).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub label_smoothing: f64,
    pub ctc_weight: f64,
}

impl From<&TrainOptions> for LossOptions {
    fn from(o: &TrainOptions) -> Self {
        LossOptions {
            label_smoothing: o.label_smoothing,
            ctc_weight: o.ctc_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    /// `nll + ctc_weight * ctc`.
    pub total: f64,
    /// Label-smoothed cross-entropy per target token.
    pub nll: f64,
    /// Mean over utterances of CTC loss per transcript label.
    pub ctc: f64,
    pub tokens: usize,
    /// Utterances whose CTC term was computed.
    pub ctc_items: usize,
}

/// Batch loss: summed label-smoothed cross-entropy divided by the number of
/// target tokens in the batch, plus `ctc_weight` times the mean over
/// utterances of `ctc_i / |transcript_i|`. Utterances whose transcript does
/// not fit the downsampled speech get no CTC term.
///
/// Per-example tapes run under `exec`; gradients are summed in batch order.
/// `dropout_seed` enables dropout.
pub fn batch_loss<T: Scalar>(
    model: &Model,
    params: &Parameters<T>,
    batch: &[&Example],
    opts: &LossOptions,
    exec: Execution,
    want_grads: bool,
    dropout_seed: Option<u64>,
) -> Result<(LossParts, Option<Gradients<T>>), NeuralError> {
    if batch.is_empty() {
        return Err(NeuralError::ShapeMismatch("empty batch".into()));
    }
    let tokens: usize = batch.iter().map(|e| e.target_tokens()).sum();
    let ctc_ok: Vec<bool> = batch
        .iter()
        .map(|e| match (&e.speech, &e.ctc_target) {
            (Some(f), Some(t)) if opts.ctc_weight > 0.0 && !t.is_empty() => {
                model.speech_steps(f.frames()) >= min_frames(t)
            }
            _ => false,
        })
        .collect();
    let ctc_items = ctc_ok.iter().filter(|&&b| b).count();
    let nll_w = T::from_f64_lossy(1.0 / tokens as f64);

    let per_example = exec.map_indexed(batch, |i, ex| -> Result<(f64, f64, Option<Gradients<T>>), NeuralError> {
        let mut t = Tape::new(params);
        let mut drng: Option<Prng> = dropout_seed.map(|s| rng::derived(s, i as u64));
        let enc = model.encode(&mut t, &ex.input(), drng.as_mut())?;
        let logits = model.decode(&mut t, &enc, &ex.dec_in, drng.as_mut())?;
        let nll = t.label_smoothed_nll(logits, &ex.dec_out, opts.label_smoothing, Some(PAD));
        let mut terms = vec![(nll, nll_w)];
        let mut ctc_norm = 0.0;
        if ctc_ok[i] {
            let target = ex.ctc_target.as_ref().unwrap();
            let c = t.ctc(enc.ctc_logits.unwrap(), target, BLANK)?;
            let w = opts.ctc_weight / (ctc_items as f64 * target.len() as f64);
            terms.push((c, T::from_f64_lossy(w)));
            ctc_norm = t.scalar(c).to_f64().unwrap() / target.len() as f64;
        }
        let total = t.combine(&terms);
        let grads = want_grads.then(|| {
            let mut g = params.zero_grads();
            t.backward(total, &mut g);
            g
        });
        Ok((t.scalar(nll).to_f64().unwrap(), ctc_norm, grads))
    });

    let mut parts = LossParts {
        tokens,
        ctc_items,
        ..Default::default()
    };
    let mut grads: Option<Gradients<T>> = None;
    let mut nll_sum = 0.0;
    let mut ctc_sum = 0.0;
    for r in per_example {
        let (nll, ctc, g) = r?;
        nll_sum += nll;
        ctc_sum += ctc;
        if let Some(g) = g {
            match &mut grads {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
    }
    parts.nll = nll_sum / tokens as f64;
    parts.ctc = if ctc_items > 0 { ctc_sum / ctc_items as f64 } else { 0.0 };
    parts.total = parts.nll + opts.ctc_weight * parts.ctc;
    Ok((parts, grads))
}

/// Optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub m: Vec<Mat<f32>>,
    pub v: Vec<Mat<f32>>,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(params: &Parameters<f32>, opts: &TrainOptions, seed: u64) -> TrainState {
        let zeros = || params.tensors().iter().map(|t| Mat::zeros(t.rows, t.cols)).collect();
        TrainState {
            step: 0,
            m: zeros(),
            v: zeros(),
            base_lr: opts.base_lr,
            warmup_steps: opts.warmup_steps as u64,
            seed,
        }
    }
}

/// Linear warmup to `base_lr`, then decay with the inverse square root of
/// the step.
pub fn lr_schedule(state: &TrainState) -> f64 {
    let step = state.step.max(1) as f64;
    let warmup = state.warmup_steps.max(1) as f64;
    if step <= warmup {
        state.base_lr * step / warmup
    } else {
        state.base_lr * (warmup / step).sqrt()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub nll: f64,
    pub ctc_loss: f64,
    pub tokens: usize,
    pub grad_norm: f64,
}

/// One Adam update on `batch`.
pub fn train_step(
    model: &Model,
    params: &mut Parameters<f32>,
    state: &mut TrainState,
    batch: &[&Example],
    opts: &TrainOptions,
    exec: Execution,
) -> Result<StepRecord, NeuralError> {
    let next = state.step + 1;
    let dropout_seed = (model.config().shape.dropout > 0.0).then(|| rng::derive_seed(state.seed, next));
    let (parts, grads) = batch_loss(model, params, batch, &opts.into(), exec, true, dropout_seed)?;
    let mut grads = grads.expect("gradients requested");
    let grad_norm = grads.norm();
    if !parts.total.is_finite() || !grad_norm.is_finite() {
        let ids: Vec<&str> = batch.iter().map(|e| e.id.as_str()).collect();
        return Err(NeuralError::NaNLoss {
            step: next,
            detail: format!(
                "nll={} ctc={} grad_norm={grad_norm} batch={ids:?}",
                parts.nll, parts.ctc
            ),
        });
    }
    if opts.clip_norm > 0.0 && grad_norm > opts.clip_norm {
        grads.scale((opts.clip_norm / grad_norm) as f32);
    }
    state.step = next;
    let lr = lr_schedule(state);
    let (b1, b2) = (opts.beta1, opts.beta2);
    let c1 = 1.0 - b1.powi(next as i32);
    let c2 = 1.0 - b2.powi(next as i32);
    let step_size = (lr / c1) as f32;
    let c2 = c2 as f32;
    let (b1, b2, eps) = (b1 as f32, b2 as f32, opts.adam_eps as f32);
    for (i, g) in grads.0.iter().enumerate() {
        let p = params.get_mut(i);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((pv, &gv), mv), vv) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            *pv -= step_size * *mv / ((*vv / c2).sqrt() + eps);
        }
    }
    Ok(StepRecord {
        step: next,
        lr,
        loss: parts.total,
        nll: parts.nll,
        ctc_loss: parts.ctc,
        tokens: parts.tokens,
        grad_norm,
    })
}

/// Deterministic mini-batch stream.
///
/// Textual models see one language per mini-batch, cycling through the
/// languages; speech-conditioned models mix languages in every batch.
/// Each group is reshuffled whenever it is exhausted.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    groups: Vec<Vec<usize>>,
    order: Vec<Vec<usize>>,
    cursor: Vec<usize>,
    next_group: usize,
    batch_size: usize,
    rng: Prng,
}

impl BatchSampler {
    pub fn new(examples: &[Example], mode: Mode, batch_size: usize, seed: u64) -> BatchSampler {
        let groups: Vec<Vec<usize>> = if mode == Mode::Textual {
            let mut by_lang: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, e) in examples.iter().enumerate() {
                by_lang.entry(e.lang.as_str()).or_default().push(i);
            }
            by_lang.into_values().collect()
        } else {
            vec![(0..examples.len()).collect()]
        };
        let n = groups.len();
        BatchSampler {
            order: groups.clone(),
            groups,
            cursor: vec![usize::MAX; n],
            next_group: 0,
            batch_size: batch_size.max(1),
            rng: rng::seeded(seed),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let g = self.next_group;
        self.next_group = (g + 1) % self.groups.len();
        let size = self.batch_size.min(self.groups[g].len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor[g] >= self.order[g].len() {
                self.order[g] = self.groups[g].clone();
                self.order[g].shuffle(&mut self.rng);
                self.cursor[g] = 0;
            }
            out.push(self.order[g][self.cursor[g]]);
            self.cursor[g] += 1;
        }
        out
    }
}

/// Runs `opts.steps` updates, calling `on_step` after each one.
pub fn train<F>(
    model: &Model,
    params: &mut Parameters<f32>,
    state: &mut TrainState,
    examples: &[Example],
    opts: &TrainOptions,
    exec: Execution,
    mut on_step: F,
) -> Result<Vec<StepRecord>, NeuralError>
where
    F: FnMut(&StepRecord, &Parameters<f32>) -> Result<(), NeuralError>,
{
    if examples.is_empty() {
        return Err(NeuralError::ShapeMismatch("no training examples".into()));
    }
    let mut sampler = BatchSampler::new(examples, model.mode(), opts.batch_size, rng::derive_seed(state.seed, u64::MAX));
    let mut log = Vec::with_capacity(opts.steps);
    for _ in 0..opts.steps {
        let idx = sampler.next_batch();
        let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
        let rec = train_step(model, params, state, &batch, opts, exec)?;
        on_step(&rec, params)?;
        log.push(rec);
    }
    Ok(log)
}
