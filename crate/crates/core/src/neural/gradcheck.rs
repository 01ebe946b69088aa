//! Finite-difference verification of the analytic gradients.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Mode, ModelShape};
use super::model::Model;
use super::train::{batch_loss, Example, LossOptions};
use super::vocab::Vocab;
use super::NeuralError;
use crate::corpus::{FeatureMatrix, ParseMode, SegmentedSentence, Utterance};
use crate::par::Execution;
use crate::rng;

pub const FD_STEP: f64 = 1e-5;
pub const MIN_CHECKED: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub mode: Mode,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and element index of the worst entry.
    pub worst: (String, usize),
}

/// Relative error with both magnitudes below `floor` counting as agreement.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn tiny_batch(mode: Mode, seed: u64) -> (Model, Vec<Example>) {
    let texts = ["ab <eob> ca b <eob>", "bc <eol> a <eob>"];
    let vocab = Vocab::build(&["xx", "yy"], ["abc"]);
    let dims = 3;
    let model = Model::new(ModelShape::tiny(mode, dims).with_vocab(&vocab)).expect("tiny config is valid");
    let mut r = rng::derived(seed, 1);
    let examples = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let target = SegmentedSentence::parse(t, ParseMode::Strict).unwrap();
            let frames = 30 + 4 * i;
            let data = (0..frames * dims).map(|_| r.random_range(-1.0f32..1.0)).collect();
            let u = Utterance {
                id: format!("g{i}"),
                features: Arc::new(FeatureMatrix::new(frames, dims, data, 10).unwrap()),
                source_text: target.strip_breaks(),
                target,
                target_language: if i == 0 { "xx".into() } else { "yy".into() },
            };
            Example::from_utterance(&u, &model).unwrap()
        })
        .collect();
    (model, examples)
}

/// Compares analytic gradients of the full training loss (label-smoothed
/// cross-entropy plus CTC where speech is present) with central
/// differences of step `1e-5`, in `f64`, on a randomly initialized tiny
/// model. At least 200 randomly chosen parameter entries are checked.
pub fn gradient_check(mode: Mode, seed: u64) -> Result<GradCheckReport, NeuralError> {
    let (model, examples) = tiny_batch(mode, seed);
    let mut params = model.init_params::<f64>(seed);
    // Non-trivial norm parameters so their gradients are exercised.
    let mut r = rng::derived(seed, 2);
    for i in 0..params.len() {
        if params.name(i).ends_with(".gain") || params.name(i).ends_with("norm.bias") {
            for v in &mut params.get_mut(i).data {
                *v += r.random_range(-0.3..0.3);
            }
        }
    }
    let batch: Vec<&Example> = examples.iter().collect();
    let opts = LossOptions {
        label_smoothing: 0.1,
        ctc_weight: 0.5,
    };
    let (_, grads) = batch_loss(&model, &params, &batch, &opts, Execution::Sequential, true, None)?;
    let grads = grads.expect("gradients requested");

    let total = params.num_elements();
    let k = MIN_CHECKED.max(total / 20).min(total);
    let mut picks: Vec<usize> = sample(&mut r, total, k).into_vec();
    picks.sort_unstable();
    let mut offsets = Vec::with_capacity(params.len());
    let mut acc = 0;
    for t in params.tensors() {
        offsets.push(acc);
        acc += t.len();
    }

    let mut max_rel = 0.0;
    let mut worst = (String::new(), 0);
    for flat in picks {
        let ti = offsets.partition_point(|&o| o <= flat) - 1;
        let e = flat - offsets[ti];
        let orig = params.get(ti).data[e];
        let mut loss_at = |v: f64| -> Result<f64, NeuralError> {
            params.get_mut(ti).data[e] = v;
            let (p, _) = batch_loss(&model, &params, &batch, &opts, Execution::Sequential, false, None)?;
            Ok(p.total)
        };
        let up = loss_at(orig + FD_STEP)?;
        let down = loss_at(orig - FD_STEP)?;
        params.get_mut(ti).data[e] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = relative_error(grads.0[ti].data[e], numeric);
        if rel > max_rel {
            max_rel = rel;
            worst = (params.name(ti).to_string(), e);
        }
    }
    Ok(GradCheckReport {
        mode,
        checked: k,
        max_rel_error: max_rel,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_textual_gradients() {
        let r = gradient_check(Mode::Textual, 11).unwrap();
        assert!(r.checked >= MIN_CHECKED);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
