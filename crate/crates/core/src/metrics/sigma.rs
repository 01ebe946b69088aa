//! Sigma: break-inclusive BLEU relative to the best achievable segmentation
//! of the hypothesis text.
//!
//! The upper bound is the BLEU of an oracle hypothesis that keeps the
//! hypothesis words and carries over every reference break through a
//! minimum-edit alignment of the break-free token sequences.

use serde::{Deserialize, Serialize};

use super::bleu::{bleu_tokens, check_lengths, Smoothing};
use super::tokenize::tokenize_13a;
use super::MetricsError;
use crate::corpus::{BreakToken, SegmentedSentence, EOB, EOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaScore {
    pub sigma: f64,
    /// Break-inclusive BLEU of the hypotheses.
    pub bleu_br: f64,
    /// Break-inclusive BLEU of the oracle projection.
    pub bleu_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Match,
    Sub,
    Del,
    Ins,
}

/// Minimum-edit alignment. Returns, for every reference position, the
/// hypothesis position it is matched or substituted with.
///
/// Backtrace ties prefer match, then substitution, deletion, insertion.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> Vec<Option<usize>> {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut out = vec![None; n];
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let cur = d[i * w + j];
        let step = if i > 0 && j > 0 && reference[i - 1] == hyp[j - 1] && cur == d[(i - 1) * w + j - 1] {
            Step::Match
        } else if i > 0 && j > 0 && cur == d[(i - 1) * w + j - 1] + 1 {
            Step::Sub
        } else if i > 0 && cur == d[(i - 1) * w + j] + 1 {
            Step::Del
        } else {
            Step::Ins
        };
        match step {
            Step::Match | Step::Sub => {
                out[i - 1] = Some(j - 1);
                i -= 1;
                j -= 1;
            }
            Step::Del => i -= 1,
            Step::Ins => j -= 1,
        }
    }
    out
}

/// Splits a token list into words and `(words_before, break)` pairs.
fn split_breaks(tokens: &[String]) -> (Vec<String>, Vec<(usize, String)>) {
    let mut words = Vec::new();
    let mut breaks = Vec::new();
    for t in tokens {
        if t == EOL || t == EOB {
            breaks.push((words.len(), t.clone()));
        } else {
            words.push(t.clone());
        }
    }
    (words, breaks)
}

/// Projects reference breaks onto the hypothesis words.
pub fn oracle_projection(hyp_tokens: &[String], ref_tokens: &[String]) -> Vec<String> {
    let (hyp_words, _) = split_breaks(hyp_tokens);
    let (ref_words, ref_breaks) = split_breaks(ref_tokens);
    let alignment = align(&ref_words, &hyp_words);

    // slots[k]: breaks placed after the first k hypothesis words.
    let mut slots: Vec<Vec<String>> = vec![Vec::new(); hyp_words.len() + 1];
    for (before, brk) in ref_breaks {
        let slot = (0..before)
            .rev()
            .find_map(|i| alignment[i])
            .map_or(0, |j| j + 1);
        slots[slot].push(brk);
    }
    let mut out = Vec::with_capacity(hyp_words.len() + ref_tokens.len());
    out.append(&mut slots[0]);
    for (k, w) in hyp_words.into_iter().enumerate() {
        out.push(w);
        out.append(&mut slots[k + 1]);
    }
    out
}

pub fn sigma(
    hyps: &[SegmentedSentence],
    refs: &[SegmentedSentence],
) -> Result<SigmaScore, MetricsError> {
    check_lengths(hyps.len(), refs.len())?;
    let h: Vec<Vec<String>> = hyps.iter().map(|s| tokenize_13a(&s.to_string())).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|s| tokenize_13a(&s.to_string())).collect();
    sigma_tokens(&h, &r)
}

/// Sigma over already tokenized, break-inclusive segments.
pub fn sigma_tokens(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<SigmaScore, MetricsError> {
    check_lengths(hyps.len(), refs.len())?;
    let oracle: Vec<Vec<String>> = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| oracle_projection(h, r))
        .collect();
    let bleu_br = bleu_tokens(hyps, refs, Smoothing::Exp)?.score;
    let bleu_upper = bleu_tokens(&oracle, refs, Smoothing::Exp)?.score;
    if bleu_upper == 0.0 {
        return Err(MetricsError::ZeroUpperBound);
    }
    Ok(SigmaScore {
        sigma: (100.0 * bleu_br / bleu_upper).max(0.0),
        bleu_br,
        bleu_upper,
    })
}

/// Precision, recall and F1 (percent) of break placement for one break kind.
///
/// Hypothesis breaks are mapped onto reference word positions through the
/// word alignment, so the texts need not be identical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub reference: usize,
    pub matched: usize,
}

pub fn break_placement(
    hyps: &[SegmentedSentence],
    refs: &[SegmentedSentence],
    kind: BreakToken,
) -> Result<PlacementScore, MetricsError> {
    check_lengths(hyps.len(), refs.len())?;
    let (mut predicted, mut reference, mut matched) = (0usize, 0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let hw: Vec<&str> = h.words().collect();
        let rw: Vec<&str> = r.words().collect();
        // Map hypothesis word positions to reference positions.
        let to_ref = align(&hw, &rw);
        let ref_set: std::collections::HashSet<usize> = r
            .break_positions()
            .into_iter()
            .filter(|(_, b)| *b == kind)
            .map(|(p, _)| p)
            .collect();
        reference += ref_set.len();
        let mut seen = std::collections::HashSet::new();
        for (pos, b) in h.break_positions() {
            if b != kind {
                continue;
            }
            predicted += 1;
            if let Some(rp) = (0..=pos).rev().find_map(|i| to_ref[i]) {
                if ref_set.contains(&rp) && seen.insert(rp) {
                    matched += 1;
                }
            }
        }
    }
    let precision = if predicted == 0 { 0.0 } else { 100.0 * matched as f64 / predicted as f64 };
    let recall = if reference == 0 { 0.0 } else { 100.0 * matched as f64 / reference as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PlacementScore {
        precision,
        recall,
        f1,
        predicted,
        reference,
        matched,
    })
}
