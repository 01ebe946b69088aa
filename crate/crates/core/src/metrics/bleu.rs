//! Corpus-level BLEU-4 with a single reference.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize_13a;
use super::MetricsError;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Smoothing {
    /// Each order with zero matches gets `1 / (2^k * total)`, `k` counting
    /// the zero-match orders seen so far.
    #[default]
    Exp,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Sufficient statistics of one or more segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts<'a>(toks: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut counts = HashMap::new();
    if toks.len() >= n {
        for g in toks.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    /// Clipped n-gram statistics of one tokenized segment pair.
    pub fn from_tokens(hyp: &[String], reference: &[String]) -> Self {
        let mut st = BleuStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            st.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            st.matches[n - 1] = h
                .iter()
                .map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0)))
                .sum();
        }
        st
    }

    pub fn score(&self, smoothing: Smoothing) -> BleuScore {
        let mut precisions = [0.0; MAX_ORDER];
        let mut smooth = 1.0f64;
        let mut log_sum = 0.0;
        let mut orders = 0usize;
        let mut zero = false;
        for n in 0..MAX_ORDER {
            if self.totals[n] == 0 {
                break;
            }
            orders += 1;
            let p = if self.matches[n] == 0 {
                match smoothing {
                    Smoothing::Exp => {
                        smooth *= 2.0;
                        1.0 / (smooth * self.totals[n] as f64)
                    }
                    Smoothing::None => 0.0,
                }
            } else {
                self.matches[n] as f64 / self.totals[n] as f64
            };
            precisions[n] = p;
            if p == 0.0 {
                zero = true;
            } else {
                log_sum += p.ln();
            }
        }
        let bp = if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        let score = if orders == 0 || zero || bp == 0.0 {
            0.0
        } else {
            100.0 * bp * (log_sum / orders as f64).exp()
        };
        BleuScore {
            score: score.clamp(0.0, 100.0),
            precisions,
            brevity_penalty: bp,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

/// Corpus BLEU over pre-tokenized segments.
pub fn bleu_tokens(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    smoothing: Smoothing,
) -> Result<BleuScore, MetricsError> {
    check_lengths(hyps.len(), refs.len())?;
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += BleuStats::from_tokens(h, r);
    }
    Ok(total.score(smoothing))
}

/// Corpus BLEU over raw strings, tokenized with [`tokenize_13a`].
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(
    hyps: &[S],
    refs: &[T],
    smoothing: Smoothing,
) -> Result<BleuScore, MetricsError> {
    check_lengths(hyps.len(), refs.len())?;
    let h: Vec<Vec<String>> = hyps.iter().map(|s| tokenize_13a(s.as_ref())).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|s| tokenize_13a(s.as_ref())).collect();
    bleu_tokens(&h, &r, smoothing)
}

pub(crate) fn check_lengths(h: usize, r: usize) -> Result<(), MetricsError> {
    if h == 0 || r == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    if h != r {
        return Err(MetricsError::LengthMismatch { hyps: h, refs: r });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_is_100() {
        let c = ["the cat sat on the mat .", "a b", "x"];
        let s = bleu(&c, &c, Smoothing::Exp).unwrap();
        assert_abs_diff_eq!(s.score, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        let s = bleu(&[""], &["a"], Smoothing::Exp).unwrap();
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn hand_case() {
        let s = bleu(&["a b c d"], &["a b c e"], Smoothing::Exp).unwrap();
        assert_abs_diff_eq!(s.precisions[0], 0.75);
        assert_abs_diff_eq!(s.precisions[1], 2.0 / 3.0);
        assert_abs_diff_eq!(s.precisions[2], 0.5);
        assert_abs_diff_eq!(s.precisions[3], 0.5);
        // (0.75 * 2/3 * 0.5 * 0.5) ^ (1/4) = 0.125 ^ 0.25
        assert_abs_diff_eq!(s.score, 100.0 * 0.125f64.powf(0.25), epsilon = 1e-9);
        let none = bleu(&["a b c d"], &["a b c e"], Smoothing::None).unwrap();
        assert_eq!(none.score, 0.0);
    }

    #[test]
    fn brevity_penalty_applies() {
        let s = bleu(&["a b c d"], &["a b c d e f g h"], Smoothing::Exp).unwrap();
        assert_abs_diff_eq!(s.brevity_penalty, (1.0f64 - 2.0).exp(), epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        let empty: [&str; 0] = [];
        assert_eq!(bleu(&empty, &empty, Smoothing::Exp), Err(MetricsError::EmptyCorpus));
        assert_eq!(
            bleu(&["a"], &["a", "b"], Smoothing::Exp),
            Err(MetricsError::LengthMismatch { hyps: 1, refs: 2 })
        );
    }

    proptest! {
        #[test]
        fn self_bleu_is_100(c in prop::collection::vec("[a-d]{1,3}( [a-d]{1,3}){0,8}", 1..6)) {
            let s = bleu(&c, &c, Smoothing::Exp).unwrap();
            prop_assert!((s.score - 100.0).abs() < 1e-9);
        }

        #[test]
        fn order_invariant(pairs in prop::collection::vec(("[a-c]( [a-c]){0,6}", "[a-c]( [a-c]){0,6}"), 2..6)) {
            let (h, r): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
            let a = bleu(&h, &r, Smoothing::Exp).unwrap().score;
            let hr: Vec<String> = h.iter().rev().cloned().collect();
            let rr: Vec<String> = r.iter().rev().cloned().collect();
            let b = bleu(&hr, &rr, Smoothing::Exp).unwrap().score;
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&a));
        }
    }
}
