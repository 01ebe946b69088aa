//! Paired bootstrap resampling over corpus BLEU.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bleu::{check_lengths, BleuStats, Smoothing};
use super::tokenize::tokenize_13a;
use super::MetricsError;
use crate::par::Execution;
use crate::rng;

pub const DEFAULT_SAMPLES: usize = 1000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub bleu_a: f64,
    pub bleu_b: f64,
    /// Fraction of resamples where A scores strictly higher than B.
    pub win_rate_a: f64,
    /// Fraction of resamples where B scores strictly higher than A.
    pub win_rate_b: f64,
    /// Two-sided p-value; ties count against both systems.
    pub p_value: f64,
    pub samples: usize,
}

impl BootstrapResult {
    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE_LEVEL
    }
}

/// Resamples sentence indices with replacement `samples` times and compares
/// corpus BLEU of both systems on each resample.
///
/// Resample `k` draws from a generator derived from `(seed, k)`, so the
/// result is identical for any [`Execution`].
pub fn paired_bootstrap<S: AsRef<str> + Sync>(
    hyp_a: &[S],
    hyp_b: &[S],
    refs: &[S],
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<BootstrapResult, MetricsError> {
    check_lengths(hyp_a.len(), refs.len())?;
    check_lengths(hyp_b.len(), refs.len())?;
    if samples < 100 {
        return Err(MetricsError::TooFewSamples(samples));
    }
    let tok = |xs: &[S]| -> Vec<Vec<String>> {
        exec.map(xs, |s| tokenize_13a(s.as_ref()))
    };
    let (ta, tb, tr) = (tok(hyp_a), tok(hyp_b), tok(refs));
    let stats_a: Vec<BleuStats> = (0..refs.len()).map(|i| BleuStats::from_tokens(&ta[i], &tr[i])).collect();
    let stats_b: Vec<BleuStats> = (0..refs.len()).map(|i| BleuStats::from_tokens(&tb[i], &tr[i])).collect();

    let corpus = |stats: &[BleuStats]| {
        let mut t = BleuStats::default();
        for s in stats {
            t += *s;
        }
        t.score(Smoothing::Exp).score
    };
    let n = refs.len();
    let outcomes: Vec<std::cmp::Ordering> = exec.map_range(samples, |k| {
        let mut r = rng::derived(seed, k as u64);
        let (mut a, mut b) = (BleuStats::default(), BleuStats::default());
        for _ in 0..n {
            let i = r.random_range(0..n);
            a += stats_a[i];
            b += stats_b[i];
        }
        let (sa, sb) = (a.score(Smoothing::Exp).score, b.score(Smoothing::Exp).score);
        sa.partial_cmp(&sb).unwrap_or(std::cmp::Ordering::Equal)
    });
    let wins_a = outcomes.iter().filter(|o| o.is_gt()).count();
    let wins_b = outcomes.iter().filter(|o| o.is_lt()).count();
    let s = samples as f64;
    // P(A <= B) and P(B <= A) over resamples.
    let a_not_better = (samples - wins_a) as f64 / s;
    let b_not_better = (samples - wins_b) as f64 / s;
    let p_value = (2.0 * a_not_better.min(b_not_better)).min(1.0);
    Ok(BootstrapResult {
        bleu_a: corpus(&stats_a),
        bleu_b: corpus(&stats_b),
        win_rate_a: wins_a as f64 / s,
        win_rate_b: wins_b as f64 / s,
        p_value,
        samples,
    })
}
