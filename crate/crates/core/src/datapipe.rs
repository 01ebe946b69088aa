//! Corpus preparation: length filtering, `<eob>` to `<eol>` substitution,
//! single/multi-subtitle balancing and unsegmented source generation.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{line_length, BreakToken, Corpus, SegmentedSentence, Token};
use crate::par::Execution;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PipelineStats {
    pub input_sentences: usize,
    pub kept_sentences: usize,
    /// Breaks at risk of substitution (non-final `<eob>` not preceded by `<eol>`).
    pub eligible_breaks: usize,
    pub substituted_breaks: usize,
    pub multi_subtitle_sentences: usize,
    pub single_subtitle_sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("needed {needed} single-subtitle sentences, only {available} available (shortfall {shortfall})")]
    InsufficientSingles {
        needed: usize,
        available: usize,
        shortfall: usize,
        /// Output built from every available sentence.
        partial: Box<(Corpus, PipelineStats)>,
    },
}

/// Keeps the sentences whose lines all fit in `limit` characters.
pub fn filter_conformant(c: &Corpus, limit: usize) -> (Corpus, PipelineStats) {
    let kept: Vec<SegmentedSentence> = c
        .sentences
        .iter()
        .filter(|s| s.lines().iter().all(|l| line_length(l) <= limit))
        .cloned()
        .collect();
    let stats = PipelineStats {
        input_sentences: c.len(),
        kept_sentences: kept.len(),
        single_subtitle_sentences: kept.iter().filter(|s| !is_multi(s)).count(),
        multi_subtitle_sentences: kept.iter().filter(|s| is_multi(s)).count(),
        ..Default::default()
    };
    (c.with_sentences(kept), stats)
}

/// Replaces non-final `<eob>` tokens by `<eol>` with probability `p`.
///
/// Breaks are scanned left to right; a replacement is skipped when the
/// previous break is already `<eol>`, so blocks keep at most two lines. The
/// last break of a sentence is never touched. Sentence `i` uses a generator
/// derived from `(seed, i)`.
pub fn eob_to_eol_substitution(
    c: &Corpus,
    p: f64,
    seed: u64,
    exec: Execution,
) -> (Corpus, PipelineStats) {
    let results = exec.map_indexed(&c.sentences, |i, s| {
        substitute_sentence(s, p, &mut rng::derived(seed, i as u64))
    });
    let mut stats = PipelineStats {
        input_sentences: c.len(),
        kept_sentences: c.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(c.len());
    for (s, eligible, substituted) in results {
        stats.eligible_breaks += eligible;
        stats.substituted_breaks += substituted;
        out.push(s);
    }
    (c.with_sentences(out), stats)
}

fn substitute_sentence<R: Rng>(
    s: &SegmentedSentence,
    p: f64,
    rng: &mut R,
) -> (SegmentedSentence, usize, usize) {
    let last_break = s.tokens().iter().rposition(Token::is_break);
    let mut tokens = s.tokens().to_vec();
    let (mut eligible, mut substituted) = (0, 0);
    let mut prev = None;
    for (i, tok) in tokens.iter_mut().enumerate() {
        let Token::Break(kind) = tok else { continue };
        if *kind == BreakToken::Eob && Some(i) != last_break && prev != Some(BreakToken::Eol) {
            eligible += 1;
            if rng.random::<f64>() < p {
                *kind = BreakToken::Eol;
                substituted += 1;
            }
        }
        prev = Some(*kind);
    }
    let out = SegmentedSentence::from_tokens(tokens, crate::corpus::ParseMode::Lenient)
        .expect("substitution only changes break kinds");
    (out, eligible, substituted)
}

/// At least two subtitles or subtitle lines.
pub fn is_multi(s: &SegmentedSentence) -> bool {
    s.breaks().count() >= 2
}

/// Output size and shortfall of balancing `multi` multi-subtitle sentences
/// against `singles` available single-subtitle ones.
pub fn balance_counts(multi: usize, singles: usize) -> (usize, usize) {
    let take = multi.min(singles);
    (multi + take, multi - take)
}

/// All multi-subtitle sentences plus an equally sized uniform sample (without
/// replacement) of single-subtitle sentences, in original corpus order.
pub fn balance_single_multi(c: &Corpus, seed: u64) -> Result<(Corpus, PipelineStats), PipelineError> {
    let (multi, single): (Vec<usize>, Vec<usize>) =
        (0..c.len()).partition(|&i| is_multi(&c.sentences[i]));
    let (out_len, shortfall) = balance_counts(multi.len(), single.len());
    let take = out_len - multi.len();
    let mut r = rng::seeded(seed);
    let mut chosen: Vec<usize> = sample(&mut r, single.len(), take)
        .into_iter()
        .map(|k| single[k])
        .chain(multi.iter().copied())
        .collect();
    chosen.sort_unstable();
    let sentences: Vec<SegmentedSentence> = chosen.iter().map(|&i| c.sentences[i].clone()).collect();
    let stats = PipelineStats {
        input_sentences: c.len(),
        kept_sentences: sentences.len(),
        multi_subtitle_sentences: multi.len(),
        single_subtitle_sentences: single.len(),
        ..Default::default()
    };
    let out = (c.with_sentences(sentences), stats);
    if shortfall > 0 {
        return Err(PipelineError::InsufficientSingles {
            needed: multi.len(),
            available: single.len(),
            shortfall,
            partial: Box::new(out),
        });
    }
    Ok(out)
}

/// Removes every break, keeping sentence count and order.
pub fn make_unsegmented(c: &Corpus) -> Corpus {
    c.with_sentences(c.sentences.iter().map(SegmentedSentence::strip_breaks).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ParseMode;
    use proptest::prelude::*;

    fn corpus(lines: &[&str]) -> Corpus {
        Corpus::parse("t", "es", &lines.join("\n"), ParseMode::Lenient).unwrap()
    }

    #[test]
    fn filter_drops_long_lines() {
        let long = "x".repeat(50);
        let c = corpus(&[&format!("a <eob> {long} <eob>"), "b <eob>"]);
        let (out, st) = filter_conformant(&c, 42);
        assert_eq!(out.to_text(), "b <eob>\n");
        assert_eq!((st.input_sentences, st.kept_sentences), (2, 1));
        let ok = corpus(&["a <eol> b <eob>", "c <eob>"]);
        assert_eq!(filter_conformant(&ok, 42).0, ok);
    }

    #[test]
    fn filter_mixed_corpus() {
        let long = "y".repeat(43);
        let good = "short line <eob>".to_string();
        let bad = format!("{long} <eob>");
        let lines: Vec<String> = (0..10).map(|i| if i % 5 < 2 { good.clone() } else { bad.clone() }).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let (_, st) = filter_conformant(&corpus(&refs), 42);
        assert_eq!(st.kept_sentences, 4);
    }

    #[test]
    fn substitution_edge_cases() {
        let c = corpus(&["a b c <eob>"]);
        for seed in 0..20 {
            assert_eq!(eob_to_eol_substitution(&c, 1.0, seed, Execution::Sequential).0, c);
        }
        let c = corpus(&["a <eob> b <eob> c <eob>", "d <eob> e <eob>"]);
        assert_eq!(eob_to_eol_substitution(&c, 0.0, 4, Execution::Sequential).0, c);
        // p = 1: first eligible flips, the next is suppressed, the final stays.
        let (out, st) = eob_to_eol_substitution(&c, 1.0, 4, Execution::Sequential);
        assert_eq!(out.to_text(), "a <eol> b <eob> c <eob>\nd <eol> e <eob>\n");
        assert_eq!((st.eligible_breaks, st.substituted_breaks), (2, 2));
    }

    #[test]
    fn substitution_rate_within_binomial_band() {
        let c = Corpus::new("t", "es", vec![SegmentedSentence::parse("a <eob> b <eob>", ParseMode::Strict).unwrap(); 10_000]);
        let (_, st) = eob_to_eol_substitution(&c, 0.25, 2022, Execution::Parallel);
        assert_eq!(st.eligible_breaks, 10_000);
        let frac = st.substituted_breaks as f64 / st.eligible_breaks as f64;
        assert!((0.23..=0.27).contains(&frac), "{frac}");
    }

    #[test]
    fn balance_counts_large_corpora() {
        assert_eq!(balance_counts(2_956_207, 26_605_863), (5_912_414, 0));
        assert_eq!(balance_counts(683_382, 6_150_438), (1_366_764, 0));
        assert_eq!(balance_counts(3, 1), (4, 2));
    }

    #[test]
    fn balance_materialized() {
        let c = corpus(&["a <eob> b <eob>", "c <eob>", "d <eol> e <eob>", "f <eob>", "g <eob>", "h <eob> i <eob>", "j <eob>"]);
        let (out, st) = balance_single_multi(&c, 5).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(st.multi_subtitle_sentences, 3);
        assert_eq!(out.sentences.iter().filter(|s| is_multi(s)).count(), 3);

        let c = corpus(&["a <eob> b <eob>", "c <eob> d <eob>", "e <eol> f <eob>", "g <eob>"]);
        match balance_single_multi(&c, 1) {
            Err(PipelineError::InsufficientSingles { shortfall, partial, .. }) => {
                assert_eq!(shortfall, 2);
                assert_eq!(partial.0.len(), 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unsegment() {
        let c = corpus(&["a <eol> b <eob>", "c d"]);
        let u = make_unsegmented(&c);
        assert_eq!(u.to_text(), "a b\nc d\n");
        assert_eq!(make_unsegmented(&u), u);
    }

    fn random_corpus() -> impl Strategy<Value = Corpus> {
        prop::collection::vec(prop::collection::vec(("[a-z]{1,15}", 0u8..4), 1..12), 1..30).prop_map(|sents| {
            let sentences = sents
                .into_iter()
                .map(|items| {
                    let n = items.len();
                    let mut toks = Vec::new();
                    for (i, (w, b)) in items.into_iter().enumerate() {
                        toks.push(Token::Word(w));
                        if i + 1 == n || b == 0 {
                            toks.push(Token::Break(BreakToken::Eob));
                        }
                    }
                    SegmentedSentence::from_tokens(toks, ParseMode::Strict).unwrap()
                })
                .collect();
            Corpus::new("p", "xx", sentences)
        })
    }

    proptest! {
        #[test]
        fn filter_idempotent(c in random_corpus(), limit in 5usize..30) {
            let (once, _) = filter_conformant(&c, limit);
            let (twice, _) = filter_conformant(&once, limit);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn substitution_invariants(c in random_corpus(), seed in any::<u64>(), p in 0.0f64..=1.0) {
            let (out, _) = eob_to_eol_substitution(&c, p, seed, Execution::Sequential);
            for (a, b) in c.sentences.iter().zip(&out.sentences) {
                prop_assert_eq!(a.strip_breaks(), b.strip_breaks());
                prop_assert_eq!(a.breaks().count(), b.breaks().count());
                prop_assert!(b.is_well_formed());
            }
        }

        #[test]
        fn balance_keeps_every_multi(c in random_corpus(), seed in any::<u64>()) {
            let (out, _) = match balance_single_multi(&c, seed) {
                Ok(x) => x,
                Err(PipelineError::InsufficientSingles { partial, .. }) => *partial,
            };
            let multi_in: Vec<_> = c.sentences.iter().filter(|s| is_multi(s)).collect();
            let multi_out: Vec<_> = out.sentences.iter().filter(|s| is_multi(s)).collect();
            prop_assert_eq!(multi_in, multi_out);
        }
    }
}
