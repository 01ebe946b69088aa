//! Length conformity and break coverage.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::{line_length, BreakToken, SegmentedSentence};

/// Percentage of lines no longer than `limit` characters.
pub fn cpl_conformity(sents: &[SegmentedSentence], limit: usize) -> Result<f64, MetricsError> {
    let (mut ok, mut total) = (0usize, 0usize);
    for s in sents {
        for line in s.lines() {
            total += 1;
            if line_length(&line) <= limit {
                ok += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(100.0 * ok as f64 / total as f64)
}

/// Corpus-wide break counts of a prediction/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BreakCounts {
    pub eol_pred: usize,
    pub eol_ref: usize,
    pub eob_pred: usize,
    pub eob_ref: usize,
}

impl BreakCounts {
    pub fn count(hyps: &[SegmentedSentence], refs: &[SegmentedSentence]) -> Self {
        let sum = |ss: &[SegmentedSentence], k| ss.iter().map(|s| s.count_breaks(k)).sum();
        BreakCounts {
            eol_pred: sum(hyps, BreakToken::Eol),
            eol_ref: sum(refs, BreakToken::Eol),
            eob_pred: sum(hyps, BreakToken::Eob),
            eob_ref: sum(refs, BreakToken::Eob),
        }
    }

    pub fn get(&self, kind: BreakToken) -> (usize, usize) {
        match kind {
            BreakToken::Eol => (self.eol_pred, self.eol_ref),
            BreakToken::Eob => (self.eob_pred, self.eob_ref),
        }
    }
}

/// `pred / ref * 100 - 100`: negative when breaks are under-generated.
pub fn break_coverage(counts: &BreakCounts, kind: BreakToken) -> Result<f64, MetricsError> {
    let (pred, reference) = counts.get(kind);
    if reference == 0 {
        return Err(MetricsError::ZeroReferenceBreaks(kind));
    }
    Ok(pred as f64 / reference as f64 * 100.0 - 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ParseMode;

    fn s(x: &str) -> SegmentedSentence {
        SegmentedSentence::parse(x, ParseMode::Lenient).unwrap()
    }

    #[test]
    fn cpl_cases() {
        assert_eq!(cpl_conformity(&[s("a b <eol> c <eob>")], 42).unwrap(), 100.0);
        let long = "x".repeat(43);
        let sent = s(&format!("short <eol> {long} <eob>"));
        assert_eq!(cpl_conformity(&[sent], 42).unwrap(), 50.0);
        assert_eq!(cpl_conformity(&[], 42), Err(MetricsError::EmptyCorpus));
    }

    fn counts(eob_pred: usize, eob_ref: usize) -> BreakCounts {
        BreakCounts {
            eob_pred,
            eob_ref,
            ..Default::default()
        }
    }

    #[test]
    fn coverage_formula() {
        assert_eq!(break_coverage(&counts(100, 100), BreakToken::Eob).unwrap(), 0.0);
        assert_eq!(break_coverage(&counts(90, 100), BreakToken::Eob).unwrap(), -10.0);
        let c = break_coverage(&counts(1004, 1000), BreakToken::Eob).unwrap();
        assert!((c - 0.4).abs() < 1e-12);
        assert_eq!(
            break_coverage(&counts(1, 0), BreakToken::Eob),
            Err(MetricsError::ZeroReferenceBreaks(BreakToken::Eob))
        );
    }

    #[test]
    fn coverage_linear_in_prediction() {
        let base = break_coverage(&counts(0, 37), BreakToken::Eob).unwrap();
        let step = break_coverage(&counts(1, 37), BreakToken::Eob).unwrap() - base;
        for p in 0..200 {
            let c = break_coverage(&counts(p, 37), BreakToken::Eob).unwrap();
            assert!((c - (base + step * p as f64)).abs() < 1e-9);
        }
    }
}
