use std::collections::HashSet;

use serde::ser::{Serialize, SerializeMap, Serializer};

use super::bleu::{bleu, BleuScore, Smoothing};
use super::patterns::{break_pattern_stats, PatternStats};
use super::segmentation::{break_coverage, cpl_conformity, BreakCounts};
use super::sigma::sigma;
use super::MetricsError;
use crate::corpus::{BreakToken, SegmentedSentence};

/// All segmentation metrics for one hypothesis/reference corpus pair.
///
/// Serializes to a flat JSON object: `bleu`, `sigma`, `cpl`,
/// `eol_coverage`, `eob_coverage` (numbers, `null` when undefined),
/// `pattern_stats` and `counts`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// BLEU on text with breaks removed.
    pub bleu: BleuScore,
    pub sigma: Option<f64>,
    pub cpl_conformity: f64,
    pub eol_coverage: Option<f64>,
    pub eob_coverage: Option<f64>,
    pub pattern_stats: Option<PatternStats>,
    pub counts: BreakCounts,
}

pub fn evaluate(
    hyps: &[SegmentedSentence],
    refs: &[SegmentedSentence],
    limit: usize,
    function_words: Option<&HashSet<String>>,
) -> Result<EvaluationReport, MetricsError> {
    super::bleu::check_lengths(hyps.len(), refs.len())?;
    let plain = |ss: &[SegmentedSentence]| -> Vec<String> {
        ss.iter().map(|s| s.strip_breaks().to_string()).collect()
    };
    let bleu = bleu(&plain(hyps), &plain(refs), Smoothing::Exp)?;
    let sigma = match sigma(hyps, refs) {
        Ok(s) => Some(s.sigma),
        Err(MetricsError::ZeroUpperBound) => None,
        Err(e) => return Err(e),
    };
    let counts = BreakCounts::count(hyps, refs);
    let pattern_stats = function_words
        .map(|fw| break_pattern_stats(hyps, fw))
        .transpose()?;
    Ok(EvaluationReport {
        bleu,
        sigma,
        cpl_conformity: cpl_conformity(hyps, limit)?,
        eol_coverage: break_coverage(&counts, BreakToken::Eol).ok(),
        eob_coverage: break_coverage(&counts, BreakToken::Eob).ok(),
        pattern_stats,
        counts,
    })
}

impl Serialize for EvaluationReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut m = serializer.serialize_map(Some(7))?;
        m.serialize_entry("bleu", &self.bleu.score)?;
        m.serialize_entry("sigma", &self.sigma)?;
        m.serialize_entry("cpl", &self.cpl_conformity)?;
        m.serialize_entry("eol_coverage", &self.eol_coverage)?;
        m.serialize_entry("eob_coverage", &self.eob_coverage)?;
        m.serialize_entry("pattern_stats", &self.pattern_stats)?;
        m.serialize_entry("counts", &self.counts)?;
        m.end()
    }
}

impl EvaluationReport {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:+.1}%"));
        format!(
            "BLEU {:.2}\nSigma {}\nCPL {:.1}%\nEOL {}\nEOB {}\n",
            self.bleu.score,
            self.sigma.map_or("n/a".to_string(), |s| format!("{s:.2}")),
            self.cpl_conformity,
            opt(self.eol_coverage),
            opt(self.eob_coverage),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ParseMode;

    #[test]
    fn identity_report() {
        let refs: Vec<SegmentedSentence> = ["a b <eol> c <eob> d <eob>", "e , f <eob>"]
            .iter()
            .map(|s| SegmentedSentence::parse(s, ParseMode::Strict).unwrap())
            .collect();
        let r = evaluate(&refs, &refs, 42, None).unwrap();
        assert!((r.bleu.score - 100.0).abs() < 1e-9);
        assert!((r.sigma.unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(r.eol_coverage, Some(0.0));
        assert_eq!(r.eob_coverage, Some(0.0));
        let v = serde_json::to_value(&r).unwrap();
        for key in ["bleu", "sigma", "cpl", "eol_coverage", "eob_coverage"] {
            assert!(v[key].is_number(), "{key}");
        }
        assert_eq!(v["counts"]["eob_ref"], 3);
    }
}
