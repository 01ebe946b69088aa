//! Data model and I/O for break-annotated text, SRT files and speech features.

mod features;
mod sentence;
mod srt;

use std::sync::Arc;

use thiserror::Error;

pub use features::{read_features, write_features, FeatureMatrix};
pub use sentence::{
    line_length, parse_segmented, serialize_segmented, split_lines, strip_breaks, BreakToken,
    ParseMode, SegmentedSentence, Token, EOB, EOL,
};
pub use srt::{emit_srt, parse_srt, srt_to_sentence, SrtCue};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("adjacent break tokens at token {index}")]
    AdjacentBreaks { index: usize },
    #[error("sentence starts with a break token (token {index})")]
    LeadingBreak { index: usize },
    #[error("sentence does not end with <eob>")]
    MissingFinalEob,
    #[error("more than two lines in one block (token {index})")]
    BlockTooTall { index: usize },
    #[error("empty sentence")]
    EmptySentence,
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("line {line}: malformed cue index")]
    MalformedIndex { line: usize },
    #[error("line {line}: malformed timestamp or interval")]
    MalformedTimestamp { line: usize },
    #[error("line {line}: cue index not increasing")]
    NonMonotonicIndex { line: usize },
    #[error("line {line}: cue has no text")]
    EmptyCue { line: usize },
    #[error("line {line}: cue has more than two text lines")]
    TooManyLines { line: usize },
    #[error("feature file does not start with SPFT")]
    BadMagic,
    #[error("feature size mismatch: expected {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("non-finite feature value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("duplicate utterance id {0}")]
    DuplicateId(String),
    #[error("utterance {0} has an empty target")]
    EmptyTarget(String),
}

/// A list of sentences in one language.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub name: String,
    pub language: String,
    pub sentences: Vec<SegmentedSentence>,
}

impl Corpus {
    pub fn new(
        name: impl Into<String>,
        language: impl Into<String>,
        sentences: Vec<SegmentedSentence>,
    ) -> Self {
        Corpus {
            name: name.into(),
            language: language.into(),
            sentences,
        }
    }

    /// Parses one sentence per line. Errors carry the 1-based line number.
    pub fn parse(
        name: impl Into<String>,
        language: impl Into<String>,
        text: &str,
        mode: ParseMode,
    ) -> Result<Self, CorpusError> {
        let sentences = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                SegmentedSentence::parse(l, mode).map_err(|e| CorpusError::AtLine {
                    line: i + 1,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Corpus::new(name, language, sentences))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&s.to_string());
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn with_sentences(&self, sentences: Vec<SegmentedSentence>) -> Corpus {
        Corpus::new(self.name.clone(), self.language.clone(), sentences)
    }
}

/// One training example for a speech-conditioned model.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Arc<FeatureMatrix>,
    /// Unsegmented source transcript.
    pub source_text: SegmentedSentence,
    pub target: SegmentedSentence,
    pub target_language: String,
}

impl Utterance {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.target.is_empty() {
            return Err(CorpusError::EmptyTarget(self.id.clone()));
        }
        Ok(())
    }
}

/// Checks id uniqueness and per-utterance invariants.
pub fn validate_utterances(utts: &[Utterance]) -> Result<(), CorpusError> {
    let mut seen = std::collections::HashSet::new();
    for u in utts {
        u.validate()?;
        if !seen.insert(u.id.as_str()) {
            return Err(CorpusError::DuplicateId(u.id.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_text_roundtrip() {
        let text = "a <eol> b <eob>\nc d <eob>\n";
        let c = Corpus::parse("t", "es", text, ParseMode::Strict).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.to_text(), text);
    }

    #[test]
    fn corpus_errors_carry_line() {
        let err = Corpus::parse("t", "es", "a <eob>\n<eob> b\n", ParseMode::Lenient).unwrap_err();
        assert!(matches!(err, CorpusError::AtLine { line: 2, .. }));
    }

    #[test]
    fn utterance_ids_unique() {
        let f = Arc::new(FeatureMatrix::new(1, 1, vec![0.0], 10).unwrap());
        let s = SegmentedSentence::parse("a <eob>", ParseMode::Strict).unwrap();
        let u = Utterance {
            id: "x".into(),
            features: f,
            source_text: s.strip_breaks(),
            target: s,
            target_language: "es".into(),
        };
        assert!(validate_utterances(&[u.clone()]).is_ok());
        assert_eq!(
            validate_utterances(&[u.clone(), u]),
            Err(CorpusError::DuplicateId("x".into()))
        );
    }
}
