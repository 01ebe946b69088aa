//! Break-annotated sentences in the line-based corpus format.
//!
//! One sentence per line, tokens separated by whitespace, with `<eol>` and
//! `<eob>` appearing inline as standalone tokens.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const EOL: &str = "<eol>";
pub const EOB: &str = "<eob>";

/// A subtitle break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BreakToken {
    /// Line break inside a block.
    Eol,
    /// End of the current block (subtitle).
    Eob,
}

impl BreakToken {
    pub fn as_str(self) -> &'static str {
        match self {
            BreakToken::Eol => EOL,
            BreakToken::Eob => EOB,
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        match tok {
            EOL => Some(BreakToken::Eol),
            EOB => Some(BreakToken::Eob),
            _ => None,
        }
    }
}

impl fmt::Display for BreakToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Word(String),
    Break(BreakToken),
}

impl Token {
    pub fn as_str(&self) -> &str {
        match self {
            Token::Word(w) => w,
            Token::Break(b) => b.as_str(),
        }
    }

    pub fn as_break(&self) -> Option<BreakToken> {
        match self {
            Token::Break(b) => Some(*b),
            Token::Word(_) => None,
        }
    }

    pub fn is_break(&self) -> bool {
        matches!(self, Token::Break(_))
    }
}

/// How strictly [`SegmentedSentence::parse`] validates its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Accepts a missing final `<eob>` and empty lines (raw subtitle dumps).
    #[default]
    Lenient,
    /// Requires a final `<eob>` and at most two lines per block.
    Strict,
}

/// A token sequence with inline subtitle breaks.
///
/// Construction through [`SegmentedSentence::parse`] or
/// [`SegmentedSentence::from_tokens`] guarantees that the first token is a
/// word and that no two breaks are adjacent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SegmentedSentence {
    tokens: Vec<Token>,
}

impl SegmentedSentence {
    pub fn parse(line: &str, mode: ParseMode) -> Result<Self, CorpusError> {
        let tokens = line
            .split_whitespace()
            .map(|t| match BreakToken::from_token(t) {
                Some(b) => Token::Break(b),
                None => Token::Word(t.to_string()),
            })
            .collect();
        Self::from_tokens(tokens, mode)
    }

    pub fn from_tokens(tokens: Vec<Token>, mode: ParseMode) -> Result<Self, CorpusError> {
        validate(&tokens, mode)?;
        Ok(SegmentedSentence { tokens })
    }

    /// Builds an unsegmented sentence from plain words.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        SegmentedSentence {
            tokens: words
                .iter()
                .map(|w| Token::Word(w.as_ref().to_string()))
                .collect(),
        }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Word tokens with every break removed.
    pub fn words(&self) -> impl Iterator<Item = &str> + '_ {
        self.tokens.iter().filter_map(|t| match t {
            Token::Word(w) => Some(w.as_str()),
            Token::Break(_) => None,
        })
    }

    pub fn breaks(&self) -> impl Iterator<Item = BreakToken> + '_ {
        self.tokens.iter().filter_map(Token::as_break)
    }

    pub fn count_breaks(&self, kind: BreakToken) -> usize {
        self.breaks().filter(|b| *b == kind).count()
    }

    /// The same sentence with all breaks removed.
    pub fn strip_breaks(&self) -> SegmentedSentence {
        SegmentedSentence {
            tokens: self.tokens.iter().filter(|t| !t.is_break()).cloned().collect(),
        }
    }

    /// Lines of text: maximal word spans between breaks, joined by single
    /// spaces. A trailing span without a closing break is also a line.
    pub fn lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        let mut current: Vec<&str> = Vec::new();
        for tok in &self.tokens {
            match tok {
                Token::Word(w) => current.push(w),
                Token::Break(_) => {
                    lines.push(current.join(" "));
                    current.clear();
                }
            }
        }
        if !current.is_empty() {
            lines.push(current.join(" "));
        }
        lines
    }

    /// Number of blocks, counted as `<eob>` tokens.
    pub fn block_count(&self) -> usize {
        self.count_breaks(BreakToken::Eob)
    }

    /// Whether the sentence satisfies strict-mode validation.
    pub fn is_well_formed(&self) -> bool {
        validate(&self.tokens, ParseMode::Strict).is_ok()
    }

    /// Word index after which each break occurs, in order.
    pub fn break_positions(&self) -> Vec<(usize, BreakToken)> {
        let mut out = Vec::new();
        let mut words = 0usize;
        for tok in &self.tokens {
            match tok {
                Token::Word(_) => words += 1,
                Token::Break(b) => out.push((words - 1, *b)),
            }
        }
        out
    }
}

impl fmt::Display for SegmentedSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, tok) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(tok.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for SegmentedSentence {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, ParseMode::Lenient)
    }
}

fn validate(tokens: &[Token], mode: ParseMode) -> Result<(), CorpusError> {
    if let Some(Token::Break(_)) = tokens.first() {
        return Err(CorpusError::LeadingBreak { index: 0 });
    }
    for (i, pair) in tokens.windows(2).enumerate() {
        if pair[0].is_break() && pair[1].is_break() {
            return Err(CorpusError::AdjacentBreaks { index: i + 1 });
        }
    }
    if mode == ParseMode::Strict {
        match tokens.last() {
            None => return Err(CorpusError::EmptySentence),
            Some(Token::Break(BreakToken::Eob)) => {}
            Some(_) => return Err(CorpusError::MissingFinalEob),
        }
        let mut prev_break = None;
        for (i, tok) in tokens.iter().enumerate() {
            if let Token::Break(b) = tok {
                if prev_break == Some(BreakToken::Eol) && *b == BreakToken::Eol {
                    return Err(CorpusError::BlockTooTall { index: i });
                }
                prev_break = Some(*b);
            }
        }
    }
    Ok(())
}

/// Parses one corpus line.
pub fn parse_segmented(line: &str, mode: ParseMode) -> Result<SegmentedSentence, CorpusError> {
    SegmentedSentence::parse(line, mode)
}

pub fn serialize_segmented(s: &SegmentedSentence) -> String {
    s.to_string()
}

pub fn strip_breaks(s: &SegmentedSentence) -> Vec<String> {
    s.words().map(str::to_string).collect()
}

pub fn split_lines(s: &SegmentedSentence) -> Vec<String> {
    s.lines()
}

/// Character count used for CPL: Unicode scalar values, internal spaces
/// included, surrounding whitespace excluded.
pub fn line_length(line: &str) -> usize {
    line.trim().chars().count()
}
