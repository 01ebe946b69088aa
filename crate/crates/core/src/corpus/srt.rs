//! Minimal SRT reader/writer.

use std::fmt::Write as _;

use super::sentence::{BreakToken, ParseMode, SegmentedSentence, Token};
use super::CorpusError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrtCue {
    pub index: u32,
    pub start_ms: u64,
    pub end_ms: u64,
    pub lines: Vec<String>,
}

impl SrtCue {
    pub fn new(index: u32, start_ms: u64, end_ms: u64, lines: Vec<String>) -> Self {
        SrtCue {
            index,
            start_ms,
            end_ms,
            lines,
        }
    }
}

pub fn parse_srt(bytes: &[u8]) -> Result<Vec<SrtCue>, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|_| CorpusError::InvalidUtf8)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    let mut cues: Vec<SrtCue> = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
    loop {
        // Skip blank separators.
        let (index_line, index_text) = match lines.by_ref().find(|(_, l)| !l.is_empty()) {
            Some(x) => x,
            None => break,
        };
        let index: u32 = index_text
            .trim()
            .parse()
            .ok()
            .filter(|i| *i > 0)
            .ok_or(CorpusError::MalformedIndex { line: index_line })?;
        if let Some(prev) = cues.last() {
            if index <= prev.index {
                return Err(CorpusError::NonMonotonicIndex { line: index_line });
            }
        }
        let (time_line, time_text) = lines
            .next()
            .ok_or(CorpusError::MalformedTimestamp { line: index_line + 1 })?;
        let (start_ms, end_ms) = parse_timing(time_text)
            .ok_or(CorpusError::MalformedTimestamp { line: time_line })?;

        let mut text_lines = Vec::new();
        for (_, l) in lines.by_ref() {
            if l.is_empty() {
                break;
            }
            text_lines.push(l.trim().to_string());
        }
        if text_lines.is_empty() {
            return Err(CorpusError::EmptyCue { line: time_line });
        }
        if text_lines.len() > 2 {
            return Err(CorpusError::TooManyLines { line: time_line + 3 });
        }
        cues.push(SrtCue::new(index, start_ms, end_ms, text_lines));
    }
    Ok(cues)
}

fn parse_timing(line: &str) -> Option<(u64, u64)> {
    let (a, b) = line.split_once("-->")?;
    let start = parse_timestamp(a.trim())?;
    let end = parse_timestamp(b.trim())?;
    (start < end).then_some((start, end))
}

/// `HH:MM:SS,mmm`
fn parse_timestamp(s: &str) -> Option<u64> {
    let (hms, ms) = s.split_once(',')?;
    let mut parts = hms.split(':');
    let h: u64 = parse_digits(parts.next()?, 2, usize::MAX)?;
    let m: u64 = parse_digits(parts.next()?, 2, 2)?;
    let sec: u64 = parse_digits(parts.next()?, 2, 2)?;
    if parts.next().is_some() || m >= 60 || sec >= 60 {
        return None;
    }
    let ms: u64 = parse_digits(ms, 3, 3)?;
    Some(((h * 60 + m) * 60 + sec) * 1000 + ms)
}

fn parse_digits(s: &str, min: usize, max: usize) -> Option<u64> {
    if s.len() < min || s.len() > max || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn format_timestamp(ms: u64) -> String {
    let (h, rem) = (ms / 3_600_000, ms % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    let (s, ms) = (rem / 1000, rem % 1000);
    format!("{h:02}:{m:02}:{s:02},{ms:03}")
}

/// Emits cues with CRLF line endings.
pub fn emit_srt(cues: &[SrtCue]) -> Vec<u8> {
    let mut out = String::new();
    for cue in cues {
        let _ = write!(
            out,
            "{}\r\n{} --> {}\r\n",
            cue.index,
            format_timestamp(cue.start_ms),
            format_timestamp(cue.end_ms)
        );
        for line in &cue.lines {
            out.push_str(line);
            out.push_str("\r\n");
        }
        out.push_str("\r\n");
    }
    out.into_bytes()
}

/// Joins cue lines with `<eol>` and closes every cue with `<eob>`.
pub fn srt_to_sentence(cues: &[SrtCue]) -> Result<SegmentedSentence, CorpusError> {
    if cues.is_empty() {
        return Err(CorpusError::EmptyCue { line: 0 });
    }
    let mut tokens = Vec::new();
    for cue in cues {
        let mut any = false;
        for (i, line) in cue.lines.iter().enumerate() {
            let words: Vec<&str> = line.split_whitespace().collect();
            if words.is_empty() {
                continue;
            }
            if i > 0 && any {
                tokens.push(Token::Break(BreakToken::Eol));
            }
            tokens.extend(words.into_iter().map(|w| Token::Word(w.to_string())));
            any = true;
        }
        if !any {
            return Err(CorpusError::EmptyCue { line: 0 });
        }
        tokens.push(Token::Break(BreakToken::Eob));
    }
    SegmentedSentence::from_tokens(tokens, ParseMode::Strict)
}
