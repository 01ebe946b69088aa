//! Where breaks fall: after punctuation, before function words.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::{BreakToken, SegmentedSentence, Token};

pub const PUNCTUATION: &[char] = &[
    '.', ',', '!', '?', ':', ';', '…', '"', '\'', ')', ']', '}', '»', '—',
];

const ES_WORDS: &str = include_str!("../../data/function_words/es.txt");
const NL_WORDS: &str = include_str!("../../data/function_words/nl.txt");

/// Parses a function-word list: one word per line, `#` starts a comment.
pub fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.to_lowercase())
        .collect()
}

/// Bundled prepositions and conjunctions for a language, if shipped.
pub fn function_words(language: &str) -> Option<HashSet<String>> {
    match language {
        "es" => Some(parse_word_list(ES_WORDS)),
        "nl" => Some(parse_word_list(NL_WORDS)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub breaks: usize,
    /// Percent of breaks whose preceding word ends in punctuation.
    pub after_punctuation: f64,
    /// Breaks followed by another word (sentence-final breaks are not).
    pub followed: usize,
    /// Percent of followed breaks whose next word is a function word.
    pub before_function_word: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    /// `None` for a kind that never occurs in the corpus.
    pub eol: Option<KindStats>,
    pub eob: Option<KindStats>,
}

impl PatternStats {
    pub fn get(&self, kind: BreakToken) -> Result<&KindStats, MetricsError> {
        match kind {
            BreakToken::Eol => self.eol.as_ref(),
            BreakToken::Eob => self.eob.as_ref(),
        }
        .ok_or(MetricsError::NoBreaksOfKind(kind))
    }

    pub fn to_map(&self) -> BTreeMap<String, Option<KindStats>> {
        BTreeMap::from([("eol".into(), self.eol), ("eob".into(), self.eob)])
    }
}

pub fn break_pattern_stats(
    sents: &[SegmentedSentence],
    function_words: &HashSet<String>,
) -> Result<PatternStats, MetricsError> {
    if sents.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    // [breaks, after_punct, followed, before_fw] per kind
    let mut acc = [[0usize; 4]; 2];
    for s in sents {
        let toks = s.tokens();
        for (i, t) in toks.iter().enumerate() {
            let Token::Break(kind) = t else { continue };
            let a = &mut acc[*kind as usize];
            a[0] += 1;
            if let Some(Token::Word(prev)) = i.checked_sub(1).map(|j| &toks[j]) {
                if prev.ends_with(PUNCTUATION) {
                    a[1] += 1;
                }
            }
            if let Some(Token::Word(next)) = toks.get(i + 1) {
                a[2] += 1;
                if function_words.contains(&next.to_lowercase()) {
                    a[3] += 1;
                }
            }
        }
    }
    let finish = |a: [usize; 4]| {
        (a[0] > 0).then(|| KindStats {
            breaks: a[0],
            after_punctuation: 100.0 * a[1] as f64 / a[0] as f64,
            followed: a[2],
            before_function_word: (a[2] > 0).then(|| 100.0 * a[3] as f64 / a[2] as f64),
        })
    };
    Ok(PatternStats {
        eol: finish(acc[BreakToken::Eol as usize]),
        eob: finish(acc[BreakToken::Eob as usize]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ParseMode;

    fn s(x: &str) -> SegmentedSentence {
        SegmentedSentence::parse(x, ParseMode::Lenient).unwrap()
    }

    #[test]
    fn punctuation_before_eob() {
        let st = break_pattern_stats(&[s("hola , <eob> mundo .")], &HashSet::new()).unwrap();
        assert_eq!(st.eob.unwrap().after_punctuation, 100.0);
        assert!(st.eol.is_none());
        assert_eq!(st.get(BreakToken::Eol), Err(MetricsError::NoBreaksOfKind(BreakToken::Eol)));
    }

    #[test]
    fn hand_counted_corpus() {
        let fw = function_words("es").unwrap();
        let corpus = [
            s("hola , <eob> y luego <eob>"),
            s("vamos <eob> con ella . <eob>"),
            s("nada <eol> más"),
        ];
        let st = break_pattern_stats(&corpus, &fw).unwrap();
        let eob = st.eob.unwrap();
        assert_eq!(eob.breaks, 4);
        assert_eq!(eob.after_punctuation, 50.0);
        assert_eq!(eob.followed, 2);
        assert_eq!(eob.before_function_word, Some(100.0));
        let eol = st.eol.unwrap();
        assert_eq!((eol.breaks, eol.after_punctuation), (1, 0.0));
        assert_eq!(eol.before_function_word, Some(0.0));
    }

    #[test]
    fn bundled_lists() {
        assert!(function_words("es").unwrap().contains("para"));
        assert!(function_words("nl").unwrap().contains("omdat"));
        assert!(function_words("xx").is_none());
        assert_eq!(break_pattern_stats(&[], &HashSet::new()), Err(MetricsError::EmptyCorpus));
    }
}
