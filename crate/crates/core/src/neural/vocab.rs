//! Character-level vocabulary with reserved control, break and language tokens.

use std::collections::{BTreeSet, HashMap};

use crate::corpus::{BreakToken, ParseMode, SegmentedSentence, Token, EOB, EOL};

use super::NeuralError;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const BLANK: u32 = 3;
pub const UNK: u32 = 4;
/// Word separator inside encoded text.
pub const SEP: u32 = 5;
pub const EOL_ID: u32 = 6;
pub const EOB_ID: u32 = 7;

pub const RESERVED: [&str; 8] = ["<pad>", "<s>", "</s>", "<blank>", "<unk>", "\u{2581}", EOL, EOB];

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

pub fn lang_token(lang: &str) -> String {
    format!("<lang:{lang}>")
}

impl Vocab {
    /// Reserved tokens, one token per language, then every character seen in `texts`.
    pub fn build<'a>(languages: &[&str], texts: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let langs: BTreeSet<&str> = languages.iter().copied().collect();
        tokens.extend(langs.into_iter().map(lang_token));
        let chars: BTreeSet<char> = texts
            .into_iter()
            .flat_map(str::chars)
            .filter(|c| !c.is_whitespace())
            .collect();
        tokens.extend(chars.into_iter().map(String::from));
        Vocab::from_tokens(tokens).expect("built vocabulary is valid")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab, NeuralError> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(NeuralError::InvalidConfig(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(NeuralError::InvalidConfig(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn lang_id(&self, lang: &str) -> Result<u32, NeuralError> {
        self.id(&lang_token(lang))
            .ok_or_else(|| NeuralError::UnknownLanguageToken(lang.to_string()))
    }

    pub fn languages(&self) -> Vec<String> {
        self.tokens
            .iter()
            .filter_map(|t| t.strip_prefix("<lang:").and_then(|r| r.strip_suffix('>')))
            .map(str::to_string)
            .collect()
    }

    pub fn is_lang(&self, id: u32) -> bool {
        self.token(id).starts_with("<lang:")
    }

    fn char_id(&self, c: char) -> u32 {
        let mut buf = [0u8; 4];
        self.id(c.encode_utf8(&mut buf)).unwrap_or(UNK)
    }

    /// Characters of each word, with a separator between words.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                out.push(SEP);
            }
            out.extend(w.as_ref().chars().map(|c| self.char_id(c)));
        }
        out
    }

    /// Like [`Vocab::encode_words`], but a break token takes the place of the
    /// separator it follows. Leading breaks are dropped.
    pub fn encode_segmented(&self, s: &SegmentedSentence) -> Vec<u32> {
        let mut out = Vec::new();
        let mut pending: Option<u32> = None;
        let mut any_word = false;
        for tok in s.tokens() {
            match tok {
                Token::Word(w) => {
                    if any_word {
                        out.push(pending.take().unwrap_or(SEP));
                    }
                    pending = None;
                    any_word = true;
                    out.extend(w.chars().map(|c| self.char_id(c)));
                }
                Token::Break(b) if any_word => {
                    let id = break_id(*b);
                    // a later <eob> wins over an <eol> at the same gap
                    pending = Some(match pending {
                        Some(EOB_ID) => EOB_ID,
                        _ => id,
                    });
                }
                Token::Break(_) => {}
            }
        }
        if let Some(p) = pending {
            out.push(p);
        }
        out
    }

    /// Turns generated ids back into a well-formed strict sentence.
    ///
    /// Runs of separators collapse to the strongest one (`<eob>` over
    /// `<eol>` over a plain space), leading breaks are dropped, a second
    /// consecutive `<eol>` becomes `<eob>` and the sentence always ends with
    /// `<eob>`. Control and language tokens are ignored. Returns `None` when
    /// no word was produced.
    pub fn decode_segmented(&self, ids: &[u32]) -> Option<SegmentedSentence> {
        let mut words: Vec<(String, Option<BreakToken>)> = Vec::new();
        let mut cur = String::new();
        let mut gap: Option<u32> = None;
        let flush = |cur: &mut String, gap: &mut Option<u32>, words: &mut Vec<(String, Option<BreakToken>)>| {
            if cur.is_empty() {
                return;
            }
            if let Some(last) = words.last_mut() {
                last.1 = match gap.take() {
                    Some(EOB_ID) => Some(BreakToken::Eob),
                    Some(EOL_ID) => Some(BreakToken::Eol),
                    _ => None,
                };
            }
            *gap = None;
            words.push((std::mem::take(cur), None));
        };
        for &id in ids {
            match id {
                SEP | EOL_ID | EOB_ID => {
                    if !cur.is_empty() {
                        flush(&mut cur, &mut gap, &mut words);
                    }
                    if !words.is_empty() {
                        gap = Some(match (gap, id) {
                            (Some(EOB_ID), _) | (_, EOB_ID) => EOB_ID,
                            (Some(EOL_ID), _) | (_, EOL_ID) => EOL_ID,
                            _ => SEP,
                        });
                    }
                }
                PAD | BOS | EOS | BLANK => {}
                UNK => cur.push('\u{FFFD}'),
                _ if self.is_lang(id) => {}
                _ => cur.push_str(self.token(id)),
            }
        }
        flush(&mut cur, &mut gap, &mut words);
        if words.is_empty() {
            return None;
        }
        let n = words.len();
        let mut tokens = Vec::with_capacity(n * 2);
        let mut prev = None;
        for (i, (w, b)) in words.into_iter().enumerate() {
            tokens.push(Token::Word(w));
            let b = if i + 1 == n {
                Some(BreakToken::Eob)
            } else if b == Some(BreakToken::Eol) && prev == Some(BreakToken::Eol) {
                Some(BreakToken::Eob)
            } else {
                b
            };
            if let Some(b) = b {
                tokens.push(Token::Break(b));
                prev = Some(b);
            }
        }
        Some(SegmentedSentence::from_tokens(tokens, ParseMode::Strict).expect("repaired output is well formed"))
    }
}

pub fn break_id(b: BreakToken) -> u32 {
    match b {
        BreakToken::Eol => EOL_ID,
        BreakToken::Eob => EOB_ID,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v() -> Vocab {
        Vocab::build(&["es", "de"], ["abc de", "xyz"])
    }

    fn s(x: &str) -> SegmentedSentence {
        SegmentedSentence::parse(x, ParseMode::Lenient).unwrap()
    }

    #[test]
    fn layout() {
        let v = v();
        assert_eq!(v.token(EOB_ID), EOB);
        assert_eq!(v.languages(), vec!["de", "es"]);
        assert_eq!(v.len(), 8 + 2 + 8);
        assert!(v.lang_id("fr").is_err());
    }

    #[test]
    fn target_encoding_replaces_separator() {
        let v = v();
        let ids = v.encode_segmented(&s("abc <eol> de <eob>"));
        let toks: Vec<&str> = ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(toks, vec!["a", "b", "c", EOL, "d", "e", EOB]);
        assert_eq!(v.decode_segmented(&ids).unwrap(), s("abc <eol> de <eob>"));
        let src = v.encode_words(&["abc", "de"]);
        assert_eq!(src[3], SEP);
    }

    #[test]
    fn decode_repairs() {
        let v = v();
        let a = v.id("a").unwrap();
        let b = v.id("b").unwrap();
        let c = v.id("c").unwrap();
        let out = v.decode_segmented(&[EOB_ID, a, SEP, EOL_ID, b, EOL_ID, c, EOL_ID]).unwrap();
        assert_eq!(out, s("a <eol> b <eob> c <eob>"));
        assert!(v.decode_segmented(&[EOB_ID, SEP]).is_none());
        assert_eq!(v.decode_segmented(&[a, b]).unwrap(), s("ab <eob>"));
    }
}
