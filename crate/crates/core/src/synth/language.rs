//! Toy languages with subtitle-style segmentations and matching speech.
//!
//! Every language draws words from its own lexicon, built from a consonant
//! and vowel inventory over one shared alphabet. References are segmented
//! greedily with a line limit drawn per sentence, so the text alone only
//! loosely determines where breaks fall, while the generated speech pauses
//! exactly at them.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::speech::{generate_synthetic_speech, SpeechConfig};
use crate::corpus::{SegmentedSentence, Utterance};
use crate::rng;
use crate::rulebased::{count_chars_segment, CountCharsConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub name: String,
    pub consonants: String,
    pub vowels: String,
    /// Words have 1 to `max_syllables` syllables.
    pub max_syllables: usize,
    /// Probability that a syllable ends in a consonant.
    pub coda_prob: f64,
    pub lexicon_size: usize,
}

impl LanguageSpec {
    /// Three fixed languages over the alphabet `a..z`; the third one uses
    /// only letters that also occur in the first two.
    pub fn presets() -> [LanguageSpec; 3] {
        let spec = |name: &str, c: &str, v: &str, syl, coda| LanguageSpec {
            name: name.into(),
            consonants: c.into(),
            vowels: v.into(),
            max_syllables: syl,
            coda_prob: coda,
            lexicon_size: 2000,
        };
        [
            spec("aa", "bdklmnprst", "aeiou", 3, 0.1),
            spec("bb", "fghkmnrstvz", "aeiou", 2, 0.6),
            spec("cc", "bdfgklmnrstv", "aeiou", 3, 0.35),
        ]
    }

    pub fn lexicon(&self, seed: u64) -> Vec<String> {
        let cons: Vec<char> = self.consonants.chars().collect();
        let vows: Vec<char> = self.vowels.chars().collect();
        let mut r = rng::derived(seed, 0x1e8);
        let mut words: Vec<String> = Vec::with_capacity(self.lexicon_size);
        let mut guard = 0;
        while words.len() < self.lexicon_size && guard < 100 * self.lexicon_size.max(1) {
            guard += 1;
            let n = r.random_range(1..=self.max_syllables.max(1));
            let mut w = String::new();
            for _ in 0..n {
                w.push(*cons.choose(&mut r).expect("consonants"));
                w.push(*vows.choose(&mut r).expect("vowels"));
                if r.random::<f64>() < self.coda_prob {
                    w.push(*cons.choose(&mut r).expect("consonants"));
                }
            }
            if !words.contains(&w) {
                words.push(w);
            }
        }
        words
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Inclusive range of the per-sentence line limit in characters.
    pub min_limit: usize,
    pub max_limit: usize,
    pub eol_prob: f64,
    pub speech: SpeechConfig,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            sentences: 50,
            min_words: 5,
            max_words: 10,
            min_limit: 14,
            max_limit: 26,
            eol_prob: 0.25,
            speech: SpeechConfig::default(),
        }
    }
}

/// Generates `spec.sentences` utterances of `lang`. Ids are
/// `{lang}-{index}`; the source text is the target without breaks. The
/// lexicon depends on `lexicon_seed` only, so corpora drawn with different
/// `seed`s share their vocabulary.
pub fn synthetic_corpus(lang: &LanguageSpec, spec: &CorpusSpec, lexicon_seed: u64, seed: u64) -> Vec<Utterance> {
    let lexicon = lang.lexicon(lexicon_seed);
    let longest = lexicon.iter().map(|w| w.chars().count()).max().unwrap_or(1);
    (0..spec.sentences)
        .map(|i| {
            let mut r = rng::derived(seed, i as u64);
            let n = r.random_range(spec.min_words.max(1)..=spec.max_words.max(spec.min_words.max(1)));
            let words: Vec<&str> = (0..n).map(|_| lexicon.choose(&mut r).expect("lexicon").as_str()).collect();
            let cfg = CountCharsConfig {
                limit: r.random_range(spec.min_limit..=spec.max_limit.max(spec.min_limit)).max(longest),
                eol_prob: spec.eol_prob,
                seed: 0,
            };
            let target = count_chars_segment(&words, &cfg, &mut r).expect("limit covers every word");
            let features = generate_synthetic_speech(&target, &spec.speech, &mut r);
            Utterance {
                id: format!("{}-{i}", lang.name),
                features: Arc::new(features),
                source_text: SegmentedSentence::from_words(&words),
                target,
                target_language: lang.name.clone(),
            }
        })
        .collect()
}
