//! Character 3-gram profiles for picking a prefix language token.

use std::collections::BTreeMap;

use crate::corpus::SegmentedSentence;

pub type Profile = BTreeMap<String, f64>;

/// Relative frequencies of character 3-grams. Each word is padded with a
/// space on both sides, so `ab` contributes ` ab` and `ab `.
pub fn trigram_profile<'a, I>(sentences: I) -> Profile
where
    I: IntoIterator<Item = &'a SegmentedSentence>,
{
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0.0;
    for s in sentences {
        for w in s.words() {
            let chars: Vec<char> = std::iter::once(' ').chain(w.chars()).chain(std::iter::once(' ')).collect();
            for g in chars.windows(3) {
                *counts.entry(g.iter().collect()).or_default() += 1.0;
                total += 1.0;
            }
        }
    }
    if total > 0.0 {
        for v in counts.values_mut() {
            *v /= total;
        }
    }
    counts
}

/// Cosine similarity of two sparse profiles; 0 when either is empty.
pub fn cosine(a: &Profile, b: &Profile) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The language whose profile is most similar to `target`. Ties go to the
/// alphabetically first name; `None` only when `known` is empty.
pub fn closest_language(known: &BTreeMap<String, Profile>, target: &Profile) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    for (lang, p) in known {
        let c = cosine(p, target);
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((lang, c));
        }
    }
    best.map(|(l, _)| l.clone())
}
