//! Character-bigram overlap and keyword matching.
//!
//! Bigrams are taken over Unicode scalar values inside each alphanumeric run,
//! so whitespace and punctuation never contribute. Set semantics throughout.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Score awarded when a keyword occurs verbatim in the scored text.
pub const LEGAL_TERM_FLOOR: f64 = 0.6;

/// A similarity value clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OverlapScore(f64);

impl OverlapScore {
    pub const ZERO: OverlapScore = OverlapScore(0.0);

    pub fn new(value: f64) -> Self {
        OverlapScore(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn normalize(text: &str) -> String {
    text.to_lowercase()
}

/// Set of character bigrams of `text`, computed per alphanumeric run.
pub fn char_bigrams(text: &str) -> BTreeSet<(char, char)> {
    let lowered = normalize(text);
    let mut out = BTreeSet::new();
    for run in lowered.split(|c: char| !c.is_alphanumeric()) {
        let chars: Vec<char> = run.chars().collect();
        for pair in chars.windows(2) {
            out.insert((pair[0], pair[1]));
        }
    }
    out
}

/// Dice coefficient over character-bigram sets; 0.0 if either set is empty.
pub fn overlap(a: &str, b: &str) -> OverlapScore {
    let left = char_bigrams(a);
    let right = char_bigrams(b);
    dice(&left, &right)
}

pub(crate) fn dice(left: &BTreeSet<(char, char)>, right: &BTreeSet<(char, char)>) -> OverlapScore {
    if left.is_empty() || right.is_empty() {
        return OverlapScore::ZERO;
    }
    let shared = left.intersection(right).count();
    OverlapScore::new(2.0 * shared as f64 / (left.len() + right.len()) as f64)
}

/// True when `needle` (non-empty after trimming) occurs verbatim in `haystack`,
/// case-insensitively.
pub fn contains_term(haystack: &str, needle: &str) -> bool {
    let needle = needle.trim();
    !needle.is_empty() && normalize(haystack).contains(&normalize(needle))
}

/// Overlap of `text` against the space-joined `keywords`, raised to
/// [`LEGAL_TERM_FLOOR`] when any keyword occurs verbatim.
pub fn keyword_score<S: AsRef<str>>(text: &str, keywords: &[S]) -> OverlapScore {
    let joined = keywords
        .iter()
        .map(|k| k.as_ref())
        .collect::<Vec<_>>()
        .join(" ");
    let base = overlap(text, &joined);
    if keywords.iter().any(|k| contains_term(text, k.as_ref())) {
        OverlapScore::new(base.value().max(LEGAL_TERM_FLOOR))
    } else {
        base
    }
}

/// Whitespace-separated query terms of at least two characters.
pub fn query_terms(query: &str) -> Vec<&str> {
    query
        .split_whitespace()
        .filter(|t| t.chars().count() >= 2)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_text_scores_one() {
        assert_eq!(overlap("劳动合同", "劳动合同").value(), 1.0);
        assert_eq!(overlap("ab", "ab").value(), 1.0);
    }

    #[test]
    fn hand_enumerated_dice() {
        // {ab,bc,cd} vs {cd,de,ef}: one shared bigram.
        let s = overlap("abcd", "cdef").value();
        assert!((s - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_single_char_inputs() {
        assert_eq!(overlap("", "abc").value(), 0.0);
        assert_eq!(overlap("a", "a").value(), 0.0);
        assert_eq!(overlap("abc", "").value(), 0.0);
    }

    #[test]
    fn punctuation_does_not_form_bigrams() {
        assert_eq!(char_bigrams("工资，拖欠").len(), 2);
        assert_eq!(char_bigrams("a b").len(), 0);
    }

    #[test]
    fn keyword_floor_applies_on_verbatim_hit() {
        let s = keyword_score("本条规定了经济补偿的计算方法以及其他事项", &["经济补偿"]);
        assert!(s.value() >= LEGAL_TERM_FLOOR);
        let none = keyword_score("完全无关的内容", &["经济补偿"]);
        assert_eq!(none.value(), 0.0);
    }

    #[test]
    fn query_terms_drop_single_chars() {
        assert_eq!(query_terms("工资 a  欠薪"), vec!["工资", "欠薪"]);
    }
}
