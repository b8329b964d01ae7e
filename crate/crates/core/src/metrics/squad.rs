//! SQuAD-style answer normalization, exact match and token F1.

use std::collections::HashMap;

use crate::util::nfc;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the and
/// collapse whitespace. NFC runs first (some code points decompose to ASCII
/// punctuation) and again after stripping.
pub fn squad_normalize(text: &str) -> String {
    let no_punct: String = nfc(text)
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    nfc(&no_punct)
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Tokens of the normalized text.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    squad_normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// True when `needle`'s normalized tokens occur as a contiguous run inside
/// `haystack`'s normalized tokens. An empty needle never matches.
pub fn normalized_contains(haystack: &str, needle: &str) -> bool {
    let n = normalized_tokens(needle);
    if n.is_empty() {
        return false;
    }
    normalized_tokens(haystack)
        .windows(n.len())
        .any(|w| w == n.as_slice())
}

/// 1 if the normalized prediction equals any normalized gold, else 0.
pub fn squad_em<S: AsRef<str>>(prediction: &str, golds: &[S]) -> u8 {
    let p = squad_normalize(prediction);
    u8::from(golds.iter().any(|g| squad_normalize(g.as_ref()) == p))
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for p in pred {
        if let Some(c) = counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    2.0 * overlap as f64 / (pred.len() + gold.len()) as f64
}

/// Max over golds of the bag-of-tokens F1.
pub fn squad_f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    let p = normalized_tokens(prediction);
    golds
        .iter()
        .map(|g| token_f1(&p, &normalized_tokens(g.as_ref())))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(
            squad_normalize("The Photoelectric Effect!"),
            "photoelectric effect"
        );
        assert_eq!(squad_normalize(""), "");
        assert_eq!(squad_normalize("  An   apple,a day "), "applea day");
    }

    #[test]
    fn em_and_f1() {
        assert_eq!(
            squad_em("the photoelectric effect", &["photoelectric effect"]),
            1
        );
        assert_eq!(
            squad_f1("the photoelectric effect", &["photoelectric effect"]),
            1.0
        );
        assert_eq!(squad_em("solar power", &["photoelectric effect"]), 0);
        assert_eq!(squad_f1("solar power", &["photoelectric effect"]), 0.0);
        assert_eq!(squad_f1("four haploid cells", &["four haploid"]), 0.8);
    }

    #[test]
    fn empty_prediction() {
        assert_eq!(squad_f1("", &["x"]), 0.0);
        assert_eq!(squad_em("", &["x"]), 0);
        assert_eq!(squad_em("", &["the"]), 1);
        assert_eq!(squad_f1("", &["a an"]), 1.0);
    }

    #[test]
    fn containment_is_token_aligned() {
        assert!(normalized_contains(
            "...the photoelectric effect.",
            "The Photoelectric Effect"
        ));
        assert!(!normalized_contains("xyz", "abc"));
        assert!(!normalized_contains("haploidy", "haploid"));
        assert!(!normalized_contains("anything", ""));
    }

    #[test]
    fn multiple_golds_take_max() {
        assert_eq!(
            squad_f1("four haploid", &["two cells", "four haploid"]),
            1.0
        );
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,40}") {
            let once = squad_normalize(&s);
            prop_assert_eq!(squad_normalize(&once), once);
        }

        #[test]
        fn f1_symmetric(a in "[a-d ]{0,20}", b in "[a-d ]{0,20}") {
            prop_assert_eq!(squad_f1(&a, &[&b]), squad_f1(&b, &[&a]));
        }

        #[test]
        fn em_implies_full_f1(a in "[a-c .,]{0,16}", b in "[a-c .,]{0,16}") {
            if squad_em(&a, &[&b]) == 1 {
                prop_assert_eq!(squad_f1(&a, &[&b]), 1.0);
            }
        }
    }
}
