use serde::{Deserialize, Serialize};

use crate::util::nfc;

/// Token sequence produced by [`tokenize`].
///
/// The field is private so every sequence fed into the n-gram code went
/// through the same lowercase / NFC / punctuation-splitting rules.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn from_text(text: &str) -> Self {
        tokenize(text)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tokens that are not standalone punctuation.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0
            .iter()
            .map(String::as_str)
            .filter(|t| !t.chars().all(is_punctuation))
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

/// Punctuation for tokenization: ASCII punctuation plus the common Unicode
/// quote, dash and bracket characters.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}'
            | '\u{3008}'..='\u{3011}'
            | '\u{FF01}'..='\u{FF0F}'
            | '\u{FF1A}'..='\u{FF20}')
}

/// Canonical tokenizer: NFC, lowercase, each punctuation character becomes
/// its own token, everything else splits on whitespace.
pub fn tokenize(text: &str) -> TokenSeq {
    let text = nfc(text).to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSeq(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).0
    }

    #[test]
    fn splits_possessive_and_period() {
        assert_eq!(toks("The cat's mat."), ["the", "cat", "'", "s", "mat", "."]);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t\n").is_empty());
    }

    #[test]
    fn unicode_quotes_and_case() {
        assert_eq!(toks("“Ÿes”—no"), ["“", "ÿes", "”", "—", "no"]);
        assert_eq!(toks("Cafe\u{301}"), ["café"]);
    }

    #[test]
    fn words_skip_punctuation() {
        let t = tokenize("Hello, world!");
        assert_eq!(t.words().collect::<Vec<_>>(), ["hello", "world"]);
    }

    proptest! {
        #[test]
        fn round_trip_without_punctuation(words in proptest::collection::vec("[a-z0-9]{1,8}", 0..20)) {
            let t = tokenize(&words.join(" "));
            prop_assert_eq!(tokenize(&t.join()), t);
        }

        #[test]
        fn deterministic(s in "\\PC{0,40}") {
            prop_assert_eq!(tokenize(&s), tokenize(&s));
        }
    }
}
