use std::collections::HashMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const MASK: usize = 2;

pub const CATEGORIES: [&str; 16] = [
    "ball", "cube", "cup", "dog", "cat", "car", "tree", "book", "lamp", "chair", "bird", "box", "hat",
    "shoe", "vase", "clock",
];
pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "orange", "purple"];
pub const SIZES: [&str; 3] = ["tiny", "small", "large"];

const SPECIALS: [&str; 3] = ["[BOS]", "[EOS]", "[MASK]"];
const FUNCTION_WORDS: [&str; 21] = [
    "a", "the", "and", "is", "there", "image", "shows", "picture", "of", "left", "right", "above",
    "below", "next", "to", "on", "at", "in", "top", "bottom", "middle",
];

pub const VOCAB_HEADER: &str = "lencap-vocab 1";

/// Token table. Specials sit at fixed indices: `[BOS]`=0, `[EOS]`=1, `[MASK]`=2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// The grammar vocabulary: specials, function words, sizes, colors, categories.
    pub fn scene_grammar() -> Self {
        let tokens = SPECIALS
            .iter()
            .chain(&FUNCTION_WORDS)
            .chain(&SIZES)
            .chain(&COLORS)
            .chain(&CATEGORIES)
            .map(|s| s.to_string())
            .collect();
        Self::from_tokens(tokens).expect("built-in vocabulary is valid")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < 3 || tokens[..3].iter().map(String::as_str).ne(SPECIALS) {
            return Err("vocabulary must start with [BOS], [EOS], [MASK]".into());
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate token {t:?}"));
            }
        }
        Ok(Vocabulary { tokens, index })
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

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Panics on unknown words; only used with grammar constants.
    pub(crate) fn word(&self, word: &str) -> usize {
        self.index[word]
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i).unwrap_or("[UNK]")).collect::<Vec<_>>().join(" ")
    }

    pub fn is_category(&self, id: usize) -> bool {
        self.token(id).is_some_and(|t| CATEGORIES.contains(&t))
    }

    /// Categories, attributes and spatial words; everything except specials,
    /// articles and connectives.
    pub fn is_content(&self, id: usize) -> bool {
        const CONTENT_FUNCTION: [&str; 8] = ["left", "right", "above", "below", "next", "top", "bottom", "middle"];
        self.token(id).is_some_and(|t| {
            CATEGORIES.contains(&t) || COLORS.contains(&t) || SIZES.contains(&t) || CONTENT_FUNCTION.contains(&t)
        })
    }

    /// Hex prefix of SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.tokens.join("\n").as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Sidecar text form: header line, then one token per line in index order.
    pub fn to_text(&self) -> String {
        let mut s = String::from(VOCAB_HEADER);
        s.push('\n');
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(VOCAB_HEADER) => {}
            other => return Err(format!("line 1: expected header {VOCAB_HEADER:?}, found {other:?}")),
        }
        Self::from_tokens(lines.map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_fixed() {
        let v = Vocabulary::scene_grammar();
        assert_eq!(v.id("[BOS]"), Some(BOS));
        assert_eq!(v.id("[EOS]"), Some(EOS));
        assert_eq!(v.id("[MASK]"), Some(MASK));
        assert_eq!(v.len(), 3 + 21 + 3 + 8 + 16);
    }

    #[test]
    fn bijective_and_text_round_trip() {
        let v = Vocabulary::scene_grammar();
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i));
        }
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert!(Vocabulary::from_text("nope\n[BOS]").is_err());
        assert!(Vocabulary::from_tokens(vec!["[BOS]".into(), "[EOS]".into(), "[MASK]".into(), "a".into(), "a".into()]).is_err());
    }
}
