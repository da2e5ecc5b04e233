use std::collections::HashMap;

use super::TextError;

pub const CHAR_PAD_ID: usize = 0;
pub const CHAR_UNK_ID: usize = 1;

const HEADER_PREFIX: &str = "smish-vocab v1 chars";

/// Character vocabulary: 0 is PAD, 1 is UNK, then corpus characters in
/// first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    char_to_id: HashMap<char, usize>,
    id_to_char: Vec<char>,
}

impl CharVocab {
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Result<Self, TextError> {
        if corpus.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut v = Self {
            char_to_id: HashMap::new(),
            id_to_char: Vec::new(),
        };
        for c in corpus.iter().flat_map(|s| s.as_ref().chars()) {
            v.insert(c);
        }
        Ok(v)
    }

    fn insert(&mut self, c: char) {
        if !self.char_to_id.contains_key(&c) {
            self.char_to_id.insert(c, self.id_to_char.len() + 2);
            self.id_to_char.push(c);
        }
    }

    pub fn pad_id(&self) -> usize {
        CHAR_PAD_ID
    }

    pub fn unk_id(&self) -> usize {
        CHAR_UNK_ID
    }

    /// Total ids including the two sentinels.
    pub fn len(&self) -> usize {
        self.id_to_char.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.char_to_id.get(&c).copied().unwrap_or(CHAR_UNK_ID)
    }

    /// `None` for the PAD and UNK sentinels.
    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(2).and_then(|i| self.id_to_char.get(i).copied())
    }

    /// One entry per line, id = line index after the header.
    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER_PREFIX} pad={CHAR_PAD_ID} unk={CHAR_UNK_ID}\n<PAD>\n<UNK>\n");
        for c in &self.id_to_char {
            s.push(*c);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let mut lines = body.split('\n');
        let header = lines.next().unwrap_or_default();
        if header != format!("{HEADER_PREFIX} pad={CHAR_PAD_ID} unk={CHAR_UNK_ID}") {
            return Err(TextError::VocabFormat(format!("bad char vocab header `{header}`")));
        }
        if lines.next() != Some("<PAD>") || lines.next() != Some("<UNK>") {
            return Err(TextError::VocabFormat("missing <PAD>/<UNK> entries".into()));
        }
        let mut v = Self {
            char_to_id: HashMap::new(),
            id_to_char: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) if !v.char_to_id.contains_key(&c) => v.insert(c),
                _ => {
                    return Err(TextError::VocabFormat(format!(
                        "char vocab line {} is not a single new character",
                        i + 3
                    )))
                }
            }
        }
        Ok(v)
    }
}

/// Fixed-length character ids: the first `min(L, max_len)` positions hold
/// character ids (UNK for unseen characters), the rest hold PAD.
pub fn encode_chars(text: &str, vocab: &CharVocab, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = text.chars().take(max_len).map(|c| vocab.id(c)).collect();
    ids.resize(max_len, vocab.pad_id());
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_examples() {
        let v = CharVocab::build(&["ab"]).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!((v.id('a'), v.id('b')), (2, 3));
        assert_eq!(v.id('z'), CHAR_UNK_ID);
        assert_eq!(CharVocab::build(&["aa"]).unwrap().len(), 3);
        assert_eq!(CharVocab::build(&["ba", "c"]).unwrap(), CharVocab::build(&["ba", "c"]).unwrap());
        assert_eq!(CharVocab::build::<&str>(&[]).unwrap_err(), TextError::EmptyCorpus);
    }

    #[test]
    fn encode_examples() {
        let v = CharVocab::build(&["abc"]).unwrap();
        assert_eq!(encode_chars("abc", &v, 5), vec![2, 3, 4, 0, 0]);
        assert_eq!(encode_chars("", &v, 256), vec![0; 256]);
        let long: String = "abc".repeat(100);
        let ids = encode_chars(&long, &v, 256);
        assert_eq!(ids.len(), 256);
        assert!(ids.iter().all(|&i| i != CHAR_PAD_ID));
        assert_eq!(ids[255], v.id(long.chars().nth(255).unwrap()));
        assert_eq!(encode_chars("axb", &v, 4), vec![2, 1, 3, 0]);
    }

    #[test]
    fn text_round_trip_with_space() {
        let v = CharVocab::build(&["আমি যাব x1"]).unwrap();
        let back = CharVocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(CharVocab::from_text("nope\n").is_err());
    }

    proptest! {
        #[test]
        fn encode_has_fixed_length(s in "[abcxyz ]{0,40}", max_len in 1usize..32) {
            let v = CharVocab::build(&["abc "]).unwrap();
            prop_assert_eq!(encode_chars(&s, &v, max_len).len(), max_len);
        }
    }
}
