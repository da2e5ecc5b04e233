//! Greedy pair-merge subword vocabulary and longest-match tokenization.
//!
//! Merges never cross spaces: each space-separated word is a symbol
//! sequence, and the most frequent adjacent pair (ties broken by the
//! lexicographically smallest `(left, right)` strings) becomes a new token
//! until the target size is reached or no pair occurs twice.

use std::collections::{BTreeMap, HashMap};

use super::TextError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];
const HEADER_PREFIX: &str = "smish-vocab v1 subword";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    tokens: Vec<String>,
    token_to_id: HashMap<String, usize>,
    max_token_chars: usize,
    max_vocab_size: usize,
}

impl SubwordVocab {
    fn with_specials(max_vocab_size: usize) -> Self {
        Self {
            tokens: SPECIALS.iter().map(|s| s.to_string()).collect(),
            token_to_id: HashMap::new(),
            max_token_chars: 0,
            max_vocab_size,
        }
    }

    /// Returns the id of `token`, adding it if new.
    fn intern(&mut self, token: String) -> usize {
        if let Some(&id) = self.token_to_id.get(&token) {
            return id;
        }
        let id = self.tokens.len();
        self.max_token_chars = self.max_token_chars.max(token.chars().count());
        self.token_to_id.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    /// Smallest admissible target size for `corpus`: its alphabet plus the
    /// four special tokens.
    pub fn min_target<S: AsRef<str>>(corpus: &[S]) -> usize {
        let mut seen = std::collections::HashSet::new();
        for c in corpus.iter().flat_map(|s| s.as_ref().chars()) {
            if c != ' ' {
                seen.insert(c);
            }
        }
        seen.len() + SPECIALS.len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_vocab_size(&self) -> usize {
        self.max_vocab_size
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("[UNK]", String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Concatenates the non-special tokens of `ids`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .map(|&id| self.token(id))
            .collect()
    }

    /// Splits one space-free word by greedy longest match.
    fn tokenize_word(&self, word: &str, out: &mut Vec<usize>) {
        let offsets: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let n = offsets.len() - 1;
        let mut i = 0;
        while i < n {
            let longest = self.max_token_chars.min(n - i);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.id(&word[offsets[i]..offsets[i + len]]).map(|id| (id, len)));
            match hit {
                Some((id, len)) => {
                    out.push(id);
                    i += len;
                }
                None => {
                    out.push(UNK_ID);
                    i += 1;
                }
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{HEADER_PREFIX} pad={PAD_ID} unk={UNK_ID} cls={CLS_ID} sep={SEP_ID} max_size={}\n",
            self.max_vocab_size
        );
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let mut lines = body.split('\n');
        let header = lines.next().unwrap_or_default();
        let expected = format!("{HEADER_PREFIX} pad={PAD_ID} unk={UNK_ID} cls={CLS_ID} sep={SEP_ID} max_size=");
        let max_vocab_size = header
            .strip_prefix(&expected)
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| TextError::VocabFormat(format!("bad subword vocab header `{header}`")))?;
        let mut v = Self::with_specials(max_vocab_size);
        for (i, special) in SPECIALS.iter().enumerate() {
            if lines.next() != Some(special) {
                return Err(TextError::VocabFormat(format!("line {} must be {special}", i + 1)));
            }
        }
        for (i, line) in lines.enumerate() {
            if line.is_empty() || line.contains(' ') || v.token_to_id.contains_key(line) {
                return Err(TextError::VocabFormat(format!(
                    "subword vocab line {} is empty, contains a space, or repeats a token",
                    i + 5
                )));
            }
            v.intern(line.to_string());
        }
        Ok(v)
    }
}

/// Trains a pair-merge vocabulary on cleaned texts.
pub fn train_subword_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<SubwordVocab, TextError> {
    if corpus.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let min = SubwordVocab::min_target(corpus);
    if target_size < min {
        return Err(TextError::TargetTooSmall { target: target_size, min });
    }
    let mut vocab = SubwordVocab::with_specials(target_size);

    let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for text in corpus {
        for c in text.as_ref().chars().filter(|&c| c != ' ') {
            vocab.intern(c.to_string());
        }
        for w in text.as_ref().split(' ').filter(|w| !w.is_empty()) {
            *word_freq.entry(w).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<usize>, usize)> = word_freq
        .iter()
        .map(|(w, &f)| (w.chars().map(|c| vocab.id(&c.to_string()).unwrap()).collect(), f))
        .collect();

    while vocab.len() < target_size {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for (syms, f) in &words {
            for pair in syms.windows(2) {
                *counts.entry((pair[0], pair[1])).or_default() += f;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (vocab.token(pa.0), vocab.token(pa.1));
                let kb = (vocab.token(pb.0), vocab.token(pb.1));
                kb.cmp(&ka)
            })
        });
        let Some(((left, right), count)) = best else { break };
        if count < 2 {
            break;
        }
        let merged = vocab.intern(format!("{}{}", vocab.token(left), vocab.token(right)));
        for (syms, _) in &mut words {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }
    Ok(vocab)
}

/// `[CLS] tokens… [SEP]` truncated to `max_len` (SEP kept) and padded with
/// PAD. The mask is 1 on real tokens.
pub fn tokenize_subwords(text: &str, vocab: &SubwordVocab, max_len: usize) -> (Vec<usize>, Vec<u8>) {
    assert!(max_len >= 2, "subword length must leave room for CLS and SEP");
    let mut ids = vec![CLS_ID];
    for w in text.split(' ').filter(|w| !w.is_empty()) {
        vocab.tokenize_word(w, &mut ids);
        if ids.len() >= max_len - 1 {
            break;
        }
    }
    ids.truncate(max_len - 1);
    ids.push(SEP_ID);
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let mask = (0..max_len).map(|i| u8::from(i < real)).collect();
    (ids, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn merges_frequent_pair() {
        let v = train_subword_vocab(&["abab", "abab"], 10).unwrap();
        assert!(v.id("ab").is_some());
        assert_eq!(v.token(4), "a");
        assert_eq!(v.token(5), "b");
        assert_eq!(v.token(6), "ab");
    }

    #[test]
    fn minimal_target_is_character_level() {
        let corpus = ["abc ca", "bd"];
        let min = SubwordVocab::min_target(&corpus);
        assert_eq!(min, 8);
        let v = train_subword_vocab(&corpus, min).unwrap();
        assert_eq!(v.len(), min);
        assert!(v.id("ab").is_none());
        assert_eq!(
            train_subword_vocab(&corpus, min - 1).unwrap_err(),
            TextError::TargetTooSmall { target: 7, min: 8 }
        );
        assert_eq!(train_subword_vocab::<&str>(&[], 10).unwrap_err(), TextError::EmptyCorpus);
    }

    #[test]
    fn ties_break_lexicographically() {
        // "xy" and "ab" both occur twice; "ab" < "xy".
        let v = train_subword_vocab(&["xy ab", "ab xy"], 9).unwrap();
        assert_eq!(v.token(8), "ab");
        assert_eq!(train_subword_vocab(&["xy ab", "ab xy"], 9).unwrap(), v);
    }

    #[test]
    fn tokenize_examples() {
        let v = train_subword_vocab(&["ab cd ef gh ij"], 20).unwrap();
        let (ids, mask) = tokenize_subwords("", &v, 128);
        assert_eq!(&ids[..3], &[CLS_ID, SEP_ID, PAD_ID]);
        assert_eq!(mask.iter().map(|&m| m as usize).sum::<usize>(), 2);

        // No pair occurs twice, so every character is its own token.
        let (_, mask) = tokenize_subwords("ab c ef", &v, 128);
        assert_eq!(mask.iter().map(|&m| m as usize).sum::<usize>(), 7);

        let long = vec!["ab"; 500].join(" ");
        let (ids, mask) = tokenize_subwords(&long, &v, 128);
        assert_eq!(mask.iter().map(|&m| m as usize).sum::<usize>(), 128);
        assert_eq!(ids[127], SEP_ID);

        let (ids, _) = tokenize_subwords("az", &v, 8);
        assert_eq!(&ids[..4], &[CLS_ID, v.id("a").unwrap(), UNK_ID, SEP_ID]);
    }

    #[test]
    fn greedy_longest_match() {
        let v = train_subword_vocab(&["abc abc abc", "ab"], 12).unwrap();
        assert!(v.id("abc").is_some());
        let (ids, _) = tokenize_subwords("abcab", &v, 8);
        assert_eq!(&ids[1..3], &[v.id("abc").unwrap(), v.id("ab").unwrap()]);
    }

    #[test]
    fn text_round_trip() {
        let v = train_subword_vocab(&["আমি বাড়ি যাব আমি", "abc 12"], 30).unwrap();
        assert_eq!(SubwordVocab::from_text(&v.to_text()).unwrap(), v);
        assert!(SubwordVocab::from_text("garbage").is_err());
    }

    proptest! {
        #[test]
        fn mask_is_prefix_and_decode_recovers_text(words in prop::collection::vec("[abcdকখগ]{1,6}", 0..20)) {
            let corpus = ["abcd কখগ abab কখকখ dcba"];
            let v = train_subword_vocab(&corpus, 16).unwrap();
            let text = words.join(" ");
            let (ids, mask) = tokenize_subwords(&text, &v, 128);
            let real = mask.iter().map(|&m| m as usize).sum::<usize>();
            prop_assert!((2..=128).contains(&real));
            prop_assert!(mask[..real].iter().all(|&m| m == 1));
            prop_assert!(mask[real..].iter().all(|&m| m == 0));
            prop_assert!(ids[real..].iter().all(|&i| i == PAD_ID));
            prop_assert_eq!(ids[real - 1], SEP_ID);
            if real < 128 {
                prop_assert_eq!(v.decode(&ids), text.replace(' ', ""));
            }
        }
    }
}
