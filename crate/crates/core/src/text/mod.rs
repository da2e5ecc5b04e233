//! Text cleaning, subword and character vocabularies, and fixed-length
//! encoding of messages into model inputs.

mod chars;
mod clean;
mod subword;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chars::{encode_chars, CharVocab, CHAR_PAD_ID, CHAR_UNK_ID};
pub use clean::clean_text;
pub use subword::{tokenize_subwords, train_subword_vocab, SubwordVocab, CLS_ID, PAD_ID, SEP_ID, UNK_ID};

/// Subword sequence length fed to the encoder.
pub const SUBWORD_LEN: usize = 128;
/// Character sequence length fed to the CNN.
pub const CHAR_LEN: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("target vocabulary size {target} is below the minimum {min} (alphabet plus 4 special tokens)")]
    TargetTooSmall { target: usize, min: usize },
    #[error("unknown label `{0}` (expected Normal, Promo/Promotional or Smish)")]
    UnknownLabel(String),
    #[error("vocabulary file: {0}")]
    VocabFormat(String),
}

/// Message category. The discriminant is the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal = 0,
    Promo = 1,
    Smish = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Normal, Label::Promo, Label::Smish];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::Promo => "Promo",
            Label::Smish => "Smish",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Label::Normal),
            "promo" | "promotional" => Ok(Label::Promo),
            "smish" => Ok(Label::Smish),
            _ => Err(TextError::UnknownLabel(s.to_string())),
        }
    }
}

/// Model input for one message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub subword_ids: Vec<usize>,
    /// 1 for real tokens, 0 for padding; always a prefix of ones.
    pub attention_mask: Vec<u8>,
    pub char_ids: Vec<usize>,
}

impl EncodedInput {
    /// Number of unmasked subword positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().map(|&m| m as usize).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    pub input: EncodedInput,
    pub label: Label,
}

/// Both vocabularies plus the sequence lengths they encode to.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub subwords: SubwordVocab,
    pub chars: CharVocab,
    pub subword_len: usize,
    pub char_len: usize,
}

impl Preprocessor {
    /// Builds both vocabularies from already-cleaned texts.
    pub fn fit(
        cleaned: &[String],
        subword_target: usize,
        subword_len: usize,
        char_len: usize,
    ) -> Result<Self, TextError> {
        let chars = CharVocab::build(cleaned)?;
        let min = SubwordVocab::min_target(cleaned);
        let subwords = train_subword_vocab(cleaned, subword_target.max(min))?;
        Ok(Self {
            subwords,
            chars,
            subword_len,
            char_len,
        })
    }

    /// Cleans and encodes a raw message.
    pub fn encode(&self, raw: &str) -> EncodedInput {
        self.encode_cleaned(&clean_text(raw))
    }

    pub fn encode_cleaned(&self, cleaned: &str) -> EncodedInput {
        let (subword_ids, attention_mask) = tokenize_subwords(cleaned, &self.subwords, self.subword_len);
        let char_ids = encode_chars(cleaned, &self.chars, self.char_len);
        EncodedInput {
            subword_ids,
            attention_mask,
            char_ids,
        }
    }

    /// Token strings of the unmasked subword positions.
    pub fn token_strings(&self, input: &EncodedInput) -> Vec<String> {
        input
            .subword_ids
            .iter()
            .zip(&input.attention_mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&id, _)| self.subwords.token(id).to_string())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_parsing() {
        assert_eq!("normal".parse::<Label>().unwrap(), Label::Normal);
        assert_eq!("PROMO".parse::<Label>().unwrap(), Label::Promo);
        assert_eq!("Promotional".parse::<Label>().unwrap(), Label::Promo);
        assert_eq!(" Smish ".parse::<Label>().unwrap(), Label::Smish);
        assert!("Spam".parse::<Label>().is_err());
        assert_eq!(Label::from_index(2), Some(Label::Smish));
        assert_eq!(Label::from_index(3), None);
    }

    #[test]
    fn preprocessor_encodes_fixed_lengths() {
        let corpus: Vec<String> = ["আমি বাড়ি যাব", "offer 50 টাকা"].iter().map(|s| s.to_string()).collect();
        let pre = Preprocessor::fit(&corpus, 40, SUBWORD_LEN, CHAR_LEN).unwrap();
        let enc = pre.encode("আমি  বাড়ি!!");
        assert_eq!(enc.subword_ids.len(), SUBWORD_LEN);
        assert_eq!(enc.attention_mask.len(), SUBWORD_LEN);
        assert_eq!(enc.char_ids.len(), CHAR_LEN);
        let toks = pre.token_strings(&enc);
        assert_eq!(toks.first().map(String::as_str), Some("[CLS]"));
        assert_eq!(toks.last().map(String::as_str), Some("[SEP]"));
    }
}
