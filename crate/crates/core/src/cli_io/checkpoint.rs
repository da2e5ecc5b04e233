//! Binary model container.
//!
//! Layout: 8 magic bytes, `u32` format version, `u64` header length, a JSON
//! header, then one block per parameter in header order: `u64` element
//! count followed by that many `f64` values. All integers and floats are
//! little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{dataset::write_file, IoError};
use crate::baselines::{BowFeaturizer, LogRegModel, NaiveBayesModel};
use crate::model::{HybridModel, HybridModelConfig};
use crate::tensor::{ParamStore, Tensor};
use crate::text::{CharVocab, Label, Preprocessor, SubwordVocab};

pub const MAGIC: &[u8; 8] = b"SMISHCK\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hybrid,
    NaiveBayes,
    LogisticRegression,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Hybrid => "hybrid",
            ModelKind::NaiveBayes => "naive_bayes",
            ModelKind::LogisticRegression => "logistic_regression",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub train_samples: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub vocabularies: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor)>,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: serde_json::Value,
    vocabularies: BTreeMap<String, String>,
    params: Vec<ParamEntry>,
    metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SequenceLengths {
    subword_len: usize,
    char_len: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, IoError> {
        let header = Header {
            kind: self.kind,
            config: self.config.clone(),
            vocabularies: self.vocabularies.clone(),
            params: self
                .params
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| IoError::Header(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.params {
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IoError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(IoError::BadMagic);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(IoError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = r.u64()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| IoError::Header(e.to_string()))?;
        let mut params = Vec::with_capacity(header.params.len());
        for entry in header.params {
            let count = r.u64()? as usize;
            let expected: usize = entry.shape.iter().product();
            if count != expected {
                return Err(IoError::ShapeMismatch {
                    name: entry.name,
                    shape: entry.shape,
                    count,
                });
            }
            let raw = r.take(count.checked_mul(8).ok_or(IoError::Truncated)?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(entry.shape, data).map_err(|e| IoError::Header(e.to_string()))?;
            params.push((entry.name, t));
        }
        if r.pos != bytes.len() {
            return Err(IoError::TrailingData(bytes.len() - r.pos));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            vocabularies: header.vocabularies,
            params,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::from_bytes(&fs::read(path).map_err(|e| IoError::io(path, e))?)
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<(), IoError> {
        if self.kind != kind {
            return Err(IoError::ModelKind {
                expected: kind,
                found: self.kind,
            });
        }
        Ok(())
    }

    fn vocab(&self, name: &str) -> Result<&str, IoError> {
        self.vocabularies
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| IoError::Header(format!("missing vocabulary `{name}`")))
    }

    fn param(&self, name: &str) -> Result<&Tensor, IoError> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| IoError::Header(format!("missing parameter `{name}`")))
    }

    pub fn from_hybrid(model: &HybridModel, pre: &Preprocessor, metadata: TrainingMetadata) -> Result<Self, IoError> {
        let config = serde_json::to_value(model.config()).map_err(|e| IoError::Header(e.to_string()))?;
        let lengths = SequenceLengths {
            subword_len: pre.subword_len,
            char_len: pre.char_len,
        };
        let mut vocabularies = BTreeMap::new();
        vocabularies.insert("subword".to_string(), pre.subwords.to_text());
        vocabularies.insert("char".to_string(), pre.chars.to_text());
        vocabularies.insert(
            "lengths".to_string(),
            serde_json::to_string(&lengths).map_err(|e| IoError::Header(e.to_string()))?,
        );
        Ok(Self {
            kind: ModelKind::Hybrid,
            config,
            vocabularies,
            params: model.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            metadata,
        })
    }

    pub fn to_hybrid(&self) -> Result<(HybridModel, Preprocessor), IoError> {
        self.expect_kind(ModelKind::Hybrid)?;
        let config: HybridModelConfig =
            serde_json::from_value(self.config.clone()).map_err(|e| IoError::Header(e.to_string()))?;
        let lengths: SequenceLengths =
            serde_json::from_str(self.vocab("lengths")?).map_err(|e| IoError::Header(e.to_string()))?;
        let pre = Preprocessor {
            subwords: SubwordVocab::from_text(self.vocab("subword")?)?,
            chars: CharVocab::from_text(self.vocab("char")?)?,
            subword_len: lengths.subword_len,
            char_len: lengths.char_len,
        };
        let mut store = ParamStore::new();
        for (name, t) in &self.params {
            store.add(name.clone(), t.clone()).map_err(|e| IoError::Header(e.to_string()))?;
        }
        Ok((HybridModel::from_parts(config, store)?, pre))
    }

    fn bow_vocab(featurizer: &BowFeaturizer) -> BTreeMap<String, String> {
        let mut v = BTreeMap::new();
        v.insert("bow".to_string(), featurizer.tokens().join("\n"));
        v
    }

    fn bow_featurizer(&self) -> Result<BowFeaturizer, IoError> {
        let text = self.vocab("bow")?;
        let tokens: Vec<String> = if text.is_empty() {
            Vec::new()
        } else {
            text.split('\n').map(str::to_string).collect()
        };
        Ok(BowFeaturizer::from_parts(tokens, self.param("bow.idf")?.data().to_vec())?)
    }

    pub fn from_naive_bayes(model: &NaiveBayesModel, metadata: TrainingMetadata) -> Self {
        let v = model.featurizer.len();
        let lik: Vec<f64> = model.log_likelihood.iter().flatten().copied().collect();
        Self {
            kind: ModelKind::NaiveBayes,
            config: serde_json::json!({ "alpha": crate::baselines::NB_ALPHA }),
            vocabularies: Self::bow_vocab(&model.featurizer),
            params: vec![
                ("bow.idf".into(), Tensor::vector(model.featurizer.idf().to_vec())),
                ("nb.log_prior".into(), Tensor::vector(model.log_prior.to_vec())),
                (
                    "nb.log_likelihood".into(),
                    Tensor::new(vec![Label::COUNT, v], lik).expect("3×V likelihoods"),
                ),
            ],
            metadata,
        }
    }

    pub fn to_naive_bayes(&self) -> Result<NaiveBayesModel, IoError> {
        self.expect_kind(ModelKind::NaiveBayes)?;
        let featurizer = self.bow_featurizer()?;
        let prior = self.param("nb.log_prior")?;
        let lik = self.param("nb.log_likelihood")?;
        if prior.len() != Label::COUNT || lik.shape() != [Label::COUNT, featurizer.len()] {
            return Err(IoError::Header("naive Bayes tables do not match the vocabulary".into()));
        }
        Ok(NaiveBayesModel {
            log_prior: std::array::from_fn(|c| prior.data()[c]),
            log_likelihood: (0..Label::COUNT).map(|c| lik.row(c).to_vec()).collect(),
            featurizer,
        })
    }

    pub fn from_logreg(model: &LogRegModel, metadata: TrainingMetadata) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            config: serde_json::json!({}),
            vocabularies: Self::bow_vocab(&model.featurizer),
            params: vec![
                ("bow.idf".into(), Tensor::vector(model.featurizer.idf().to_vec())),
                ("logreg.w".into(), model.weights.clone()),
                ("logreg.b".into(), model.bias.clone()),
            ],
            metadata,
        }
    }

    pub fn to_logreg(&self) -> Result<LogRegModel, IoError> {
        self.expect_kind(ModelKind::LogisticRegression)?;
        Ok(LogRegModel::from_parts(
            self.bow_featurizer()?,
            self.param("logreg.w")?.clone(),
            self.param("logreg.b")?.clone(),
        )?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).ok_or(IoError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(IoError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{train_logreg, train_naive_bayes, LabeledText, LogRegConfig};

    fn hybrid() -> (HybridModel, Preprocessor) {
        let texts = vec!["verify your account".to_string(), "আজ ছাড় অফার".to_string()];
        let pre = Preprocessor::fit(&texts, 40, 8, 16).unwrap();
        let cfg = HybridModelConfig::tiny(pre.subwords.len(), pre.chars.len());
        (HybridModel::init(cfg, 4).unwrap(), pre)
    }

    fn meta() -> TrainingMetadata {
        TrainingMetadata {
            seed: 4,
            epochs: 3,
            train_samples: 2,
            final_train_loss: Some(0.25),
            final_val_loss: None,
        }
    }

    #[test]
    fn hybrid_round_trip_is_bit_exact() {
        let (model, pre) = hybrid();
        let ck = Checkpoint::from_hybrid(&model, &pre, meta()).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let (m2, p2) = back.to_hybrid().unwrap();
        assert_eq!(p2, pre);
        for (a, b) in model.params().iter().zip(m2.params().iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn integrity_errors_are_distinct() {
        let (model, pre) = hybrid();
        let bytes = Checkpoint::from_hybrid(&model, &pre, meta()).unwrap().to_bytes().unwrap();
        for cut in [0, 5, 11, 30, bytes.len() - 1] {
            assert_eq!(Checkpoint::from_bytes(&bytes[..cut]).unwrap_err(), IoError::Truncated, "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        assert_eq!(Checkpoint::from_bytes(&bad).unwrap_err(), IoError::BadMagic);
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad).unwrap_err(),
            IoError::VersionMismatch { found: 9, expected: 1 }
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(Checkpoint::from_bytes(&extra).unwrap_err(), IoError::TrailingData(1));
    }

    #[test]
    fn element_count_must_match_shape() {
        let ck = Checkpoint {
            kind: ModelKind::LogisticRegression,
            config: serde_json::json!({}),
            vocabularies: BTreeMap::new(),
            params: vec![("w".into(), Tensor::vector(vec![1.0, 2.0]))],
            metadata: TrainingMetadata::default(),
        };
        let mut bytes = ck.to_bytes().unwrap();
        // Rewrite the element count of the only block from 2 to 1.
        let at = bytes.len() - 2 * 8 - 8;
        bytes[at..at + 8].copy_from_slice(&1u64.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes).unwrap_err(),
            IoError::ShapeMismatch { count: 1, .. }
        ));
    }

    fn samples() -> Vec<LabeledText> {
        ["home tonight", "home dinner", "sale offer", "offer today", "click link", "link verify"]
            .iter()
            .zip([Label::Normal, Label::Normal, Label::Promo, Label::Promo, Label::Smish, Label::Smish])
            .map(|(t, label)| LabeledText {
                text: t.to_string(),
                label,
            })
            .collect()
    }

    #[test]
    fn baselines_round_trip_and_kind_check() {
        let nb = train_naive_bayes(&samples()).unwrap();
        let ck = Checkpoint::from_bytes(&Checkpoint::from_naive_bayes(&nb, meta()).to_bytes().unwrap()).unwrap();
        assert_eq!(ck.to_naive_bayes().unwrap(), nb);
        assert_eq!(
            ck.to_hybrid().unwrap_err(),
            IoError::ModelKind {
                expected: ModelKind::Hybrid,
                found: ModelKind::NaiveBayes
            }
        );
        let (lr, _) = train_logreg(&samples(), &LogRegConfig::default()).unwrap();
        let ck = Checkpoint::from_bytes(&Checkpoint::from_logreg(&lr, meta()).to_bytes().unwrap()).unwrap();
        assert_eq!(ck.to_logreg().unwrap(), lr);
        assert!(ck.to_naive_bayes().is_err());
    }
}
