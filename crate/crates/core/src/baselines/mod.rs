//! Bag-of-words baselines: multinomial naive Bayes on raw counts and
//! logistic regression on tf-idf features, both scored through the same
//! [`EvalReport`] as the hybrid model.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::argmax;
use crate::tensor::{ParamStore, Tape, Tensor, TensorError};
use crate::text::Label;
use crate::training::EvalReport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("class {0} has no training sample")]
    MissingClass(Label),
    #[error("non-finite loss {value} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, value: f64 },
    #[error("invalid baseline model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// A cleaned message and its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    pub text: String,
    pub label: Label,
}

/// Sparse feature vector: `(token index, value)` pairs in index order.
pub type SparseVec = Vec<(usize, f64)>;

pub const MIN_TOKEN_FREQ: usize = 2;

/// Whitespace-token vocabulary, sorted lexicographically, with smoothed idf.
#[derive(Debug, Clone, PartialEq)]
pub struct BowFeaturizer {
    tokens: Vec<String>,
    idf: Vec<f64>,
    index: HashMap<String, usize>,
}

impl BowFeaturizer {
    pub fn fit<S: AsRef<str>>(texts: &[S]) -> Self {
        Self::fit_with_min_freq(texts, MIN_TOKEN_FREQ)
    }

    /// Keeps tokens whose total count is at least `min_freq`;
    /// `idf = ln((1+N)/(1+df)) + 1`.
    pub fn fit_with_min_freq<S: AsRef<str>>(texts: &[S], min_freq: usize) -> Self {
        let mut freq: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for text in texts {
            let mut seen = std::collections::HashSet::new();
            for tok in text.as_ref().split_whitespace() {
                let e = freq.entry(tok).or_default();
                e.0 += 1;
                if seen.insert(tok) {
                    e.1 += 1;
                }
            }
        }
        let n = texts.len() as f64;
        let (tokens, idf): (Vec<String>, Vec<f64>) = freq
            .into_iter()
            .filter(|(_, (count, _))| *count >= min_freq)
            .map(|(tok, (_, df))| (tok.to_string(), ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0))
            .unzip();
        Self::from_parts(tokens, idf).expect("fitted parts are consistent")
    }

    pub fn from_parts(tokens: Vec<String>, idf: Vec<f64>) -> Result<Self> {
        if tokens.len() != idf.len() {
            return Err(BaselineError::Invalid(format!(
                "{} tokens but {} idf weights",
                tokens.len(),
                idf.len()
            )));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(BaselineError::Invalid("duplicate vocabulary token".into()));
        }
        Ok(Self { tokens, idf, index })
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

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    /// Raw in-vocabulary token counts.
    pub fn counts(&self, text: &str) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in text.split_whitespace() {
            if let Some(&i) = self.index.get(tok) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        counts.into_iter().collect()
    }

    /// tf·idf; out-of-vocabulary tokens are ignored.
    pub fn featurize(&self, text: &str) -> SparseVec {
        self.counts(text).into_iter().map(|(i, c)| (i, c * self.idf[i])).collect()
    }
}

/// Anything that labels a cleaned message.
pub trait Classifier {
    fn predict_text(&self, text: &str) -> Label;
}

pub fn evaluate_baseline(model: &impl Classifier, samples: &[LabeledText]) -> EvalReport {
    let truth: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let pred: Vec<Label> = samples.iter().map(|s| model.predict_text(&s.text)).collect();
    EvalReport::from_predictions(&truth, &pred)
}

fn check_classes(samples: &[LabeledText]) -> Result<()> {
    for label in Label::ALL {
        if !samples.iter().any(|s| s.label == label) {
            return Err(BaselineError::MissingClass(label));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayesModel {
    pub featurizer: BowFeaturizer,
    pub log_prior: [f64; Label::COUNT],
    /// `Label::COUNT` rows of per-token log likelihoods.
    pub log_likelihood: Vec<Vec<f64>>,
}

pub const NB_ALPHA: f64 = 1.0;

pub fn train_naive_bayes(samples: &[LabeledText]) -> Result<NaiveBayesModel> {
    let texts: Vec<&str> = samples.iter().map(|s| s.text.as_str()).collect();
    train_naive_bayes_with(samples, BowFeaturizer::fit(&texts))
}

/// Multinomial naive Bayes with add-α smoothing over `featurizer`'s tokens.
pub fn train_naive_bayes_with(samples: &[LabeledText], featurizer: BowFeaturizer) -> Result<NaiveBayesModel> {
    check_classes(samples)?;
    let v = featurizer.len();
    let mut counts = vec![vec![0.0; v]; Label::COUNT];
    let mut docs = [0usize; Label::COUNT];
    for s in samples {
        docs[s.label.index()] += 1;
        for (i, c) in featurizer.counts(&s.text) {
            counts[s.label.index()][i] += c;
        }
    }
    let n = samples.len() as f64;
    let log_prior = std::array::from_fn(|c| (docs[c] as f64 / n).ln());
    let log_likelihood = counts
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum::<f64>() + NB_ALPHA * v as f64;
            row.iter().map(|&c| ((c + NB_ALPHA) / total).ln()).collect()
        })
        .collect();
    Ok(NaiveBayesModel {
        featurizer,
        log_prior,
        log_likelihood,
    })
}

impl NaiveBayesModel {
    /// Unnormalized log posteriors.
    pub fn log_scores(&self, text: &str) -> [f64; Label::COUNT] {
        let counts = self.featurizer.counts(text);
        std::array::from_fn(|c| {
            self.log_prior[c] + counts.iter().map(|&(i, n)| n * self.log_likelihood[c][i]).sum::<f64>()
        })
    }

    pub fn posterior(&self, text: &str) -> [f64; Label::COUNT] {
        let s = self.log_scores(text);
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = s.map(|v| (v - max).exp());
        let z: f64 = e.iter().sum();
        e.map(|v| v / z)
    }
}

impl Classifier for NaiveBayesModel {
    fn predict_text(&self, text: &str) -> Label {
        Label::from_index(argmax(&self.log_scores(text))).expect("three classes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub featurizer: BowFeaturizer,
    /// `V×3`.
    pub weights: Tensor,
    /// `[3]`.
    pub bias: Tensor,
}

/// Full-batch training losses, one entry per epoch, measured before that
/// epoch's update.
pub type LossTrace = Vec<f64>;

pub fn train_logreg(samples: &[LabeledText], config: &LogRegConfig) -> Result<(LogRegModel, LossTrace)> {
    let texts: Vec<&str> = samples.iter().map(|s| s.text.as_str()).collect();
    train_logreg_with(samples, BowFeaturizer::fit(&texts), config)
}

/// Multinomial logistic regression from zero weights by full-batch gradient
/// descent on mean cross-entropy over tf-idf features.
pub fn train_logreg_with(
    samples: &[LabeledText],
    featurizer: BowFeaturizer,
    config: &LogRegConfig,
) -> Result<(LogRegModel, LossTrace)> {
    check_classes(samples)?;
    let v = featurizer.len();
    let k = Label::COUNT;
    let mut x = Tensor::zeros(&[samples.len(), v]);
    for (r, s) in samples.iter().enumerate() {
        for (i, val) in featurizer.featurize(&s.text) {
            x.data_mut()[r * v + i] = val;
        }
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let mut store = ParamStore::new();
    let w_id = store.add("logreg.w", Tensor::zeros(&[v, k]))?;
    let b_id = store.add("logreg.b", Tensor::zeros(&[k]))?;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grads) = {
            let mut tape = Tape::new(&store);
            let xv = tape.leaf(x.clone());
            let (w, b) = (tape.param(w_id), tape.param(b_id));
            let logits = tape.linear(xv, w, b)?;
            let probs = tape.softmax(logits)?;
            let loss = tape.cross_entropy(probs, &labels)?;
            (tape.value(loss).data()[0], tape.backward(loss)?)
        };
        if !loss.is_finite() {
            return Err(BaselineError::NonFiniteLoss { epoch, value: loss });
        }
        trace.push(loss);
        for (id, g) in grads.iter() {
            store.get_mut(id).value.add_assign_scaled(g, -config.learning_rate);
        }
    }
    let weights = store.get(w_id).value.clone();
    let bias = store.get(b_id).value.clone();
    Ok((
        LogRegModel {
            featurizer,
            weights,
            bias,
        },
        trace,
    ))
}

impl LogRegModel {
    pub fn from_parts(featurizer: BowFeaturizer, weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.shape() != [featurizer.len(), Label::COUNT] || bias.shape() != [Label::COUNT] {
            return Err(BaselineError::Invalid(format!(
                "weights {:?} and bias {:?} do not fit a vocabulary of {}",
                weights.shape(),
                bias.shape(),
                featurizer.len()
            )));
        }
        Ok(Self {
            featurizer,
            weights,
            bias,
        })
    }

    pub fn logits(&self, text: &str) -> [f64; Label::COUNT] {
        let feats = self.featurizer.featurize(text);
        std::array::from_fn(|c| {
            self.bias.data()[c]
                + feats
                    .iter()
                    .map(|&(i, val)| val * self.weights.data()[i * Label::COUNT + c])
                    .sum::<f64>()
        })
    }

    pub fn probabilities(&self, text: &str) -> [f64; Label::COUNT] {
        let l = self.logits(text);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = l.map(|v| (v - max).exp());
        let z: f64 = e.iter().sum();
        e.map(|v| v / z)
    }
}

impl Classifier for LogRegModel {
    fn predict_text(&self, text: &str) -> Label {
        Label::from_index(argmax(&self.logits(text))).expect("three classes")
    }
}

/// Accuracy of always predicting the most frequent class.
pub fn majority_accuracy(labels: &[Label]) -> f64 {
    let mut counts = [0usize; Label::COUNT];
    labels.iter().for_each(|l| counts[l.index()] += 1);
    *counts.iter().max().unwrap_or(&0) as f64 / labels.len().max(1) as f64
}
