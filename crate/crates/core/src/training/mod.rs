//! Loss, optimizer, the mini-batch training loop, evaluation and
//! stratified cross-validation.

mod folds;
mod metrics;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{HybridModel, HybridModelConfig, ModelError};
use crate::text::{EncodedSample, Label};

pub use folds::{stratified_kfold, stratified_split, Fold};
pub use metrics::{f1, macro_average, weighted_average, Averages, ClassMetrics, ConfusionMatrix, EvalReport};
pub use optim::{AdamWConfig, OptimizerState};

/// Probabilities are clamped to this before taking the log.
pub const LOSS_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("class {0} has no sample in the training split")]
    MissingClass(Label),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("class {label} has {count} samples, fewer than k = {k}")]
    ClassTooSmall { label: Label, count: usize, k: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// `−ln max(p[label], 1e-12)`.
pub fn cross_entropy(probs: &[f64], label: Label) -> f64 {
    -probs[label.index()].max(LOSS_FLOOR).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        Self {
            epochs: 3,
            batch_size: 16,
            seed: 0,
            learning_rate: opt.learning_rate,
            weight_decay: opt.weight_decay,
            train_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train fraction must be in (0, 1), got {}", self.train_fraction));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Mean training loss (dropout active) and end-of-epoch validation loss,
/// one entry per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl EpochTrace {
    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }
}

/// Result of a holdout training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: EpochTrace,
    pub split: Fold,
}

/// Stratified holdout split by `config.train_fraction`, then
/// [`train_with_validation`] on the two sides.
pub fn train(model: &mut HybridModel, dataset: &[EncodedSample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let labels: Vec<Label> = dataset.iter().map(|s| s.label).collect();
    let split = stratified_split(&labels, config.train_fraction, config.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
    let trace = train_with_validation(model, &pick(&split.train), &pick(&split.val), config)?;
    Ok(TrainOutcome { trace, split })
}

/// Epoch loop: seeded reshuffle, mini-batches whose gradients are averaged
/// over the batch, one AdamW step per batch. The validation loss is the mean
/// evaluation-mode loss over `val` after each epoch.
pub fn train_with_validation(
    model: &mut HybridModel,
    train_set: &[EncodedSample],
    val: &[EncodedSample],
    config: &TrainConfig,
) -> Result<EpochTrace> {
    config.validate()?;
    if train_set.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for label in Label::ALL {
        if !train_set.iter().any(|s| s.label == label) {
            return Err(TrainError::MissingClass(label));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = OptimizerState::new(config.adamw(), model.params());
    model.params_mut().zero_grads();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace = EpochTrace::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let sample = &train_set[i];
                let (loss, grads) = model.loss_and_grads(&sample.input, sample.label, Some(&mut rng))?;
                total += loss;
                model.params_mut().accumulate(&grads, scale);
            }
            optimizer.adamw_step(model.params_mut())?;
            model.params_mut().zero_grads();
        }
        trace.train_loss.push(total / train_set.len() as f64);
        trace.val_loss.push(mean_loss(model, val)?);
    }
    Ok(trace)
}

/// Mean evaluation-mode cross-entropy.
pub fn mean_loss(model: &HybridModel, dataset: &[EncodedSample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total = 0.0;
    for s in dataset {
        total += model.loss(&s.input, s.label)?;
    }
    Ok(total / dataset.len() as f64)
}

pub fn predict_all(model: &HybridModel, dataset: &[EncodedSample]) -> Result<Vec<Label>> {
    dataset.iter().map(|s| Ok(model.predict(&s.input)?)).collect()
}

pub fn evaluate(model: &HybridModel, dataset: &[EncodedSample]) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let truth: Vec<Label> = dataset.iter().map(|s| s.label).collect();
    Ok(EvalReport::from_predictions(&truth, &predict_all(model, dataset)?))
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub val_indices: Vec<usize>,
    pub trace: EpochTrace,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct CrossValReport {
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
}

impl CrossValReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.report.accuracy).collect()
    }
}

/// k-fold cross-validation. Fold `i` starts from a fresh model seeded with
/// `config.seed + i` and uses its held-out part for both the validation loss
/// and the final report. Folds train on separate threads; results are
/// ordered by fold index.
pub fn cross_validate(
    dataset: &[EncodedSample],
    model_config: &HybridModelConfig,
    config: &TrainConfig,
    k: usize,
) -> Result<CrossValReport> {
    config.validate()?;
    model_config.validate()?;
    let labels: Vec<Label> = dataset.iter().map(|s| s.label).collect();
    let folds = stratified_kfold(&labels, k, config.seed)?;
    let results: Vec<Result<FoldResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = folds
            .into_iter()
            .enumerate()
            .map(|(i, fold)| scope.spawn(move || run_fold(dataset, model_config, config, i, fold)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fold thread panicked"))
            .collect()
    });
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mean_accuracy = folds.iter().map(|f| f.report.accuracy).sum::<f64>() / folds.len() as f64;
    Ok(CrossValReport { folds, mean_accuracy })
}

fn run_fold(
    dataset: &[EncodedSample],
    model_config: &HybridModelConfig,
    config: &TrainConfig,
    index: usize,
    fold: Fold,
) -> Result<FoldResult> {
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
    let (train_set, val) = (pick(&fold.train), pick(&fold.val));
    let fold_config = TrainConfig {
        seed: config.seed.wrapping_add(index as u64),
        ..*config
    };
    let mut model = HybridModel::init(model_config.clone(), fold_config.seed)?;
    let trace = train_with_validation(&mut model, &train_set, &val, &fold_config)?;
    Ok(FoldResult {
        fold: index,
        val_indices: fold.val,
        trace,
        report: evaluate(&model, &val)?,
    })
}
