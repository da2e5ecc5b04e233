//! Dataset files, run configuration, checkpoints, synthetic data, report
//! exports and the `smish` command line.

mod checkpoint;
mod commands;
mod config;
mod dataset;
mod report;
mod synthetic;

use std::path::Path;

use thiserror::Error;

use crate::baselines::{BaselineError, Classifier, LabeledText};
use crate::model::{HybridModel, ModelError};
use crate::text::{clean_text, EncodedSample, Label, Preprocessor, TextError};
use crate::training::TrainError;

pub use checkpoint::{Checkpoint, ModelKind, TrainingMetadata, FORMAT_VERSION, MAGIC};
pub use commands::{
    prepare_holdout, run, train_baselines, train_hybrid, BaselineKind, BaselineRun, Cli, Command, CommonArgs, Holdout,
    HybridRun,
};
pub use config::{BaselineSettings, ModelSettings, Overrides, RunConfig, TrainSettings};
pub use dataset::{dataset_to_csv, load_dataset, parse_dataset, read_lines, ClassCounts, DatasetRecord};
pub use report::{
    attention_csv, confusion_csv, crossval_csv, format_report, loss_curve_csv, prediction_line, report_json,
};
pub use synthetic::{generate_synthetic, DEFAULT_COUNTS, DEFAULT_HARD_FRACTION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("dataset header has no `{0}` column")]
    MissingColumn(String),
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: u64, label: String },
    #[error("malformed quoting at byte {offset}: {reason}")]
    Quoting { offset: u64, reason: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint parameter `{name}` has shape {shape:?} but {count} stored values")]
    ShapeMismatch { name: String, shape: Vec<usize>, count: usize },
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingData(usize),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    ModelKind { expected: ModelKind, found: ModelKind },
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("config: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

impl IoError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for IoError {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(p) => IoError::Csv(format!("line {} (byte {}): {e}", p.line(), p.byte())),
            None => IoError::Csv(e.to_string()),
        }
    }
}

/// Cleaned text of every record, in order.
pub fn cleaned_texts(records: &[DatasetRecord]) -> Vec<String> {
    records.iter().map(|r| clean_text(&r.text)).collect()
}

pub fn labeled_texts(records: &[DatasetRecord]) -> Vec<LabeledText> {
    records
        .iter()
        .map(|r| LabeledText {
            text: clean_text(&r.text),
            label: r.label,
        })
        .collect()
}

pub fn encode_records(pre: &Preprocessor, records: &[DatasetRecord]) -> Vec<EncodedSample> {
    records
        .iter()
        .map(|r| EncodedSample {
            input: pre.encode(&r.text),
            label: r.label,
        })
        .collect()
}

/// A trained hybrid model together with the preprocessing it was fitted
/// with.
#[derive(Debug, Clone)]
pub struct HybridPipeline {
    pub model: HybridModel,
    pub pre: Preprocessor,
}

impl HybridPipeline {
    pub fn probabilities(&self, raw: &str) -> Result<Vec<f64>, ModelError> {
        Ok(self.model.forward(&self.pre.encode(raw), false)?.probs.into_data())
    }
}

impl Classifier for HybridPipeline {
    fn predict_text(&self, text: &str) -> Label {
        self.model
            .predict(&self.pre.encode_cleaned(text))
            .expect("preprocessor output matches the model")
    }
}
