//! Run configuration read from a TOML file. Every key is optional; missing
//! keys take the defaults below and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::baselines::LogRegConfig;
use crate::model::HybridModelConfig;
use crate::text::{CHAR_LEN, SUBWORD_LEN};
use crate::training::TrainConfig;

/// Architecture settings. Vocabulary sizes come from the fitted data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    pub ff_dim: usize,
    pub char_embed_dim: usize,
    pub cnn_filter_widths: Vec<usize>,
    pub cnn_filters_per_width: usize,
    pub fusion_dim: usize,
    pub dropout_rate: f64,
    pub max_subword_len: usize,
    pub max_char_len: usize,
    pub layer_norm_eps: f64,
    pub subword_vocab_size: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let c = HybridModelConfig::new(0, 0);
        Self {
            hidden_dim: c.hidden_dim,
            encoder_layers: c.encoder_layers,
            attention_heads: c.attention_heads,
            ff_dim: c.ff_dim,
            char_embed_dim: c.char_embed_dim,
            cnn_filter_widths: c.cnn_filter_widths,
            cnn_filters_per_width: c.cnn_filters_per_width,
            fusion_dim: c.fusion_dim,
            dropout_rate: c.dropout_rate,
            max_subword_len: SUBWORD_LEN,
            max_char_len: CHAR_LEN,
            layer_norm_eps: c.layer_norm_eps,
            subword_vocab_size: 1000,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, vocab_size: usize, char_vocab_size: usize) -> HybridModelConfig {
        HybridModelConfig {
            vocab_size,
            char_vocab_size,
            hidden_dim: self.hidden_dim,
            encoder_layers: self.encoder_layers,
            attention_heads: self.attention_heads,
            ff_dim: self.ff_dim,
            char_embed_dim: self.char_embed_dim,
            cnn_filter_widths: self.cnn_filter_widths.clone(),
            cnn_filters_per_width: self.cnn_filters_per_width,
            fusion_dim: self.fusion_dim,
            num_classes: crate::text::Label::COUNT,
            dropout_rate: self.dropout_rate,
            max_subword_len: self.max_subword_len,
            max_char_len: self.max_char_len,
            layer_norm_eps: self.layer_norm_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub train_fraction: f64,
    pub folds: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            train_fraction: t.train_fraction,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub logreg_epochs: usize,
    pub logreg_learning_rate: f64,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        let c = LogRegConfig::default();
        Self {
            logreg_epochs: c.epochs,
            logreg_learning_rate: c.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub baseline: BaselineSettings,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(lr) = o.learning_rate {
            self.train.learning_rate = lr;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if o.out.is_some() {
            self.out.clone_from(&o.out);
        }
        if o.data.is_some() {
            self.data.clone_from(&o.data);
        }
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            train_fraction: self.train.train_fraction,
        }
    }

    pub fn logreg_config(&self) -> LogRegConfig {
        LogRegConfig {
            epochs: self.baseline.logreg_epochs,
            learning_rate: self.baseline.logreg_learning_rate,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}
