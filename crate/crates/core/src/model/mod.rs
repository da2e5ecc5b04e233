//! The hybrid classifier: a post-norm transformer encoder over subword ids,
//! a multi-width character CNN, additive attention pooling over encoder
//! states, and a concat → dense(GELU) → linear head over three classes.

mod forward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ParamId, ParamStore, Tensor, TensorError};
use crate::text::{Label, CHAR_LEN, SUBWORD_LEN};

pub use forward::{argmax, AttentionRecord, ForwardOutput};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("attention mask has no real token")]
    EmptyMask,
    #[error("{what} index {index} out of range (must be < {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("input length {got} does not match configured {what} length {expected}")]
    InputLength {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture hyperparameters. Sizes the source method leaves open are
/// desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridModelConfig {
    pub vocab_size: usize,
    pub char_vocab_size: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    pub ff_dim: usize,
    pub char_embed_dim: usize,
    pub cnn_filter_widths: Vec<usize>,
    pub cnn_filters_per_width: usize,
    pub fusion_dim: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub max_subword_len: usize,
    pub max_char_len: usize,
    pub layer_norm_eps: f64,
}

impl HybridModelConfig {
    pub fn new(vocab_size: usize, char_vocab_size: usize) -> Self {
        Self {
            vocab_size,
            char_vocab_size,
            hidden_dim: 128,
            encoder_layers: 2,
            attention_heads: 4,
            ff_dim: 256,
            char_embed_dim: 32,
            cnn_filter_widths: vec![3, 4, 5],
            cnn_filters_per_width: 64,
            fusion_dim: 128,
            num_classes: Label::COUNT,
            dropout_rate: 0.1,
            max_subword_len: SUBWORD_LEN,
            max_char_len: CHAR_LEN,
            layer_norm_eps: 1e-5,
        }
    }

    /// The small configuration used for end-to-end gradient checks.
    pub fn tiny(vocab_size: usize, char_vocab_size: usize) -> Self {
        Self {
            hidden_dim: 8,
            encoder_layers: 1,
            attention_heads: 1,
            ff_dim: 16,
            char_embed_dim: 4,
            cnn_filter_widths: vec![2],
            cnn_filters_per_width: 4,
            fusion_dim: 8,
            dropout_rate: 0.0,
            max_subword_len: 8,
            max_char_len: 16,
            ..Self::new(vocab_size, char_vocab_size)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.attention_heads
    }

    pub fn cnn_features(&self) -> usize {
        self.cnn_filter_widths.len() * self.cnn_filters_per_width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        let positive = [
            ("vocab_size", self.vocab_size),
            ("char_vocab_size", self.char_vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("encoder_layers", self.encoder_layers),
            ("attention_heads", self.attention_heads),
            ("ff_dim", self.ff_dim),
            ("char_embed_dim", self.char_embed_dim),
            ("cnn_filters_per_width", self.cnn_filters_per_width),
            ("fusion_dim", self.fusion_dim),
            ("max_subword_len", self.max_subword_len),
            ("max_char_len", self.max_char_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.hidden_dim < 2 {
            return bad("hidden_dim must be at least 2 for layer norm".into());
        }
        if !self.hidden_dim.is_multiple_of(self.attention_heads) {
            return bad(format!(
                "hidden_dim {} is not divisible by attention_heads {}",
                self.hidden_dim, self.attention_heads
            ));
        }
        if self.num_classes != Label::COUNT {
            return bad(format!("num_classes must be {}, got {}", Label::COUNT, self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.max_subword_len < 2 {
            return bad("max_subword_len must hold at least CLS and SEP".into());
        }
        if self.cnn_filter_widths.is_empty() {
            return bad("cnn_filter_widths must not be empty".into());
        }
        for &w in &self.cnn_filter_widths {
            if w == 0 || w > self.max_char_len {
                return bad(format!(
                    "filter width {w} must be in 1..={}",
                    self.max_char_len
                ));
            }
        }
        if !self.layer_norm_eps.is_finite() || self.layer_norm_eps <= 0.0 {
            return bad("layer_norm_eps must be > 0".into());
        }
        Ok(())
    }
}

/// Parameter ids for one encoder layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

/// Resolved parameter ids, so the forward pass never looks names up.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub emb_ln_gamma: ParamId,
    pub emb_ln_beta: ParamId,
    pub layers: Vec<LayerIds>,
    pub char_emb: ParamId,
    pub convs: Vec<(usize, ParamId, ParamId)>,
    pub pool_w: ParamId,
    pub pool_b: ParamId,
    pub pool_v: ParamId,
    pub fusion_w: ParamId,
    pub fusion_b: ParamId,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

/// Every parameter's name, shape and initializer, in store order.
fn param_specs(c: &HybridModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let h = c.hidden_dim;
    let glorot = |fan_in, fan_out| Init::Glorot { fan_in, fan_out };
    let mut specs = vec![
        ("enc.tok_emb".to_string(), vec![c.vocab_size, h], glorot(c.vocab_size, h)),
        ("enc.pos_emb".into(), vec![c.max_subword_len, h], glorot(c.max_subword_len, h)),
        ("enc.emb_ln.gamma".into(), vec![h], Init::Ones),
        ("enc.emb_ln.beta".into(), vec![h], Init::Zeros),
    ];
    for l in 0..c.encoder_layers {
        let p = |s: &str| format!("enc.layer{l}.{s}");
        for proj in ["q", "k", "v", "o"] {
            specs.push((p(&format!("attn.w{proj}")), vec![h, h], glorot(h, h)));
            specs.push((p(&format!("attn.b{proj}")), vec![h], Init::Zeros));
        }
        specs.push((p("ln1.gamma"), vec![h], Init::Ones));
        specs.push((p("ln1.beta"), vec![h], Init::Zeros));
        specs.push((p("ff.w1"), vec![h, c.ff_dim], glorot(h, c.ff_dim)));
        specs.push((p("ff.b1"), vec![c.ff_dim], Init::Zeros));
        specs.push((p("ff.w2"), vec![c.ff_dim, h], glorot(c.ff_dim, h)));
        specs.push((p("ff.b2"), vec![h], Init::Zeros));
        specs.push((p("ln2.gamma"), vec![h], Init::Ones));
        specs.push((p("ln2.beta"), vec![h], Init::Zeros));
    }
    let e = c.char_embed_dim;
    specs.push(("char.emb".into(), vec![c.char_vocab_size, e], glorot(c.char_vocab_size, e)));
    let f = c.cnn_filters_per_width;
    for (i, &w) in c.cnn_filter_widths.iter().enumerate() {
        specs.push((format!("char.conv{i}.filters"), vec![f, w, e], glorot(w * e, w * f)));
        specs.push((format!("char.conv{i}.bias"), vec![f], Init::Zeros));
    }
    specs.push(("pool.w".into(), vec![h, h], glorot(h, h)));
    specs.push(("pool.b".into(), vec![h], Init::Zeros));
    specs.push(("pool.v".into(), vec![h], glorot(h, 1)));
    let feat = h + c.cnn_features();
    specs.push(("fusion.w".into(), vec![feat, c.fusion_dim], glorot(feat, c.fusion_dim)));
    specs.push(("fusion.b".into(), vec![c.fusion_dim], Init::Zeros));
    specs.push(("cls.w".into(), vec![c.fusion_dim, c.num_classes], glorot(c.fusion_dim, c.num_classes)));
    specs.push(("cls.b".into(), vec![c.num_classes], Init::Zeros));
    specs
}

/// Configuration plus trained (or freshly initialized) parameters.
#[derive(Debug, Clone)]
pub struct HybridModel {
    config: HybridModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl HybridModel {
    /// Glorot-uniform weights, zero biases and betas, unit gammas.
    /// Deterministic in `seed`.
    pub fn init(config: HybridModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in param_specs(&config) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
                }
            };
            params.add(name, Tensor::new(shape, data)?)?;
        }
        Self::from_parts(config, params)
    }

    /// Wraps an existing parameter store, checking every expected name and
    /// shape.
    pub fn from_parts(config: HybridModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        for (name, shape, _) in param_specs(&config) {
            let p = params.by_name(&name)?;
            if p.value.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name,
                    got: p.value.shape().to_vec(),
                    expected: shape,
                });
            }
        }
        let layout = Self::resolve(&config, &params)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    fn resolve(c: &HybridModelConfig, s: &ParamStore) -> Result<Layout> {
        let id = |n: &str| s.id(n);
        let mut layers = Vec::with_capacity(c.encoder_layers);
        for l in 0..c.encoder_layers {
            let p = |n: &str| s.id(&format!("enc.layer{l}.{n}"));
            layers.push(LayerIds {
                wq: p("attn.wq")?,
                bq: p("attn.bq")?,
                wk: p("attn.wk")?,
                bk: p("attn.bk")?,
                wv: p("attn.wv")?,
                bv: p("attn.bv")?,
                wo: p("attn.wo")?,
                bo: p("attn.bo")?,
                ln1_gamma: p("ln1.gamma")?,
                ln1_beta: p("ln1.beta")?,
                ff_w1: p("ff.w1")?,
                ff_b1: p("ff.b1")?,
                ff_w2: p("ff.w2")?,
                ff_b2: p("ff.b2")?,
                ln2_gamma: p("ln2.gamma")?,
                ln2_beta: p("ln2.beta")?,
            });
        }
        let mut convs = Vec::new();
        for (i, &w) in c.cnn_filter_widths.iter().enumerate() {
            convs.push((
                w,
                id(&format!("char.conv{i}.filters"))?,
                id(&format!("char.conv{i}.bias"))?,
            ));
        }
        Ok(Layout {
            tok_emb: id("enc.tok_emb")?,
            pos_emb: id("enc.pos_emb")?,
            emb_ln_gamma: id("enc.emb_ln.gamma")?,
            emb_ln_beta: id("enc.emb_ln.beta")?,
            layers,
            char_emb: id("char.emb")?,
            convs,
            pool_w: id("pool.w")?,
            pool_b: id("pool.b")?,
            pool_v: id("pool.v")?,
            fusion_w: id("fusion.w")?,
            fusion_b: id("fusion.b")?,
            cls_w: id("cls.w")?,
            cls_b: id("cls.b")?,
        })
    }

    pub fn config(&self) -> &HybridModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let c = HybridModelConfig::new(50, 20);
        let a = HybridModel::init(c.clone(), 9).unwrap();
        let b = HybridModel::init(c.clone(), 9).unwrap();
        assert_eq!(a.params(), b.params());
        let d = HybridModel::init(c, 10).unwrap();
        assert_ne!(a.params(), d.params());
    }

    #[test]
    fn default_shapes_and_init_values() {
        let m = HybridModel::init(HybridModelConfig::new(50, 20), 1).unwrap();
        let p = m.params();
        assert_eq!(p.by_name("cls.w").unwrap().value.shape(), &[128, 3]);
        assert_eq!(p.by_name("fusion.w").unwrap().value.shape(), &[128 + 192, 128]);
        assert_eq!(p.by_name("char.conv2.filters").unwrap().value.shape(), &[64, 5, 32]);
        for param in p.iter() {
            if param.name.ends_with("gamma") {
                assert!(param.value.data().iter().all(|&v| v == 1.0));
            }
            let last = param.name.rsplit('.').next().unwrap();
            if last.starts_with('b') {
                assert!(param.value.data().iter().all(|&v| v == 0.0), "{}", param.name);
            }
        }
        let limit = (6.0f64 / (128.0 + 3.0)).sqrt();
        assert!(p.by_name("cls.w").unwrap().value.data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = HybridModelConfig::new(10, 10);
        let mut c = base.clone();
        c.attention_heads = 3;
        assert!(matches!(HybridModel::init(c, 0), Err(ModelError::InvalidConfig(m)) if m.contains("divisible")));
        let mut c = base.clone();
        c.num_classes = 4;
        assert!(HybridModel::init(c, 0).is_err());
        let mut c = base.clone();
        c.ff_dim = 0;
        assert!(HybridModel::init(c, 0).is_err());
        let mut c = base;
        c.cnn_filter_widths = vec![300];
        assert!(HybridModel::init(c, 0).is_err());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let c = HybridModelConfig::tiny(10, 6);
        let m = HybridModel::init(c.clone(), 0).unwrap();
        let mut other = c.clone();
        other.vocab_size = 11;
        assert!(matches!(
            HybridModel::from_parts(other, m.into_params()),
            Err(ModelError::ParamShape { .. })
        ));
    }
}
