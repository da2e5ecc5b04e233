//! Forward pass of the hybrid model, recorded on a [`Tape`].
//!
//! The encoder runs on the unmasked prefix of the subword sequence only.
//! Masked keys receive exactly zero attention weight and every other
//! operation is row-wise, so the states at real positions are identical to
//! those of a full-length pass; padded rows of the returned state matrix are
//! zero. Likewise the character CNN stops one all-PAD window past the text:
//! every later window is an identical all-PAD window, which can neither raise
//! the max nor move the first argmax.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{HybridModel, ModelError, Result};
use crate::tensor::{grad_check, GradCheckReport, Grads, Tape, Tensor, TensorError, Var};
use crate::text::{EncodedInput, Label, SubwordVocab, CHAR_PAD_ID};

/// Attention weights of one encoder head over the unmasked tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    /// `T'×T'`, row = query token, column = key token.
    pub weights: Tensor,
    pub token_ids: Vec<usize>,
    /// Filled by [`HybridModel::export_attention_map`].
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub probs: Tensor,
    /// Attention-pool weights over all `max_subword_len` positions.
    pub pool_weights: Tensor,
    pub attention: Option<Vec<AttentionRecord>>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct Recorded {
    pub logits: Var,
    pub probs: Var,
    pub pool_weights: Var,
    pub records: Vec<AttentionRecord>,
}

fn dropout(tape: &mut Tape<'_>, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let scale = 1.0 / (1.0 - rate);
            let n = tape.value(x).len();
            let keep = (0..n)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
                .collect();
            Ok(tape.dropout(x, keep)?)
        }
        _ => Ok(x),
    }
}

impl HybridModel {
    fn check_input(&self, input: &EncodedInput) -> Result<usize> {
        let c = &self.config;
        if input.subword_ids.len() != c.max_subword_len || input.attention_mask.len() != c.max_subword_len {
            return Err(ModelError::InputLength {
                what: "subword",
                got: input.subword_ids.len(),
                expected: c.max_subword_len,
            });
        }
        if input.char_ids.len() != c.max_char_len {
            return Err(ModelError::InputLength {
                what: "char",
                got: input.char_ids.len(),
                expected: c.max_char_len,
            });
        }
        let real = input.real_len();
        if real == 0 {
            return Err(ModelError::EmptyMask);
        }
        Ok(real)
    }

    /// Records the encoder over the first `real` positions; returns `real×H`
    /// states.
    pub(crate) fn record_encoder(
        &self,
        tape: &mut Tape<'_>,
        ids: &[usize],
        rng: Option<&mut ChaCha8Rng>,
        capture: bool,
        records: &mut Vec<AttentionRecord>,
    ) -> Result<Var> {
        let c = &self.config;
        let lay = &self.layout;
        let t = ids.len();
        let positions: Vec<usize> = (0..t).collect();
        let ones = Tensor::full(&[t], 1.0);
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let tok_table = tape.param(lay.tok_emb);
        let tok = tape.embedding(tok_table, ids)?;
        let pos_table = tape.param(lay.pos_emb);
        let pos = tape.embedding(pos_table, &positions)?;
        let x = tape.add(tok, pos)?;
        let (g, b) = (tape.param(lay.emb_ln_gamma), tape.param(lay.emb_ln_beta));
        let x = tape.layer_norm(x, g, b, c.layer_norm_eps)?;
        let mut x = dropout(tape, x, c.dropout_rate, rng)?;

        for (l, li) in lay.layers.iter().enumerate() {
            let proj = |tape: &mut Tape<'_>, w, b| -> Result<Var> {
                let (w, b) = (tape.param(w), tape.param(b));
                Ok(tape.linear(x, w, b)?)
            };
            let q = proj(tape, li.wq, li.bq)?;
            let k = proj(tape, li.wk, li.bk)?;
            let v = proj(tape, li.wv, li.bv)?;
            let mut heads = Vec::with_capacity(c.attention_heads);
            for h in 0..c.attention_heads {
                let (qh, kh, vh) = if c.attention_heads == 1 {
                    (q, k, v)
                } else {
                    (
                        tape.slice_cols(q, h * dh, dh)?,
                        tape.slice_cols(k, h * dh, dh)?,
                        tape.slice_cols(v, h * dh, dh)?,
                    )
                };
                let scores = tape.matmul_bt(qh, kh)?;
                let scores = tape.scale(scores, scale);
                let attn = tape.softmax_masked(scores, &ones)?;
                if capture {
                    records.push(AttentionRecord {
                        layer: l,
                        head: h,
                        weights: tape.value(attn).clone(),
                        token_ids: ids.to_vec(),
                        tokens: Vec::new(),
                    });
                }
                heads.push(tape.matmul(attn, vh)?);
            }
            let ctx = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_cols(&heads)?
            };
            let (wo, bo) = (tape.param(li.wo), tape.param(li.bo));
            let o = tape.linear(ctx, wo, bo)?;
            let r = tape.add(x, o)?;
            let (g, b) = (tape.param(li.ln1_gamma), tape.param(li.ln1_beta));
            let x1 = tape.layer_norm(r, g, b, c.layer_norm_eps)?;
            let (w1, b1) = (tape.param(li.ff_w1), tape.param(li.ff_b1));
            let f = tape.linear(x1, w1, b1)?;
            let f = tape.gelu(f);
            let (w2, b2) = (tape.param(li.ff_w2), tape.param(li.ff_b2));
            let f = tape.linear(f, w2, b2)?;
            let r = tape.add(x1, f)?;
            let (g, b) = (tape.param(li.ln2_gamma), tape.param(li.ln2_beta));
            x = tape.layer_norm(r, g, b, c.layer_norm_eps)?;
        }
        Ok(x)
    }

    /// Additive attention pooling: `score_t = vᵀ tanh(W·s_t + b)`, weights
    /// are the masked softmax of the scores. Returns `(pooled[1×H], weights[T])`.
    pub(crate) fn record_pool(&self, tape: &mut Tape<'_>, states: Var, mask: &Tensor) -> Result<(Var, Var)> {
        let lay = &self.layout;
        let h = self.config.hidden_dim;
        let t = tape.value(states).rows();
        let (w, b) = (tape.param(lay.pool_w), tape.param(lay.pool_b));
        let u = tape.linear(states, w, b)?;
        let u = tape.tanh(u);
        let v = tape.param(lay.pool_v);
        let v = tape.reshape(v, &[h, 1])?;
        let scores = tape.matmul(u, v)?;
        let scores = tape.reshape(scores, &[t])?;
        let weights = tape.softmax_masked(scores, mask)?;
        let row = tape.reshape(weights, &[1, t])?;
        let pooled = tape.matmul(row, states)?;
        Ok((pooled, weights))
    }

    /// Char CNN over the needed prefix of `char_ids`; returns the pooled
    /// feature vector of length `widths × filters_per_width`.
    pub(crate) fn record_char_cnn(
        &self,
        tape: &mut Tape<'_>,
        char_ids: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let c = &self.config;
        let lay = &self.layout;
        let text_end = char_ids
            .iter()
            .rposition(|&id| id != CHAR_PAD_ID)
            .map_or(0, |p| p + 1);
        let max_w = c.cnn_filter_widths.iter().copied().max().unwrap_or(1);
        let needed = (text_end + max_w).min(char_ids.len());
        let table = tape.param(lay.char_emb);
        let emb = tape.embedding(table, &char_ids[..needed])?;
        let emb = dropout(tape, emb, c.dropout_rate, rng)?;
        let mut pooled = Vec::with_capacity(lay.convs.len());
        for &(_, f, b) in &lay.convs {
            let (f, b) = (tape.param(f), tape.param(b));
            let conv = tape.conv1d(emb, f, b)?;
            let act = tape.relu(conv);
            pooled.push(tape.max_over_time(act)?);
        }
        Ok(tape.concat(&pooled))
    }

    /// Records the full model; `rng` enables dropout (training mode).
    pub(crate) fn record(
        &self,
        tape: &mut Tape<'_>,
        input: &EncodedInput,
        mut rng: Option<&mut ChaCha8Rng>,
        capture: bool,
    ) -> Result<Recorded> {
        let c = &self.config;
        let lay = &self.layout;
        let real = self.check_input(input)?;
        let mut records = Vec::new();
        let states = self.record_encoder(tape, &input.subword_ids[..real], rng.as_deref_mut(), capture, &mut records)?;
        let (pooled, weights) = self.record_pool(tape, states, &Tensor::full(&[real], 1.0))?;
        let cnn = self.record_char_cnn(tape, &input.char_ids, rng.as_deref_mut())?;
        let feat = tape.concat(&[pooled, cnn]);
        let width = c.hidden_dim + c.cnn_features();
        let feat = tape.reshape(feat, &[1, width])?;
        let (w, b) = (tape.param(lay.fusion_w), tape.param(lay.fusion_b));
        let fused = tape.linear(feat, w, b)?;
        let fused = tape.gelu(fused);
        let fused = dropout(tape, fused, c.dropout_rate, rng)?;
        let (w, b) = (tape.param(lay.cls_w), tape.param(lay.cls_b));
        let logits = tape.linear(fused, w, b)?;
        let probs = tape.softmax(logits)?;
        Ok(Recorded {
            logits,
            probs,
            pool_weights: weights,
            records,
        })
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, input: &EncodedInput, capture_attention: bool) -> Result<ForwardOutput> {
        let mut tape = Tape::new(&self.params);
        let rec = self.record(&mut tape, input, None, capture_attention)?;
        let mut pool = tape.value(rec.pool_weights).data().to_vec();
        pool.resize(self.config.max_subword_len, 0.0);
        Ok(ForwardOutput {
            logits: tape.value(rec.logits).reshape(&[self.config.num_classes])?,
            probs: tape.value(rec.probs).reshape(&[self.config.num_classes])?,
            pool_weights: Tensor::vector(pool),
            attention: capture_attention.then_some(rec.records),
        })
    }

    /// Cross-entropy loss of one labelled input and its parameter gradients.
    /// Dropout is active when `rng` is given.
    pub fn loss_and_grads(
        &self,
        input: &EncodedInput,
        label: Label,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Grads)> {
        let mut tape = Tape::new(&self.params);
        let rec = self.record(&mut tape, input, rng, false)?;
        let loss = tape.cross_entropy(rec.probs, &[label.index()])?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((value, grads))
    }

    /// Central finite-difference check of the loss gradient with respect to
    /// every parameter, in evaluation mode.
    pub fn gradient_check(&self, input: &EncodedInput, label: Label, step: f64) -> Result<GradCheckReport> {
        self.check_input(input)?;
        let mut store = self.params.clone();
        let report = grad_check(&mut store, step, |tape| {
            let rec = self.record(tape, input, None, false).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => TensorError::Invalid(other.to_string()),
            })?;
            tape.cross_entropy(rec.probs, &[label.index()])
        })?;
        Ok(report)
    }

    /// Evaluation-mode loss without gradients.
    pub fn loss(&self, input: &EncodedInput, label: Label) -> Result<f64> {
        let out = self.forward(input, false)?;
        Ok(crate::training::cross_entropy(out.probs.data(), label))
    }

    pub fn predict(&self, input: &EncodedInput) -> Result<Label> {
        let out = self.forward(input, false)?;
        Ok(Label::from_index(argmax(out.logits.data())).expect("three logits"))
    }

    /// Encoder states for all `max_subword_len` positions (padded rows are
    /// zero) plus per-head attention records when requested.
    pub fn encoder_forward(
        &self,
        subword_ids: &[usize],
        mask: &[u8],
        capture_attention: bool,
    ) -> Result<(Tensor, Vec<AttentionRecord>)> {
        let real: usize = mask.iter().map(|&m| m as usize).sum();
        if real == 0 {
            return Err(ModelError::EmptyMask);
        }
        let mut tape = Tape::new(&self.params);
        let mut records = Vec::new();
        let states = self.record_encoder(&mut tape, &subword_ids[..real], None, capture_attention, &mut records)?;
        let mut data = tape.value(states).data().to_vec();
        data.resize(subword_ids.len() * self.config.hidden_dim, 0.0);
        Ok((Tensor::new(vec![subword_ids.len(), self.config.hidden_dim], data)?, records))
    }

    /// Pooled vector `[H]` and weights `[T]` for arbitrary states `[T×H]`.
    pub fn attention_pool(&self, states: &Tensor, mask: &[u8]) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new(&self.params);
        let s = tape.leaf(states.clone());
        let mask = Tensor::vector(mask.iter().map(|&m| f64::from(m)).collect());
        let (pooled, weights) = self.record_pool(&mut tape, s, &mask)?;
        let pooled = tape.value(pooled).reshape(&[self.config.hidden_dim])?;
        Ok((pooled, tape.value(weights).clone()))
    }

    pub fn char_cnn_forward(&self, char_ids: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let v = self.record_char_cnn(&mut tape, char_ids, None)?;
        Ok(tape.value(v).clone())
    }

    /// Attention of one (layer, head) restricted to the unmasked tokens,
    /// labelled with token strings for heatmap export.
    pub fn export_attention_map(
        &self,
        input: &EncodedInput,
        vocab: &SubwordVocab,
        layer: usize,
        head: usize,
    ) -> Result<AttentionRecord> {
        if layer >= self.config.encoder_layers {
            return Err(ModelError::OutOfRange {
                what: "layer",
                index: layer,
                limit: self.config.encoder_layers,
            });
        }
        if head >= self.config.attention_heads {
            return Err(ModelError::OutOfRange {
                what: "head",
                index: head,
                limit: self.config.attention_heads,
            });
        }
        self.check_input(input)?;
        let (_, records) = self.encoder_forward(&input.subword_ids, &input.attention_mask, true)?;
        let mut rec = records
            .into_iter()
            .find(|r| r.layer == layer && r.head == head)
            .expect("every layer and head is recorded");
        rec.tokens = rec.token_ids.iter().map(|&id| vocab.token(id).to_string()).collect();
        Ok(rec)
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::model::HybridModelConfig;
    use crate::text::Preprocessor;
    use proptest::prelude::*;
    use rand::SeedableRng;

    type Mat = Vec<Vec<f64>>;

    /// Plain nested-vector reference of the full-length forward pass: every
    /// position is computed and padding is handled only through the mask.
    struct Oracle<'a>(&'a HybridModel);

    impl Oracle<'_> {
        fn p(&self, name: &str) -> &Tensor {
            &self.0.params().by_name(name).unwrap().value
        }

        fn mat(&self, name: &str) -> Mat {
            let t = self.p(name);
            (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
        }

        fn linear(&self, x: &Mat, w: &str, b: &str) -> Mat {
            let (w, b) = (self.mat(w), self.p(b).data().to_vec());
            x.iter()
                .map(|row| {
                    (0..b.len())
                        .map(|j| b[j] + row.iter().zip(&w).map(|(a, wr)| a * wr[j]).sum::<f64>())
                        .collect()
                })
                .collect()
        }

        fn layer_norm(&self, x: &Mat, prefix: &str) -> Mat {
            let g = self.p(&format!("{prefix}.gamma")).data().to_vec();
            let b = self.p(&format!("{prefix}.beta")).data().to_vec();
            let eps = self.0.config().layer_norm_eps;
            x.iter()
                .map(|row| {
                    let n = row.len() as f64;
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    row.iter()
                        .enumerate()
                        .map(|(j, v)| g[j] * (v - mean) / (var + eps).sqrt() + b[j])
                        .collect()
                })
                .collect()
        }

        fn masked_softmax(scores: &[f64], mask: &[u8]) -> Vec<f64> {
            let max = scores
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m == 1)
                .map(|(s, _)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores
                .iter()
                .zip(mask)
                .map(|(s, &m)| if m == 1 { (s - max).exp() } else { 0.0 })
                .collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        }

        fn encoder(&self, ids: &[usize], mask: &[u8]) -> Mat {
            let c = self.0.config();
            let (tok, pos) = (self.mat("enc.tok_emb"), self.mat("enc.pos_emb"));
            let x: Mat = ids
                .iter()
                .enumerate()
                .map(|(t, &id)| tok[id].iter().zip(&pos[t]).map(|(a, b)| a + b).collect())
                .collect();
            let mut x = self.layer_norm(&x, "enc.emb_ln");
            let dh = c.head_dim();
            for l in 0..c.encoder_layers {
                let n = |s: &str| format!("enc.layer{l}.{s}");
                let q = self.linear(&x, &n("attn.wq"), &n("attn.bq"));
                let k = self.linear(&x, &n("attn.wk"), &n("attn.bk"));
                let v = self.linear(&x, &n("attn.wv"), &n("attn.bv"));
                let mut ctx = vec![vec![0.0; c.hidden_dim]; ids.len()];
                for h in 0..c.attention_heads {
                    let cols = h * dh..(h + 1) * dh;
                    for t in 0..ids.len() {
                        let scores: Vec<f64> = (0..ids.len())
                            .map(|s| cols.clone().map(|j| q[t][j] * k[s][j]).sum::<f64>() / (dh as f64).sqrt())
                            .collect();
                        let w = Self::masked_softmax(&scores, mask);
                        for j in cols.clone() {
                            ctx[t][j] = (0..ids.len()).map(|s| w[s] * v[s][j]).sum();
                        }
                    }
                }
                let o = self.linear(&ctx, &n("attn.wo"), &n("attn.bo"));
                let r: Mat = x.iter().zip(&o).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect();
                let x1 = self.layer_norm(&r, &n("ln1"));
                let mut f = self.linear(&x1, &n("ff.w1"), &n("ff.b1"));
                f.iter_mut().flatten().for_each(|v| *v = crate::tensor::ops::gelu(*v));
                let f = self.linear(&f, &n("ff.w2"), &n("ff.b2"));
                let r: Mat = x1.iter().zip(&f).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect();
                x = self.layer_norm(&r, &n("ln2"));
            }
            x
        }

        fn pool(&self, states: &Mat, mask: &[u8]) -> (Vec<f64>, Vec<f64>) {
            let u = self.linear(states, "pool.w", "pool.b");
            let v = self.p("pool.v").data();
            let scores: Vec<f64> = u.iter().map(|r| r.iter().zip(v).map(|(a, b)| a.tanh() * b).sum()).collect();
            let w = Self::masked_softmax(&scores, mask);
            let h = states[0].len();
            let pooled = (0..h).map(|j| (0..states.len()).map(|t| w[t] * states[t][j]).sum()).collect();
            (pooled, w)
        }

        fn char_cnn(&self, char_ids: &[usize]) -> Vec<f64> {
            let c = self.0.config();
            let emb = self.mat("char.emb");
            let x: Mat = char_ids.iter().map(|&id| emb[id].clone()).collect();
            let mut out = Vec::new();
            for (i, &w) in c.cnn_filter_widths.iter().enumerate() {
                let filt = self.p(&format!("char.conv{i}.filters"));
                let bias = self.p(&format!("char.conv{i}.bias")).data();
                for f in 0..c.cnn_filters_per_width {
                    let best = (0..=x.len() - w)
                        .map(|s| {
                            let mut acc = bias[f];
                            for o in 0..w {
                                for e in 0..c.char_embed_dim {
                                    acc += x[s + o][e] * filt.get(&[f, o, e]);
                                }
                            }
                            acc.max(0.0)
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.push(best);
                }
            }
            out
        }

        fn logits(&self, input: &EncodedInput) -> Vec<f64> {
            let states = self.encoder(&input.subword_ids, &input.attention_mask);
            let (mut feat, _) = self.pool(&states, &input.attention_mask);
            feat.extend(self.char_cnn(&input.char_ids));
            let mut fused = self.linear(&vec![feat], "fusion.w", "fusion.b");
            fused[0].iter_mut().for_each(|v| *v = crate::tensor::ops::gelu(*v));
            self.linear(&fused, "cls.w", "cls.b").remove(0)
        }
    }

    fn corpus() -> Vec<String> {
        [
            "your account will be blocked verify now at secure link",
            "big discount offer on all items this week only",
            "are you coming home for dinner tonight",
            "আপনার একাউন্ট বন্ধ হবে এখনই যাচাই করুন",
            "বিশেষ ছাড় অফার শুধু আজ",
            "আমি বাসায় আসছি",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn setup(tiny: bool, seed: u64) -> (Preprocessor, HybridModel) {
        let texts = corpus();
        let (sl, cl) = if tiny { (8, 16) } else { (128, 256) };
        let pre = Preprocessor::fit(&texts, 80, sl, cl).unwrap();
        let cfg = if tiny {
            HybridModelConfig::tiny(pre.subwords.len(), pre.chars.len())
        } else {
            HybridModelConfig::new(pre.subwords.len(), pre.chars.len())
        };
        (pre, HybridModel::init(cfg, seed).unwrap())
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn default_model_matches_full_length_reference() {
        let (pre, model) = setup(false, 3);
        for text in corpus().iter().take(4) {
            let input = pre.encode(text);
            let out = model.forward(&input, false).unwrap();
            let oracle = Oracle(&model).logits(&input);
            assert!(max_diff(out.logits.data(), &oracle) <= 1e-9, "{text}");
        }
    }

    #[test]
    fn char_cnn_prefix_matches_full_length() {
        let (pre, model) = setup(false, 4);
        for text in ["", "a", "ab", "verify now", &"x".repeat(300)] {
            let ids = pre.encode(text).char_ids;
            let got = model.char_cnn_forward(&ids).unwrap();
            assert_eq!(got.data(), Oracle(&model).char_cnn(&ids).as_slice(), "{text:?}");
        }
    }

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let (pre, _) = setup(true, 0);
        for seed in 0..2 {
            let (_, model) = setup(true, seed);
            let input = pre.encode(&corpus()[seed as usize]);
            let report = model.gradient_check(&input, Label::Smish, 1e-5).unwrap();
            assert!(report.max_rel_error <= 1e-4, "{report:?}");
            assert_eq!(report.coordinates, model.params().num_scalars());
        }
    }

    #[test]
    fn probabilities_and_determinism() {
        let (pre, model) = setup(false, 8);
        let input = pre.encode("offer verify home");
        let a = model.forward(&input, false).unwrap();
        let b = model.forward(&input, false).unwrap();
        assert_eq!(a.logits, b.logits);
        assert!((a.probs.data().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(a.probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
        let w = a.pool_weights.data();
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(w[input.real_len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let (pre, mut model) = setup(true, 1);
        let mut cfg = model.config().clone();
        cfg.dropout_rate = 0.5;
        model = HybridModel::from_parts(cfg, model.into_params()).unwrap();
        let input = pre.encode("verify now at secure link");
        let (eval_a, _) = model.loss_and_grads(&input, Label::Normal, None).unwrap();
        let eval_b = model.loss(&input, Label::Normal).unwrap();
        assert!((eval_a - eval_b).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, _) = model.loss_and_grads(&input, Label::Normal, Some(&mut rng)).unwrap();
        assert_ne!(train, eval_a);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[2.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 0.0, 3.0]), 2);
        assert_eq!(argmax(&[0.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn attention_pool_singleton_and_constant_states() {
        let (_, model) = setup(true, 2);
        let h = model.config().hidden_dim;
        let states = Tensor::from_rows(&(0..4).map(|t| (0..h).map(|j| (t * h + j) as f64 * 0.1).collect()).collect::<Vec<_>>());
        let (pooled, w) = model.attention_pool(&states, &[0, 0, 1, 0]).unwrap();
        assert_eq!(pooled.data(), states.row(2));
        assert_eq!(w.data(), &[0.0, 0.0, 1.0, 0.0]);

        let same = Tensor::from_rows(&vec![vec![0.25; h]; 4]);
        let (pooled, w) = model.attention_pool(&same, &[1, 1, 1, 0]).unwrap();
        assert!(pooled.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!((w.data().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(model.attention_pool(&same, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn attention_export_restricts_to_real_tokens() {
        let (pre, model) = setup(false, 5);
        let input = pre.encode("big discount offer");
        let rec = model.export_attention_map(&input, &pre.subwords, 0, 0).unwrap();
        let t = input.real_len();
        assert_eq!(rec.weights.shape(), &[t, t]);
        assert_eq!(rec.tokens.len(), t);
        assert_eq!(rec.tokens[0], "[CLS]");
        for r in 0..t {
            assert!((rec.weights.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        assert!(matches!(
            model.export_attention_map(&input, &pre.subwords, 2, 0),
            Err(ModelError::OutOfRange { what: "layer", .. })
        ));
        assert!(matches!(
            model.export_attention_map(&input, &pre.subwords, 0, 4),
            Err(ModelError::OutOfRange { what: "head", .. })
        ));
    }

    #[test]
    fn input_length_is_checked() {
        let (pre, model) = setup(true, 0);
        let mut input = pre.encode("home");
        input.char_ids.pop();
        assert!(matches!(model.forward(&input, false), Err(ModelError::InputLength { what: "char", .. })));
        let mut input = pre.encode("home");
        input.attention_mask.iter_mut().for_each(|m| *m = 0);
        assert_eq!(model.forward(&input, false).unwrap_err(), ModelError::EmptyMask);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn masked_positions_never_matter(
            text_idx in 0usize..6,
            junk in prop::collection::vec(0usize..1000, 8),
            seed in 0u64..4,
        ) {
            let (pre, model) = setup(true, seed);
            let mut input = pre.encode(&corpus()[text_idx]);
            let base = model.forward(&input, false).unwrap();
            let real = input.real_len();
            for (i, j) in junk.iter().enumerate().skip(real) {
                input.subword_ids[i] = j % model.config().vocab_size;
            }
            let oracle = Oracle(&model).logits(&input);
            prop_assert!(max_diff(base.logits.data(), &oracle) <= 1e-8);
            let shifted = model.forward(&input, false).unwrap();
            prop_assert_eq!(base.logits, shifted.logits);
        }
    }
}
