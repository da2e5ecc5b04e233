//! Reverse-mode differentiation by recording operations on a linear tape.
//!
//! A [`Tape`] borrows a [`ParamStore`] immutably while the forward pass is
//! recorded; parameter values are never copied onto the tape. `backward`
//! returns parameter gradients as a [`Grads`] value that the caller folds into
//! the store with [`ParamStore::accumulate`].

use super::ops::{self, LayerNormCache};
use super::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: LayerNormCache,
    },
    Conv1d {
        x: Var,
        filters: Var,
        bias: Var,
    },
    MaxOverTime {
        x: Var,
        argmax: Vec<usize>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Concat(Vec<Var>),
    Reshape(Var),
    Dropout {
        x: Var,
        keep: Vec<f64>,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    SumAll(Var),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'g mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.params.get(*id).value,
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul_bt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.len() != xv.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let n = bv.len();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv.data()[i % n])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// `x · w + b` for `x[T×in]`, `w[in×out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = ops::map(self.value(x), |v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = ops::map(self.value(x), ops::gelu);
        self.push(out, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::map(self.value(x), |v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = ops::map(self.value(x), f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn softmax_masked(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let out = ops::softmax_masked(self.value(x), mask)?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (out, cache) =
            ops::layer_norm_with_cache(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
        ))
    }

    pub fn conv1d(&mut self, x: Var, filters: Var, bias: Var) -> Result<Var> {
        let out = ops::conv1d(self.value(x), self.value(filters), self.value(bias))?;
        Ok(self.push(out, Op::Conv1d { x, filters, bias }))
    }

    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = ops::max_over_time(self.value(x))?;
        Ok(self.push(out, Op::MaxOverTime { x, argmax }))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let out = ops::embedding_lookup(self.value(table), ids)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Columns `start..start+len` of a 2-D value.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start + len > xv.cols() {
            return Err(TensorError::Invalid(format!(
                "slice_cols {start}..{} out of range for shape {:?}",
                start + len,
                xv.shape()
            )));
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// Concatenates 2-D values with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Flattens and concatenates values into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|&p| self.value(p).data().iter().copied())
            .collect();
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Inverted dropout with a precomputed keep mask (entries 0 or 1/(1-p)).
    pub fn dropout(&mut self, x: Var, keep: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if keep.len() != xv.len() {
            return Err(TensorError::DataLength {
                op: "dropout",
                shape: xv.shape().to_vec(),
                len: keep.len(),
            });
        }
        let data = xv.data().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { x, keep }))
    }

    /// Mean over rows of `-ln(max(p[r, label_r], PROB_FLOOR))`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let p = self.value(probs);
        if p.rows() != labels.len() {
            return Err(TensorError::Invalid(format!(
                "cross_entropy: {} label(s) for {} row(s)",
                labels.len(),
                p.rows()
            )));
        }
        let c = p.cols();
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(TensorError::OutOfVocab { id: y, vocab: c });
            }
            total -= p.row(r)[y].max(PROB_FLOOR).ln();
        }
        let loss = total / labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Back-propagates from a single-element `loss` and returns gradients for
    /// every parameter that influenced it.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut out = Grads {
            slots: (0..self.params.len()).map(|_| None).collect(),
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let gd = g.data();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match &mut out.slots[id.0] {
                    Some(acc) => acc.add_assign_scaled(&g, 1.0),
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    ops::matmul_bt_into(gd, bv.data(), slot(&mut grads, *a, av.shape()), m, n, k);
                    ops::matmul_at_into(av.data(), gd, slot(&mut grads, *b, bv.shape()), m, k, n);
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                    ops::matmul_into(gd, bv.data(), slot(&mut grads, *a, av.shape()), m, n, k);
                    ops::matmul_at_into(gd, av.data(), slot(&mut grads, *b, bv.shape()), m, n, k);
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let s = slot(&mut grads, *v, g.shape());
                        s.iter_mut().zip(gd).for_each(|(d, x)| *d += x);
                    }
                }
                Op::AddBias(x, b) => {
                    let s = slot(&mut grads, *x, g.shape());
                    s.iter_mut().zip(gd).for_each(|(d, x)| *d += x);
                    let bv = self.value(*b);
                    let n = bv.len();
                    let s = slot(&mut grads, *b, bv.shape());
                    for (j, x) in gd.iter().enumerate() {
                        s[j % n] += x;
                    }
                }
                Op::Scale(x, k) => {
                    let s = slot(&mut grads, *x, g.shape());
                    s.iter_mut().zip(gd).for_each(|(d, x)| *d += k * x);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let s = slot(&mut grads, *x, g.shape());
                    for ((d, gv), xv) in s.iter_mut().zip(gd).zip(xv.data()) {
                        *d += gv * ops::gelu_grad(*xv);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let s = slot(&mut grads, *x, g.shape());
                    for ((d, gv), xv) in s.iter_mut().zip(gd).zip(xv.data()) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().expect("tanh output");
                    let s = slot(&mut grads, *x, g.shape());
                    for ((d, gv), yv) in s.iter_mut().zip(gd).zip(y.data()) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().expect("softmax output");
                    let c = y.cols();
                    let s = slot(&mut grads, *x, g.shape());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &gd[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            s[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let gv = self.value(*gamma);
                    let h = gv.len();
                    let xhat = cache.normalized.data();
                    let rows = cache.inv_std.len();
                    let mut dgamma = vec![0.0; h];
                    let mut dbeta = vec![0.0; h];
                    let mut dx = vec![0.0; rows * h];
                    let mut dxhat = vec![0.0; h];
                    for r in 0..rows {
                        let gr = &gd[r * h..(r + 1) * h];
                        let xr = &xhat[r * h..(r + 1) * h];
                        let mut sum = 0.0;
                        let mut sum_x = 0.0;
                        for j in 0..h {
                            dgamma[j] += gr[j] * xr[j];
                            dbeta[j] += gr[j];
                            dxhat[j] = gr[j] * gv.data()[j];
                            sum += dxhat[j];
                            sum_x += dxhat[j] * xr[j];
                        }
                        let k = cache.inv_std[r] / h as f64;
                        for j in 0..h {
                            dx[r * h + j] = k * (h as f64 * dxhat[j] - sum - xr[j] * sum_x);
                        }
                    }
                    let s = slot(&mut grads, *x, g.shape());
                    s.iter_mut().zip(&dx).for_each(|(d, v)| *d += v);
                    let s = slot(&mut grads, *gamma, gv.shape());
                    s.iter_mut().zip(&dgamma).for_each(|(d, v)| *d += v);
                    let bshape = self.value(*beta).shape().to_vec();
                    let s = slot(&mut grads, *beta, &bshape);
                    s.iter_mut().zip(&dbeta).for_each(|(d, v)| *d += v);
                }
                Op::Conv1d { x, filters, bias } => {
                    let (xv, fv) = (self.value(*x), self.value(*filters));
                    let e = xv.shape()[1];
                    let (nf, w) = (fv.shape()[0], fv.shape()[1]);
                    let span = w * e;
                    let steps = g.shape()[0];
                    let mut dx = vec![0.0; xv.len()];
                    let mut df = vec![0.0; fv.len()];
                    let mut db = vec![0.0; nf];
                    for st in 0..steps {
                        let window = &xv.data()[st * e..st * e + span];
                        let dwin = &mut dx[st * e..st * e + span];
                        for k in 0..nf {
                            let gk = gd[st * nf + k];
                            if gk == 0.0 {
                                continue;
                            }
                            db[k] += gk;
                            let filt = &fv.data()[k * span..(k + 1) * span];
                            let dfilt = &mut df[k * span..(k + 1) * span];
                            for i in 0..span {
                                dfilt[i] += gk * window[i];
                                dwin[i] += gk * filt[i];
                            }
                        }
                    }
                    let s = slot(&mut grads, *x, xv.shape());
                    s.iter_mut().zip(&dx).for_each(|(d, v)| *d += v);
                    let s = slot(&mut grads, *filters, fv.shape());
                    s.iter_mut().zip(&df).for_each(|(d, v)| *d += v);
                    let bshape = self.value(*bias).shape().to_vec();
                    let s = slot(&mut grads, *bias, &bshape);
                    s.iter_mut().zip(&db).for_each(|(d, v)| *d += v);
                }
                Op::MaxOverTime { x, argmax } => {
                    let xv = self.value(*x);
                    let f = xv.cols();
                    let s = slot(&mut grads, *x, xv.shape());
                    for (k, &t) in argmax.iter().enumerate() {
                        s[t * f + k] += gd[k];
                    }
                }
                Op::Embedding { table, ids } => {
                    let tv = self.value(*table);
                    let e = tv.cols();
                    let s = slot(&mut grads, *table, tv.shape());
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..e {
                            s[id * e + j] += gd[i * e + j];
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let (c, len) = (xv.cols(), g.cols());
                    let s = slot(&mut grads, *x, xv.shape());
                    for r in 0..g.rows() {
                        for j in 0..len {
                            s[r * c + start + j] += gd[r * len + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let c = pv.cols();
                        let s = slot(&mut grads, *p, pv.shape());
                        for r in 0..pv.rows() {
                            for j in 0..c {
                                s[r * c + j] += gd[r * total + offset + j];
                            }
                        }
                        offset += c;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let n = pv.len();
                        let s = slot(&mut grads, *p, pv.shape());
                        s.iter_mut()
                            .zip(&gd[offset..offset + n])
                            .for_each(|(d, v)| *d += v);
                        offset += n;
                    }
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let s = slot(&mut grads, *x, &shape);
                    s.iter_mut().zip(gd).for_each(|(d, v)| *d += v);
                }
                Op::Dropout { x, keep } => {
                    let s = slot(&mut grads, *x, g.shape());
                    for ((d, gv), k) in s.iter_mut().zip(gd).zip(keep) {
                        *d += gv * k;
                    }
                }
                Op::CrossEntropy { probs, labels } => {
                    let pv = self.value(*probs);
                    let c = pv.cols();
                    let n = labels.len() as f64;
                    let s = slot(&mut grads, *probs, pv.shape());
                    for (r, &y) in labels.iter().enumerate() {
                        let p = pv.row(r)[y];
                        if p > PROB_FLOOR {
                            s[r * c + y] -= gd[0] / (n * p);
                        }
                    }
                }
                Op::SumAll(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let s = slot(&mut grads, *x, &shape);
                    s.iter_mut().for_each(|d| *d += gd[0]);
                }
            }
        }
        Ok(out)
    }
}
