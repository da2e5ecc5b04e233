//! Forward kernels. Each function validates shapes and returns a fresh tensor.

use super::{Result, Tensor, TensorError};

fn require_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::Invalid(format!(
            "{op} expects a rank-{rank} tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_rank("matmul", a, 2)?;
    require_rank("matmul", b, 2)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// `out[m×n] += a[m×k] · b[k×n]` on raw slices.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_rank("matmul_bt", a, 2)?;
    require_rank("matmul_bt", b, 2)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (n, k2) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_bt",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_bt_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

pub(crate) fn matmul_bt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`.
pub(crate) fn matmul_at_into(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn check_mask(logits: &Tensor, mask: &Tensor) -> Result<()> {
    let cols = logits.cols();
    if mask.len() != cols && mask.len() != logits.len() {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_masked",
            left: logits.shape().to_vec(),
            right: mask.shape().to_vec(),
        });
    }
    if let Some(bad) = mask.data().iter().find(|&&m| m != 0.0 && m != 1.0) {
        return Err(TensorError::Invalid(format!(
            "softmax mask entries must be 0 or 1, found {bad}"
        )));
    }
    Ok(())
}

/// Row-wise softmax over the last axis restricted to positions where `mask`
/// is 1. Masked positions come out as exactly 0. `mask` is either one row
/// (broadcast to every row) or the full shape of `logits`.
pub fn softmax_masked(logits: &Tensor, mask: &Tensor) -> Result<Tensor> {
    check_mask(logits, mask)?;
    let cols = logits.cols();
    let broadcast = mask.len() == cols;
    let mut out = vec![0.0; logits.len()];
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let m = if broadcast {
            mask.data()
        } else {
            &mask.data()[r * cols..(r + 1) * cols]
        };
        let max = row
            .iter()
            .zip(m)
            .filter(|(_, &k)| k == 1.0)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(TensorError::AllMasked { row: r });
        }
        let o = &mut out[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for ((o, &v), &k) in o.iter_mut().zip(row).zip(m) {
            if k == 1.0 {
                *o = (v - max).exp();
                sum += *o;
            }
        }
        for v in o.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Plain softmax over the last axis.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    softmax_masked(logits, &Tensor::full(&[logits.cols()], 1.0))
}

/// Intermediate values a layer-norm backward pass needs.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Normalizes each row of `x` to zero mean and unit variance, then applies
/// `gamma * x̂ + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_cache(x, gamma, beta, eps).map(|(out, _)| out)
}

pub fn layer_norm_with_cache(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let h = x.cols();
    if h < 2 {
        return Err(TensorError::Invalid(format!(
            "layer_norm needs at least 2 features, got {h}"
        )));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(TensorError::Invalid(format!("layer_norm eps must be > 0, got {eps}")));
    }
    for (t, name) in [(gamma, "gamma"), (beta, "beta")] {
        if t.len() != h {
            return Err(TensorError::ShapeMismatch {
                op: if name == "gamma" { "layer_norm(gamma)" } else { "layer_norm(beta)" },
                left: x.shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
    }
    let rows = x.rows();
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..h {
            let n = (row[j] - mean) * is;
            xhat[r * h + j] = n;
            out[r * h + j] = gamma.data()[j] * n + beta.data()[j];
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        LayerNormCache {
            normalized: Tensor::new(shape, xhat)?,
            inv_std,
        },
    ))
}

/// Valid 1-D convolution: `out[t,f] = bias[f] + Σ_{i<w, e<E} x[t+i,e]·filters[f,i,e]`.
pub fn conv1d(x: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor> {
    require_rank("conv1d", x, 2)?;
    require_rank("conv1d(filters)", filters, 3)?;
    let (t, e) = (x.shape()[0], x.shape()[1]);
    let (f, w, e2) = (filters.shape()[0], filters.shape()[1], filters.shape()[2]);
    if e != e2 || bias.len() != f {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            left: x.shape().to_vec(),
            right: filters.shape().to_vec(),
        });
    }
    if t < w {
        return Err(TensorError::InputTooShort { len: t, width: w });
    }
    let steps = t - w + 1;
    let span = w * e;
    let mut out = vec![0.0; steps * f];
    for s in 0..steps {
        // A window of w consecutive rows is contiguous in row-major storage.
        let window = &x.data()[s * e..s * e + span];
        for k in 0..f {
            let filt = &filters.data()[k * span..(k + 1) * span];
            out[s * f + k] =
                bias.data()[k] + window.iter().zip(filt).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Tensor::new(vec![steps, f], out)
}

/// Column-wise maximum over the time axis of `x[T×F]`, with the index of the
/// first maximal row per column.
pub fn max_over_time(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    require_rank("max_over_time", x, 2)?;
    let (t, f) = (x.shape()[0], x.shape()[1]);
    if t == 0 {
        return Err(TensorError::EmptyTime);
    }
    let mut out = x.row(0).to_vec();
    let mut arg = vec![0; f];
    for s in 1..t {
        for (k, &v) in x.row(s).iter().enumerate() {
            if v > out[k] {
                out[k] = v;
                arg[k] = s;
            }
        }
    }
    Ok((Tensor::vector(out), arg))
}

/// Gathers rows of `table[V×E]`.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    require_rank("embedding_lookup", table, 2)?;
    let (v, e) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(ids.len() * e);
    for &id in ids {
        if id >= v {
            return Err(TensorError::OutOfVocab { id, vocab: v });
        }
        out.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), e], out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: x.shape().to_vec(),
        data: x.data().iter().map(|&v| f(v)).collect(),
    }
}
