//! Central finite-difference verification of tape gradients.

use super::{ParamId, ParamStore, Result, Tape, TensorError, Var};

/// Default perturbation for central differences at 64-bit precision.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over checked coordinates of
    /// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub per_param: Vec<(String, f64)>,
    pub coordinates: usize,
}

fn eval_loss<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let loss = f(&mut tape)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(TensorError::Invalid(format!(
            "grad_check needs a scalar loss, got shape {:?}",
            v.shape()
        )));
    }
    let v = v.data()[0];
    if !v.is_finite() {
        return Err(TensorError::NonFinite {
            context: "grad_check loss".into(),
            value: v,
        });
    }
    Ok(v)
}

fn check_ids<F>(store: &mut ParamStore, ids: &[ParamId], h: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>) -> Result<Var>,
{
    if !h.is_finite() || h <= 0.0 {
        return Err(TensorError::Invalid(format!("grad_check step must be > 0, got {h}")));
    }
    eval_loss(store, &f)?;
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        per_param: Vec::new(),
        coordinates: 0,
    };
    for &id in ids {
        let n = store.get(id).value.len();
        let name = store.get(id).name.clone();
        let mut worst = 0.0f64;
        for i in 0..n {
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = eval_loss(store, &f);
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = eval_loss(store, &f);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if rel > worst {
                worst = rel;
            }
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
            report.coordinates += 1;
        }
        report.per_param.push((name, worst));
    }
    Ok(report)
}

/// Checks every parameter in `store` against central differences of the
/// scalar loss built by `f`.
pub fn grad_check<F>(store: &mut ParamStore, h: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>) -> Result<Var>,
{
    let ids: Vec<ParamId> = (0..store.len()).map(ParamId).collect();
    check_ids(store, &ids, h, f)
}

/// Checks a single named parameter.
pub fn grad_check_param<F>(
    store: &mut ParamStore,
    name: &str,
    h: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>) -> Result<Var>,
{
    let id = store.id(name)?;
    check_ids(store, &[id], h, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_function_has_zero_error() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::vector(vec![0.3, -2.0, 5.0])).unwrap();
        let r = grad_check(&mut store, DEFAULT_STEP, |t| {
            let x = t.param_named("x")?;
            Ok(t.sum_all(x))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let r = grad_check(&mut store, DEFAULT_STEP, |t| {
            Ok(t.leaf(Tensor::scalar(4.2)))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-12);
    }

    #[test]
    fn cross_entropy_softmax_within_1e6() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..5 {
            let mut store = ParamStore::new();
            store.add("logits", random(&mut rng, &[3])).unwrap();
            let label = seed % 3;
            let r = grad_check(&mut store, DEFAULT_STEP, move |t| {
                let x = t.param_named("logits")?;
                let p = t.softmax(x)?;
                t.cross_entropy(p, &[label])
            })
            .unwrap();
            assert!(r.max_rel_error <= 1e-6, "{r:?}");
        }
    }

    #[test]
    fn non_finite_loss_is_error() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::vector(vec![1.0])).unwrap();
        let err = grad_check(&mut store, DEFAULT_STEP, |t| Ok(t.leaf(Tensor::scalar(f64::NAN))));
        assert!(matches!(err, Err(TensorError::NonFinite { .. })));
    }

    /// Every differentiable tape op, one seed per case, 20 seeds.
    #[test]
    fn every_op_passes_on_twenty_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut store = ParamStore::new();
            store.add("a", random(&mut rng, &[3, 4])).unwrap();
            store.add("b", random(&mut rng, &[4, 5])).unwrap();
            store.add("c", random(&mut rng, &[2, 4])).unwrap();
            store.add("bias", random(&mut rng, &[5])).unwrap();
            store.add("gamma", random(&mut rng, &[5])).unwrap();
            store.add("beta", random(&mut rng, &[5])).unwrap();
            store.add("seq", random(&mut rng, &[6, 2])).unwrap();
            store.add("filters", random(&mut rng, &[3, 2, 2])).unwrap();
            store.add("fbias", random(&mut rng, &[3])).unwrap();
            store.add("table", random(&mut rng, &[4, 5])).unwrap();
            let keep: Vec<f64> = (0..15).map(|i| if i % 4 == 0 { 0.0 } else { 1.25 }).collect();
            let mask = Tensor::vector(vec![1.0, 1.0, 0.0, 1.0, 1.0]);
            let r = grad_check(&mut store, DEFAULT_STEP, |t| {
                let a = t.param_named("a")?;
                let b = t.param_named("b")?;
                let c = t.param_named("c")?;
                let ab = t.matmul(a, b)?; // 3x5
                let bias = t.param_named("bias")?;
                let ab = t.add_bias(ab, bias)?;
                let g = t.param_named("gamma")?;
                let be = t.param_named("beta")?;
                let ln = t.layer_norm(ab, g, be, 1e-5)?;
                let act = t.gelu(ln);
                let th = t.tanh(act);
                let sm = t.softmax_masked(th, &mask)?;
                let cb = t.matmul_bt(c, a)?; // 2x3
                let cb = t.scale(cb, 0.5);
                let sl = t.slice_cols(sm, 1, 3)?; // 3x3
                let cat = t.concat_cols(&[sl, sm])?; // 3x8
                let dr = t.reshape(sm, &[15])?;
                let dr = t.dropout(dr, keep.clone())?;
                let seq = t.param_named("seq")?;
                let fl = t.param_named("filters")?;
                let fb = t.param_named("fbias")?;
                let conv = t.conv1d(seq, fl, fb)?;
                let conv = t.relu(conv);
                let pooled = t.max_over_time(conv)?;
                let table = t.param_named("table")?;
                let emb = t.embedding(table, &[1, 3, 1])?;
                let emb = t.add(emb, ab)?;
                let parts = [cb, cat, dr, pooled, emb];
                let flat = t.concat(&parts);
                let flat2 = t.reshape(flat, &[1, 2 * 3 + 3 * 8 + 15 + 3 + 15])?;
                let probs = t.softmax(flat2)?;
                let ce = t.cross_entropy(probs, &[7])?;
                let s = t.sum_all(flat);
                let s = t.scale(s, 0.01);
                t.add(ce, s)
            })
            .unwrap();
            assert!(r.max_rel_error <= 1e-4, "seed {seed}: {r:?}");
        }
    }
}
