//! Seeded stratified holdout splits and k-fold partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::text::Label;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Indices of each class, each list shuffled by its own seeded stream.
fn shuffled_by_class(labels: &[Label], seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Label::ALL
        .iter()
        .map(|&c| {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            idx.shuffle(&mut rng);
            idx
        })
        .collect()
}

/// Per-class seeded shuffle, then round-robin assignment to `k` folds. Each
/// class starts where the previous one stopped, so fold sizes differ by at
/// most one overall as well as per class.
pub fn stratified_kfold(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Fold>, TrainError> {
    if k < 2 {
        return Err(TrainError::Config(format!("k must be at least 2, got {k}")));
    }
    let by_class = shuffled_by_class(labels, seed);
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < k {
            return Err(TrainError::ClassTooSmall {
                label: Label::ALL[c],
                count: idx.len(),
                k,
            });
        }
    }
    let mut assignment = vec![0usize; labels.len()];
    let mut cursor = 0;
    for idx in &by_class {
        for &i in idx {
            assignment[i] = cursor % k;
            cursor += 1;
        }
    }
    Ok((0..k)
        .map(|f| Fold {
            train: (0..labels.len()).filter(|&i| assignment[i] != f).collect(),
            val: (0..labels.len()).filter(|&i| assignment[i] == f).collect(),
        })
        .collect())
}

/// Stratified holdout: `round(n_c · train_fraction)` of each class goes to
/// the training side. Both index lists come back sorted.
pub fn stratified_split(labels: &[Label], train_fraction: f64, seed: u64) -> Result<Fold, TrainError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(TrainError::Config(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for idx in shuffled_by_class(labels, seed) {
        let n_train = (idx.len() as f64 * train_fraction).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(Fold { train, val })
}
