use rayon::prelude::*;

use super::Algo;
use crate::data::{sample_block, train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::generate::block_tree_to_dataset;
use crate::seed;
use crate::tree::predict;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasVariance {
    pub bias: f64,
    pub variance: f64,
    pub repetitions: usize,
    pub test_points: usize,
}

#[derive(Debug, Clone)]
pub struct BiasVarianceConfig {
    pub depth: usize,
    pub n: usize,
    pub m: usize,
    pub train_fraction: f64,
}

impl Default for BiasVarianceConfig {
    fn default() -> Self {
        BiasVarianceConfig {
            depth: 2,
            n: crate::data::DEFAULT_N_MAX,
            m: crate::data::DEFAULT_M_MAX,
            train_fraction: crate::data::DEFAULT_TRAIN_FRACTION,
        }
    }
}

/// ℓ2 bias and variance of one-hot predictions. `preds[i][x]` is model
/// `i`'s class for test point `x`.
pub fn bias_variance_of(preds: &[Vec<usize>], truth: &[usize], n_classes: usize) -> Result<BiasVariance> {
    if preds.len() < 2 {
        return Err(Error::validation("bias/variance needs at least two models"));
    }
    if truth.is_empty() {
        return Err(Error::validation("bias/variance needs at least one test point"));
    }
    if let Some(p) = preds.iter().find(|p| p.len() != truth.len()) {
        return Err(Error::contract(format!("{} predictions for {} test points", p.len(), truth.len())));
    }
    if preds.iter().flatten().chain(truth).any(|&c| c >= n_classes) {
        return Err(Error::contract("class index out of range"));
    }
    let reps = preds.len() as f64;
    let dist = |mean: &[f64], class: usize| -> f64 {
        mean.iter()
            .enumerate()
            .map(|(k, &v)| {
                let d = v - if k == class { 1.0 } else { 0.0 };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };
    let (mut bias, mut variance) = (0.0, 0.0);
    let mut mean = vec![0.0; n_classes];
    for (x, &t) in truth.iter().enumerate() {
        let mut counts = vec![0usize; n_classes];
        for p in preds {
            counts[p[x]] += 1;
        }
        for (m, &c) in mean.iter_mut().zip(&counts) {
            *m = c as f64 / reps;
        }
        bias += dist(&mean, t);
        variance += preds.iter().map(|p| dist(&mean, p[x])).sum::<f64>();
    }
    let points = truth.len() as f64;
    Ok(BiasVariance {
        bias: bias / points,
        variance: variance / (points * reps),
        repetitions: preds.len(),
        test_points: truth.len(),
    })
}

/// Fits `repetitions` trees on fresh blocks of one training split and
/// measures bias and variance on the shared test split.
pub fn bias_variance(
    algo: &Algo,
    ds: &Dataset,
    repetitions: usize,
    cfg: &BiasVarianceConfig,
    seed: u64,
) -> Result<BiasVariance> {
    if repetitions < 2 {
        return Err(Error::validation("bias/variance needs at least two repetitions"));
    }
    algo.check_depth(cfg.depth)?;
    let (train, test) = train_test_split(ds, cfg.train_fraction, seed::derive(seed, &[0]))?;
    let preds = (0..repetitions)
        .into_par_iter()
        .map(|i| {
            let b = sample_block(&train, cfg.n, cfg.m, seed::derive(seed, &[1, i as u64]))?;
            let t = algo.fit(&b, cfg.depth, seed::derive(seed, &[2, i as u64]))?;
            predict(&block_tree_to_dataset(&t, &b), &test.x, test.n_features)
        })
        .collect::<Result<Vec<_>>>()?;
    bias_variance_of(&preds, &test.y, ds.n_classes)
}
