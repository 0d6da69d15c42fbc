use rand::Rng;
use rand_distr::StandardNormal;

use super::block::Block;
use super::dataset::FeatureKind;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;
pub const DEFAULT_NOISE_BOUND: f64 = 0.1;

/// Adds truncated zero-mean Gaussian noise to the normalized values of every
/// valid categorical cell. Draws outside `[-bound, bound]` are rejected and
/// redrawn. `raw_x` is left alone, so split thresholds still come from the
/// original values.
pub fn inject_categorical_noise(b: &Block, sigma_c: f64, bound: f64, seed: u64) -> Result<Block> {
    if bound <= 0.0 {
        return Err(Error::validation(format!("noise bound must be positive, got {bound}")));
    }
    if sigma_c < 0.0 {
        return Err(Error::validation(format!("noise sigma must be non-negative, got {sigma_c}")));
    }
    let mut out = b.clone();
    if sigma_c == 0.0 {
        return Ok(out);
    }
    let mut rng = seed::rng(seed);
    for j in 0..b.m {
        if !b.col_valid[j] || b.col_kinds[j] != FeatureKind::Categorical {
            continue;
        }
        for i in 0..b.n {
            if b.row_valid[i] {
                out.xn[i * b.m + j] += truncated_normal(&mut rng, sigma_c, bound);
            }
        }
    }
    Ok(out)
}

pub(crate) fn truncated_normal<R: Rng>(rng: &mut R, sigma: f64, bound: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let v = z * sigma;
        if v.abs() <= bound {
            return v;
        }
    }
}
