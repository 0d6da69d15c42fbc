use crate::autodiff::BCE_CLAMP;
use crate::data::Block;
use crate::error::{Error, Result};
use crate::tree::Split;

/// A teacher split re-expressed as a data cell of the block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnappedSplit {
    pub feature: usize,
    pub row: usize,
    /// Normalized value of the chosen cell.
    pub value: f64,
}

/// Moves a teacher threshold onto the nearest active data value of its
/// feature (ties go to the lower value). Distances are measured in raw units;
/// the normalizing map is increasing and affine, so the ranking is the same
/// as in normalized units but a midpoint's two neighbours stay exactly tied.
pub fn snap_split(b: &Block, s: Split, row_subset: Option<&[bool]>) -> Result<SnappedSplit> {
    let j = s.feature;
    if j >= b.m || !b.col_valid[j] {
        return Err(Error::contract(format!("split feature {j} is not a valid column")));
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for i in 0..b.n {
        if !b.row_valid[i] || row_subset.is_some_and(|r| !r[i]) {
            continue;
        }
        let v = b.raw(i, j);
        let dist = (v - s.threshold).abs();
        let better = match best {
            None => true,
            Some((_, bd, bv)) => dist < bd || (dist == bd && v < bv),
        };
        if better {
            best = Some((i, dist, v));
        }
    }
    let (row, _, _) = best.ok_or_else(|| Error::contract("no active row to snap the split onto"))?;
    Ok(SnappedSplit { feature: j, row, value: b.norm(row, j) })
}

/// Smoothed one-cell target on the full `n x m` grid:
/// `exp(-(x - v)^2 / (2 sigma^2))` down column `feature`, 0 elsewhere and on
/// inactive cells.
pub fn gaussian_target(b: &Block, feature: usize, value: f64, sigma: f64, row_subset: Option<&[bool]>) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive, got {sigma}");
    assert!(feature < b.m, "feature {feature} out of range for {} columns", b.m);
    let mut out = vec![0.0; b.n * b.m];
    if !b.col_valid[feature] {
        return out;
    }
    for i in 0..b.n {
        if b.row_valid[i] && row_subset.is_none_or(|r| r[i]) {
            let z = b.norm(i, feature) - value;
            out[i * b.m + feature] = (-(z * z) / (2.0 * sigma * sigma)).exp();
        }
    }
    out
}

/// Mean clamped binary cross-entropy over cells with `mask` set.
pub fn bce_loss(s: &[f64], m: &[f64], mask: &[bool]) -> f64 {
    assert!(s.len() == m.len() && s.len() == mask.len(), "bce_loss length mismatch");
    let mut total = 0.0;
    let mut count = 0usize;
    for ((&p, &t), &k) in s.iter().zip(m).zip(mask) {
        if k {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
