use rand::seq::index;

use super::dataset::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_N_MAX: usize = 256;
pub const DEFAULT_M_MAX: usize = 10;

const CONSTANT_STD: f64 = 1e-8;

/// A fixed-capacity normalized window over a dataset.
///
/// All matrices are row-major `n x m`. Cells in an invalid row or column are
/// exactly zero in both `raw_x` and `xn`, and their labels are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub n: usize,
    pub m: usize,
    pub raw_x: Vec<f64>,
    pub xn: Vec<f64>,
    pub y: Vec<usize>,
    pub n_classes: usize,
    pub col_means: Vec<f64>,
    pub col_stds: Vec<f64>,
    pub row_valid: Vec<bool>,
    pub col_valid: Vec<bool>,
    pub col_kinds: Vec<FeatureKind>,
    /// Dataset row behind each block row.
    pub source_rows: Vec<Option<usize>>,
    /// Dataset feature behind each block column.
    pub source_cols: Vec<Option<usize>>,
}

impl Block {
    /// Builds an unnormalized block; call [`normalize_block`] afterwards.
    pub fn from_raw(
        n: usize,
        m: usize,
        raw_x: Vec<f64>,
        y: Vec<usize>,
        n_classes: usize,
        row_valid: Vec<bool>,
        col_valid: Vec<bool>,
    ) -> Result<Block> {
        if raw_x.len() != n * m || y.len() != n || row_valid.len() != n || col_valid.len() != m {
            return Err(Error::contract(format!(
                "block arrays do not match {n}x{m}: x={}, y={}, rows={}, cols={}",
                raw_x.len(),
                y.len(),
                row_valid.len(),
                col_valid.len()
            )));
        }
        if y.iter().any(|&c| c >= n_classes) {
            return Err(Error::contract("block label out of class range"));
        }
        let mut raw_x = raw_x;
        for i in 0..n {
            for j in 0..m {
                if !(row_valid[i] && col_valid[j]) {
                    raw_x[i * m + j] = 0.0;
                }
            }
        }
        let y = y
            .iter()
            .zip(&row_valid)
            .map(|(&c, &v)| if v { c } else { 0 })
            .collect();
        Ok(Block {
            n,
            m,
            xn: vec![0.0; n * m],
            raw_x,
            y,
            n_classes,
            col_means: vec![0.0; m],
            col_stds: vec![1.0; m],
            row_valid,
            col_valid,
            col_kinds: vec![FeatureKind::Numeric; m],
            source_rows: (0..n).map(Some).collect(),
            source_cols: (0..m).map(Some).collect(),
        })
    }

    /// Whole dataset as one block (no sampling), normalized.
    pub fn from_dataset(ds: &Dataset) -> Result<Block> {
        let rows: Vec<usize> = (0..ds.n_rows()).collect();
        let cols: Vec<usize> = (0..ds.n_features).collect();
        Ok(normalize_block(&assemble(ds, &rows, &cols, ds.n_rows(), ds.n_features)))
    }

    pub fn raw(&self, i: usize, j: usize) -> f64 {
        self.raw_x[i * self.m + j]
    }

    pub fn norm(&self, i: usize, j: usize) -> f64 {
        self.xn[i * self.m + j]
    }

    pub fn valid_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&i| self.row_valid[i])
    }

    pub fn valid_cols(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.m).filter(|&j| self.col_valid[j])
    }

    pub fn n_valid_rows(&self) -> usize {
        self.row_valid.iter().filter(|&&v| v).count()
    }

    pub fn n_valid_cols(&self) -> usize {
        self.col_valid.iter().filter(|&&v| v).count()
    }

    pub fn has_categorical(&self) -> bool {
        self.valid_cols().any(|j| self.col_kinds[j] == FeatureKind::Categorical)
    }

    /// Maps a raw threshold on column `j` into normalized units.
    pub fn to_normalized(&self, j: usize, v: f64) -> f64 {
        (v - self.col_means[j]) / self.col_stds[j]
    }

    /// Maps a normalized threshold on column `j` back to raw units.
    pub fn to_raw(&self, j: usize, v: f64) -> f64 {
        v * self.col_stds[j] + self.col_means[j]
    }

    /// Reorders rows and columns: new row `a` is old row `rows[a]`, new
    /// column `b` is old column `cols[b]`. Statistics move with their column.
    pub fn permuted(&self, rows: &[usize], cols: &[usize]) -> Block {
        assert_eq!(rows.len(), self.n, "row permutation length");
        assert_eq!(cols.len(), self.m, "column permutation length");
        let mut out = self.clone();
        for (a, &i) in rows.iter().enumerate() {
            out.y[a] = self.y[i];
            out.row_valid[a] = self.row_valid[i];
            out.source_rows[a] = self.source_rows[i];
            for (b, &j) in cols.iter().enumerate() {
                out.raw_x[a * self.m + b] = self.raw_x[i * self.m + j];
                out.xn[a * self.m + b] = self.xn[i * self.m + j];
            }
        }
        for (b, &j) in cols.iter().enumerate() {
            out.col_means[b] = self.col_means[j];
            out.col_stds[b] = self.col_stds[j];
            out.col_valid[b] = self.col_valid[j];
            out.col_kinds[b] = self.col_kinds[j];
            out.source_cols[b] = self.source_cols[j];
        }
        out
    }

    /// Order-sensitive fingerprint of everything a tree builder can read.
    pub fn fingerprint(&self) -> u64 {
        let words = [self.n as u64, self.m as u64]
            .into_iter()
            .chain(self.raw_x.iter().map(|v| v.to_bits()))
            .chain(self.y.iter().map(|&c| c as u64))
            .chain(self.row_valid.iter().map(|&v| v as u64))
            .chain(self.col_valid.iter().map(|&v| v as u64));
        seed::fingerprint(words)
    }
}

/// Samples `n` rows and `m` feature columns without replacement.
///
/// Undersized datasets contribute all their rows or columns; the remaining
/// capacity is padded with zeros and masked. The result is normalized.
pub fn sample_block(ds: &Dataset, n: usize, m: usize, seed: u64) -> Result<Block> {
    if ds.n_rows() < 2 {
        return Err(Error::contract("sample_block needs a dataset with at least 2 rows"));
    }
    if n == 0 || m == 0 {
        return Err(Error::contract("block capacity must be positive"));
    }
    let mut rng = seed::rng(seed);
    let rows: Vec<usize> = if ds.n_rows() >= n {
        index::sample(&mut rng, ds.n_rows(), n).into_vec()
    } else {
        (0..ds.n_rows()).collect()
    };
    let cols: Vec<usize> = if ds.n_features >= m {
        index::sample(&mut rng, ds.n_features, m).into_vec()
    } else {
        (0..ds.n_features).collect()
    };
    Ok(normalize_block(&assemble(ds, &rows, &cols, n, m)))
}

fn assemble(ds: &Dataset, rows: &[usize], cols: &[usize], n: usize, m: usize) -> Block {
    let mut raw_x = vec![0.0; n * m];
    let mut y = vec![0; n];
    let mut row_valid = vec![false; n];
    let mut col_valid = vec![false; m];
    let mut col_kinds = vec![FeatureKind::Numeric; m];
    let mut source_rows = vec![None; n];
    let mut source_cols = vec![None; m];
    for (b, &j) in cols.iter().enumerate() {
        col_valid[b] = true;
        col_kinds[b] = ds.feature_kinds[j];
        source_cols[b] = Some(j);
    }
    for (a, &i) in rows.iter().enumerate() {
        row_valid[a] = true;
        y[a] = ds.y[i];
        source_rows[a] = Some(i);
        for (b, &j) in cols.iter().enumerate() {
            raw_x[a * m + b] = ds.value(i, j);
        }
    }
    Block {
        n,
        m,
        xn: vec![0.0; n * m],
        raw_x,
        y,
        n_classes: ds.n_classes,
        col_means: vec![0.0; m],
        col_stds: vec![1.0; m],
        row_valid,
        col_valid,
        col_kinds,
        source_rows,
        source_cols,
    }
}

/// Standardizes every valid column of `raw_x` with its population mean and
/// variance over valid rows.
///
/// A column whose spread is below `1e-8` becomes all zeros with std recorded
/// as 1. Statistics are always recomputed from `raw_x`, so the operation is
/// idempotent.
pub fn normalize_block(b: &Block) -> Block {
    let mut out = b.clone();
    let valid_rows: Vec<usize> = b.valid_rows().collect();
    let count = valid_rows.len().max(1) as f64;
    out.xn = vec![0.0; b.n * b.m];
    for j in 0..b.m {
        if !b.col_valid[j] || valid_rows.is_empty() {
            out.col_means[j] = 0.0;
            out.col_stds[j] = 1.0;
            continue;
        }
        let mean = valid_rows.iter().map(|&i| b.raw(i, j)).sum::<f64>() / count;
        let var = valid_rows
            .iter()
            .map(|&i| {
                let d = b.raw(i, j) - mean;
                d * d
            })
            .sum::<f64>()
            / count;
        let std = var.sqrt();
        out.col_means[j] = mean;
        if std < CONSTANT_STD {
            out.col_stds[j] = 1.0;
            continue;
        }
        out.col_stds[j] = std;
        for &i in &valid_rows {
            out.xn[i * b.m + j] = (b.raw(i, j) - mean) / std;
        }
    }
    out
}
