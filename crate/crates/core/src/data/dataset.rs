use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// A labelled table. `x` is row-major with `n_features` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub n_features: usize,
    pub n_classes: usize,
    pub feature_kinds: Vec<FeatureKind>,
    pub feature_names: Vec<String>,
    /// Category strings per feature, indexed by code. Empty for numeric columns.
    pub categories: Vec<Vec<String>>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Builds an all-numeric dataset with generated names.
    pub fn from_numeric(
        name: impl Into<String>,
        x: Vec<f64>,
        n_features: usize,
        y: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            x,
            y,
            n_features,
            n_classes,
            feature_kinds: vec![FeatureKind::Numeric; n_features],
            feature_names: (0..n_features).map(|j| format!("x{j}")).collect(),
            categories: vec![Vec::new(); n_features],
            class_names: (0..n_classes).map(|c| c.to_string()).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 {
            return Err(Error::validation("dataset has no feature columns"));
        }
        if self.x.len() != self.y.len() * self.n_features {
            return Err(Error::validation(format!(
                "feature matrix holds {} values, expected {} rows x {} features",
                self.x.len(),
                self.y.len(),
                self.n_features
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::validation("dataset needs at least 2 classes"));
        }
        if let Some(bad) = self.y.iter().find(|&&c| c >= self.n_classes) {
            return Err(Error::validation(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        if self.feature_kinds.len() != self.n_features {
            return Err(Error::validation("feature_kinds length mismatch"));
        }
        if let Some(pos) = self.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value at row {}, column {}",
                pos / self.n_features,
                pos % self.n_features
            )));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.n_features + j]
    }

    /// Number of distinct labels actually present.
    pub fn present_classes(&self) -> usize {
        let mut seen = vec![false; self.n_classes];
        for &c in &self.y {
            seen[c] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    /// Rows in the given order; class coding and column metadata are kept.
    pub fn subset_rows(&self, rows: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(rows.len() * self.n_features);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(self.row(r));
            y.push(self.y[r]);
        }
        Dataset {
            x,
            y,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: Vec::new(),
            y: Vec::new(),
            n_features: self.n_features,
            n_classes: self.n_classes,
            feature_kinds: self.feature_kinds.clone(),
            feature_names: self.feature_names.clone(),
            categories: self.categories.clone(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Random disjoint row partition into (train, test).
///
/// Row order inside each side follows the original dataset order.
pub fn train_test_split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::contract(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.n_rows();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train < 2 || n - n_train.min(n) < 2 {
        return Err(Error::validation(format!(
            "split of {n} rows at fraction {train_fraction} leaves a side with fewer than 2 rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut test: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    let (train, test) = (ds.subset_rows(&train), ds.subset_rows(&test));
    if train.present_classes() < 2 || test.present_classes() < 2 {
        return Err(Error::validation(format!(
            "split of '{}' leaves a side with a single class",
            ds.name
        )));
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let x: Vec<f64> = (0..n * 2).map(|v| v as f64).collect();
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        Dataset::from_numeric("toy", x, 2, y, 2).unwrap()
    }

    #[test]
    fn split_sizes_follow_fraction() {
        let (tr, te) = train_test_split(&toy(1000), 0.7, 1).unwrap();
        assert_eq!((tr.n_rows(), te.n_rows()), (700, 300));
    }

    #[test]
    fn split_is_a_partition_and_deterministic() {
        let ds = toy(50);
        let (a, b) = train_test_split(&ds, 0.7, 9).unwrap();
        let (a2, b2) = train_test_split(&ds, 0.7, 9).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let mut firsts: Vec<u64> = a
            .x
            .chunks(2)
            .chain(b.x.chunks(2))
            .map(|r| r[0] as u64)
            .collect();
        firsts.sort_unstable();
        let expected: Vec<u64> = (0..50).map(|i| 2 * i).collect();
        assert_eq!(firsts, expected);
    }

    #[test]
    fn extreme_fraction_is_rejected() {
        assert!(matches!(
            train_test_split(&toy(10), 0.999, 0),
            Err(Error::Validation(_))
        ));
        assert!(matches!(train_test_split(&toy(10), 1.0, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn invalid_labels_are_rejected() {
        assert!(Dataset::from_numeric("bad", vec![0.0, 1.0], 1, vec![0, 2], 2).is_err());
        assert!(Dataset::from_numeric("one", vec![0.0, 1.0], 1, vec![0, 0], 1).is_err());
    }
}
