use std::str::FromStr;

use super::model::{DecisionTree, Leaf, Node, Provenance, Split, StopReason};
use super::{majority, midpoint};
use crate::data::Block;
use crate::error::{Error, Result};

const MIN_GAIN: f64 = 1e-12;

/// Impurity criterion for greedy induction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// CART.
    Gini,
    /// ID3 information gain.
    Entropy,
    /// C4.5 gain ratio (no pruning).
    GainRatio,
}

impl Criterion {
    pub fn provenance(self) -> Provenance {
        match self {
            Criterion::Gini => Provenance::GreedyGini,
            Criterion::Entropy => Provenance::GreedyEntropy,
            Criterion::GainRatio => Provenance::GreedyGainRatio,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Gini => "gini",
            Criterion::Entropy => "entropy",
            Criterion::GainRatio => "gain_ratio",
        }
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gini" => Ok(Criterion::Gini),
            "entropy" => Ok(Criterion::Entropy),
            "gain_ratio" | "gainratio" | "gain-ratio" => Ok(Criterion::GainRatio),
            other => Err(Error::validation(format!("unknown criterion '{other}'"))),
        }
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t) * (c as f64 / t)).sum::<f64>()
}

fn entropy(counts: &[usize], total: usize) -> f64 {
    let t = total as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| (c as f64 / t) * (c as f64 / t).log2())
        .sum::<f64>()
}

/// Score of a binary partition; `None` when the criterion is undefined.
fn split_score(
    criterion: Criterion,
    parent: &[usize],
    left: &[usize],
    right: &[usize],
    n_left: usize,
    n_right: usize,
) -> Option<f64> {
    let n = n_left + n_right;
    let (wl, wr) = (n_left as f64 / n as f64, n_right as f64 / n as f64);
    match criterion {
        Criterion::Gini => {
            Some(gini(parent, n) - wl * gini(left, n_left) - wr * gini(right, n_right))
        }
        Criterion::Entropy => {
            Some(entropy(parent, n) - wl * entropy(left, n_left) - wr * entropy(right, n_right))
        }
        Criterion::GainRatio => {
            let gain = entropy(parent, n) - wl * entropy(left, n_left) - wr * entropy(right, n_right);
            let info = -(wl * wl.log2()) - wr * wr.log2();
            (info > 0.0).then(|| gain / info)
        }
    }
}

/// Best split of `rows` over `cols` of a row-major matrix.
///
/// Candidates are midpoints between consecutive distinct values; ties go to
/// the lower feature and then the lower threshold.
pub(crate) fn best_split_on(
    x: &[f64],
    n_cols: usize,
    y: &[usize],
    n_classes: usize,
    rows: &[usize],
    cols: &[usize],
    criterion: Criterion,
) -> Option<(Split, f64)> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let mut parent = vec![0usize; n_classes];
    for &r in rows {
        parent[y[r]] += 1;
    }
    if parent.iter().any(|&c| c == n) {
        return None;
    }
    let mut best: Option<(Split, f64)> = None;
    let mut best_gain = MIN_GAIN;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut left = vec![0usize; n_classes];
    let mut right = vec![0usize; n_classes];
    for &j in cols {
        order.clear();
        order.extend_from_slice(rows);
        order.sort_by(|&a, &b| x[a * n_cols + j].total_cmp(&x[b * n_cols + j]));
        left.iter_mut().for_each(|c| *c = 0);
        right.copy_from_slice(&parent);
        for p in 0..n - 1 {
            let r = order[p];
            left[y[r]] += 1;
            right[y[r]] -= 1;
            let (a, b) = (x[r * n_cols + j], x[order[p + 1] * n_cols + j]);
            if a >= b {
                continue;
            }
            if let Some(g) = split_score(criterion, &parent, &left, &right, p + 1, n - p - 1) {
                if g > best_gain {
                    best_gain = g;
                    best = Some((Split::new(j, midpoint(a, b)), g));
                }
            }
        }
    }
    best
}

/// Best single split of a labelled matrix, or `None` when `y` is pure or no
/// candidate improves the impurity by more than `1e-12`.
pub fn best_split(
    x: &[f64],
    n_cols: usize,
    y: &[usize],
    n_classes: usize,
    criterion: Criterion,
) -> Result<Option<(Split, f64)>> {
    if y.is_empty() || n_cols == 0 {
        return Err(Error::contract("best_split on an empty matrix"));
    }
    if x.len() != y.len() * n_cols {
        return Err(Error::contract(format!(
            "{} values do not form {} rows of {n_cols}",
            x.len(),
            y.len()
        )));
    }
    if let Some(&c) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::contract(format!("label {c} out of range")));
    }
    let rows: Vec<usize> = (0..y.len()).collect();
    let cols: Vec<usize> = (0..n_cols).collect();
    Ok(best_split_on(x, n_cols, y, n_classes, &rows, &cols, criterion))
}

/// Top-down greedy induction on a row subset of a matrix.
#[allow(clippy::too_many_arguments)]
pub fn fit_greedy(
    x: &[f64],
    n_cols: usize,
    y: &[usize],
    n_classes: usize,
    rows: &[usize],
    cols: &[usize],
    depth: usize,
    criterion: Criterion,
) -> DecisionTree {
    let mut tree = DecisionTree::new(depth, n_classes, criterion.provenance());
    let mut stack = vec![(1usize, rows.to_vec())];
    while let Some((index, subset)) = stack.pop() {
        let mut counts = vec![0usize; n_classes];
        for &r in &subset {
            counts[y[r]] += 1;
        }
        let (label, top) = majority(&counts);
        let level = DecisionTree::level_of(index);
        let stop = if top == subset.len() {
            Some(StopReason::Pure)
        } else if subset.len() < 2 {
            Some(StopReason::TooFew)
        } else if level >= depth {
            Some(StopReason::Depth)
        } else {
            None
        };
        if let Some(reason) = stop {
            tree.set(index, Node::Leaf(Leaf { label, reason }));
            continue;
        }
        match best_split_on(x, n_cols, y, n_classes, &subset, cols, criterion) {
            None => tree.set(index, Node::Leaf(Leaf { label, reason: StopReason::NoGain })),
            Some((split, _)) => {
                tree.set(index, Node::Internal(split));
                let (l, r): (Vec<usize>, Vec<usize>) =
                    subset.iter().partition(|&&i| split.goes_left(&x[i * n_cols..(i + 1) * n_cols]));
                stack.push((2 * index + 1, r));
                stack.push((2 * index, l));
            }
        }
    }
    tree
}

/// Greedy tree over the block's valid cells, thresholds in raw units.
pub fn build_greedy(b: &Block, depth: usize, criterion: Criterion) -> Result<DecisionTree> {
    if depth == 0 {
        return Err(Error::contract("greedy tree depth must be at least 1"));
    }
    let rows: Vec<usize> = b.valid_rows().collect();
    if rows.is_empty() {
        return Err(Error::contract("block has no valid rows"));
    }
    let cols: Vec<usize> = b.valid_cols().collect();
    Ok(fit_greedy(&b.raw_x, b.m, &b.y, b.n_classes, &rows, &cols, depth, criterion))
}
