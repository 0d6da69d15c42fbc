//! Exact search over all trees of depth at most 2, maximizing training
//! accuracy minus a per-leaf penalty.
//!
//! Once a root split is fixed the two children are independent, so each child
//! takes its best single split (or stays a leaf). Rows are presorted per
//! feature once; a child scan walks the presorted order and skips rows that
//! are not in the child, accumulating class counts as it goes.

use super::model::{DecisionTree, Leaf, Node, Provenance, Split, StopReason};
use super::{majority, midpoint};
use crate::data::Block;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// Result of the exact depth-2 search.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalFit {
    pub tree: DecisionTree,
    /// `correct / n - lambda * leaves`.
    pub objective: f64,
    pub correct: usize,
    pub n: usize,
    pub leaves: usize,
}

#[derive(Debug, Clone, Copy)]
struct Choice {
    correct: usize,
    leaves: usize,
}

struct Scorer {
    /// lambda * n: one extra leaf is worth this many correct rows.
    leaf_cost: f64,
}

impl Scorer {
    /// True when `a` beats `b`: higher objective, then fewer leaves.
    fn better(&self, a: Choice, b: Choice) -> bool {
        let gain = a.correct as f64 - b.correct as f64;
        let cost = self.leaf_cost * (a.leaves as f64 - b.leaves as f64);
        gain > cost || (gain == cost && a.leaves < b.leaves)
    }
}

#[derive(Debug, Clone)]
struct Child {
    choice: Choice,
    label: usize,
    reason: StopReason,
    split: Option<(Split, usize, usize)>,
}

struct Search<'a> {
    x: &'a [f64],
    n_cols: usize,
    y: &'a [usize],
    n_classes: usize,
    cols: &'a [usize],
    /// Per entry of `cols`, rows sorted by value.
    sorted: Vec<Vec<usize>>,
    scorer: Scorer,
}

impl Search<'_> {
    fn val(&self, r: usize, j: usize) -> f64 {
        self.x[r * self.n_cols + j]
    }

    /// Best depth-1 subtree for the rows flagged in `member`.
    fn child(&self, member: &[bool], size: usize, counts: &[usize], at_max_depth: bool) -> Child {
        let (label, top) = majority(counts);
        let leaf = Choice { correct: top, leaves: 1 };
        let reason = if top == size {
            StopReason::Pure
        } else if size < 2 {
            StopReason::TooFew
        } else if at_max_depth {
            StopReason::Depth
        } else {
            StopReason::Regularized
        };
        let mut out = Child { choice: leaf, label, reason, split: None };
        if top == size || size < 2 || at_max_depth {
            return out;
        }
        let mut best: Option<(usize, Split, usize, usize)> = None;
        let mut left = vec![0usize; self.n_classes];
        for (ci, &j) in self.cols.iter().enumerate() {
            left.iter_mut().for_each(|c| *c = 0);
            let mut seen = 0usize;
            let mut prev: Option<f64> = None;
            for &r in &self.sorted[ci] {
                if !member[r] {
                    continue;
                }
                let v = self.val(r, j);
                if let Some(pv) = prev {
                    if v > pv {
                        let (ll, lc) = majority(&left);
                        let right: Vec<usize> = counts.iter().zip(&left).map(|(t, l)| t - l).collect();
                        let (rl, rc) = majority(&right);
                        if best.is_none_or(|b| lc + rc > b.0) {
                            best = Some((lc + rc, Split::new(j, midpoint(pv, v)), ll, rl));
                        }
                    }
                }
                left[self.y[r]] += 1;
                seen += 1;
                prev = Some(v);
                if seen == size {
                    break;
                }
            }
        }
        if let Some((correct, split, ll, rl)) = best {
            let cand = Choice { correct, leaves: 2 };
            if self.scorer.better(cand, leaf) {
                out.choice = cand;
                out.split = Some((split, ll, rl));
            }
        }
        out
    }
}

/// Exact regularized depth-2 search over `rows` and `cols` of a matrix.
pub fn optimal_depth2_fit(
    x: &[f64],
    n_cols: usize,
    y: &[usize],
    n_classes: usize,
    rows: &[usize],
    cols: &[usize],
    lambda: f64,
) -> Result<OptimalFit> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::contract("optimal depth-2 search needs at least 2 rows"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::contract(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let total_rows = x.len() / n_cols.max(1);
    let sorted: Vec<Vec<usize>> = cols
        .iter()
        .map(|&j| {
            let mut o = rows.to_vec();
            o.sort_by(|&a, &b| x[a * n_cols + j].total_cmp(&x[b * n_cols + j]));
            o
        })
        .collect();
    let search = Search {
        x,
        n_cols,
        y,
        n_classes,
        cols,
        sorted,
        scorer: Scorer { leaf_cost: lambda * n as f64 },
    };

    let mut counts = vec![0usize; n_classes];
    for &r in rows {
        counts[y[r]] += 1;
    }
    let (root_label, root_top) = majority(&counts);
    let mut best_choice = Choice { correct: root_top, leaves: 1 };
    let mut best: Option<(Split, Child, Child)> = None;

    let mut member = vec![false; total_rows];
    let mut in_left = vec![false; total_rows];
    for &r in rows {
        member[r] = true;
    }
    for (ci, &j) in cols.iter().enumerate() {
        let order = &search.sorted[ci];
        in_left.iter_mut().for_each(|f| *f = false);
        let mut left_counts = vec![0usize; n_classes];
        for p in 0..n - 1 {
            let r = order[p];
            in_left[r] = true;
            left_counts[y[r]] += 1;
            let (a, b) = (search.val(r, j), search.val(order[p + 1], j));
            if a >= b {
                continue;
            }
            let right_member: Vec<bool> = member.iter().zip(&in_left).map(|(m, l)| *m && !*l).collect();
            let right_counts: Vec<usize> = counts.iter().zip(&left_counts).map(|(t, l)| t - l).collect();
            let lc = search.child(&in_left, p + 1, &left_counts, false);
            let rc = search.child(&right_member, n - p - 1, &right_counts, false);
            let cand = Choice {
                correct: lc.choice.correct + rc.choice.correct,
                leaves: lc.choice.leaves + rc.choice.leaves,
            };
            if search.scorer.better(cand, best_choice) {
                best_choice = cand;
                best = Some((Split::new(j, midpoint(a, b)), lc, rc));
            }
        }
    }

    let mut tree = DecisionTree::new(2, n_classes, Provenance::OptimalD2);
    match best {
        None => {
            let reason = if root_top == n { StopReason::Pure } else { StopReason::Regularized };
            tree.set(1, Node::Leaf(Leaf { label: root_label, reason }));
        }
        Some((split, lc, rc)) => {
            tree.set(1, Node::Internal(split));
            for (index, child) in [(2usize, lc), (3usize, rc)] {
                match child.split {
                    None => tree.set(index, Node::Leaf(Leaf { label: child.label, reason: child.reason })),
                    Some((s, ll, rl)) => {
                        tree.set(index, Node::Internal(s));
                        tree.set(2 * index, Node::Leaf(Leaf { label: ll, reason: StopReason::Depth }));
                        tree.set(2 * index + 1, Node::Leaf(Leaf { label: rl, reason: StopReason::Depth }));
                    }
                }
            }
        }
    }
    Ok(OptimalFit {
        objective: best_choice.correct as f64 / n as f64 - lambda * best_choice.leaves as f64,
        correct: best_choice.correct,
        leaves: best_choice.leaves,
        n,
        tree,
    })
}

/// Exact regularized depth-2 tree over the block's valid cells.
pub fn build_optimal_depth2(b: &Block, lambda: f64) -> Result<DecisionTree> {
    Ok(block_fit(b, lambda)?.tree)
}

pub(crate) fn block_fit(b: &Block, lambda: f64) -> Result<OptimalFit> {
    let rows: Vec<usize> = b.valid_rows().collect();
    let cols: Vec<usize> = b.valid_cols().collect();
    optimal_depth2_fit(&b.raw_x, b.m, &b.y, b.n_classes, &rows, &cols, lambda)
}
