//! Classical decision trees: the shared tree representation, greedy
//! builders, the exact depth-2 solver, prediction and serialization.

mod greedy;
mod model;
mod optimal;
mod text;

pub use greedy::{best_split, build_greedy, fit_greedy, Criterion};
pub use model::{
    accuracy, predict, DecisionTree, Leaf, Node, Provenance, Split, StopReason, MAX_TREE_DEPTH,
};
pub use optimal::{build_optimal_depth2, optimal_depth2_fit, OptimalFit, DEFAULT_LAMBDA};
pub use text::{parse_tree, tree_to_dot, tree_to_text};

/// Threshold strictly between two consecutive distinct values `a < b`, so
/// that `a` goes left and `b` goes right.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let t = (a + b) / 2.0;
    if t < b {
        t
    } else {
        a
    }
}

/// Index of the largest count, lowest index on ties.
pub(crate) fn majority(counts: &[usize]) -> (usize, usize) {
    let mut best = (0, 0);
    for (c, &k) in counts.iter().enumerate() {
        if k > best.1 {
            best = (c, k);
        }
    }
    best
}
