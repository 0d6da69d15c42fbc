//! Recursive tree generation with a split-scoring model.

use rayon::prelude::*;

use crate::data::{inject_categorical_noise, sample_block, Block, Dataset, DEFAULT_NOISE_BOUND, DEFAULT_NOISE_SIGMA};
use crate::error::{Error, Result};
use crate::model::{score_to_split, Model};
use crate::seed;
use crate::tree::{DecisionTree, Leaf, Node, Provenance, StopReason, MAX_TREE_DEPTH};

/// Anything that scores the cells of a block.
pub trait SplitScorer: Sync {
    /// Scores on the full `n x m` grid with rows outside `row_subset` masked.
    fn scores(&self, b: &Block, row_subset: Option<&[bool]>) -> Result<Vec<f64>>;

    /// Largest block `(n, m)` the scorer accepts.
    fn block_shape(&self) -> (usize, usize);
}

impl SplitScorer for Model {
    fn scores(&self, b: &Block, row_subset: Option<&[bool]>) -> Result<Vec<f64>> {
        Model::scores(self, b, row_subset)
    }

    fn block_shape(&self) -> (usize, usize) {
        (self.config().n_max, self.config().m_max)
    }
}

/// Grows a tree by calling the scorer once per internal node; children
/// see the same block with the sibling's rows masked. Categorical columns
/// get their noise once, before the root call.
pub fn generate_tree(model: &dyn SplitScorer, b: &Block, max_depth: usize, seed: u64) -> Result<DecisionTree> {
    if max_depth == 0 || max_depth > MAX_TREE_DEPTH {
        return Err(Error::contract(format!("max_depth must be in 1..={MAX_TREE_DEPTH}, got {max_depth}")));
    }
    if b.n_valid_rows() == 0 || b.n_valid_cols() == 0 {
        return Err(Error::contract("cannot grow a tree on an empty block"));
    }
    let noisy;
    let b = if b.has_categorical() {
        noisy = inject_categorical_noise(b, DEFAULT_NOISE_SIGMA, DEFAULT_NOISE_BOUND, seed::derive(seed, &[0]))?;
        &noisy
    } else {
        b
    };
    let mut tree = DecisionTree::new(max_depth, b.n_classes, Provenance::Learned);
    let subset = b.row_valid.clone();
    grow(model, b, &mut tree, 1, 0, &subset, max_depth)?;
    Ok(tree)
}

fn grow(
    model: &dyn SplitScorer,
    b: &Block,
    tree: &mut DecisionTree,
    node: usize,
    depth: usize,
    subset: &[bool],
    max_depth: usize,
) -> Result<()> {
    let rows: Vec<usize> = (0..b.n).filter(|&i| subset[i]).collect();
    let mut counts = vec![0usize; b.n_classes];
    for &i in &rows {
        counts[b.y[i]] += 1;
    }
    let (label, top) = crate::tree::majority(&counts);
    let leaf = |reason| Node::Leaf(Leaf { label, reason });
    let stop = if rows.len() < 2 {
        Some(StopReason::TooFew)
    } else if top == rows.len() {
        Some(StopReason::Pure)
    } else if b.valid_cols().all(|j| rows.iter().all(|&i| b.raw(i, j) == b.raw(rows[0], j))) {
        Some(StopReason::ConstantFeatures)
    } else if depth == max_depth {
        Some(StopReason::Depth)
    } else {
        None
    };
    if let Some(reason) = stop {
        tree.set(node, leaf(reason));
        return Ok(());
    }
    // the root sees the unrestricted block
    let mask = if depth == 0 { None } else { Some(subset) };
    let scores = model.scores(b, mask)?;
    let choice = score_to_split(&scores, b, mask)?;
    let s = choice.split;
    let left: Vec<bool> = (0..b.n).map(|i| subset[i] && b.raw(i, s.feature) <= s.threshold).collect();
    let right: Vec<bool> = (0..b.n).map(|i| subset[i] && !left[i]).collect();
    if !left.iter().any(|&v| v) || !right.iter().any(|&v| v) {
        tree.set(node, leaf(StopReason::Degenerate));
        return Ok(());
    }
    tree.set(node, Node::Internal(s));
    grow(model, b, tree, 2 * node, depth + 1, &left, max_depth)?;
    grow(model, b, tree, 2 * node + 1, depth + 1, &right, max_depth)
}

/// `count` trees, each on a fresh block drawn from `ds_train`; features are
/// mapped back to dataset columns.
pub fn generate_ensemble(
    model: &dyn SplitScorer,
    ds_train: &Dataset,
    count: usize,
    max_depth: usize,
    seed: u64,
) -> Result<Vec<DecisionTree>> {
    if count == 0 {
        return Err(Error::contract("ensemble size must be at least 1"));
    }
    let (n, m) = model.block_shape();
    (0..count)
        .into_par_iter()
        .map(|k| {
            let b = sample_block(ds_train, n, m, seed::derive(seed, &[k as u64, 0]))?;
            let t = generate_tree(model, &b, max_depth, seed::derive(seed, &[k as u64, 1]))?;
            Ok(block_tree_to_dataset(&t, &b))
        })
        .collect()
}

/// Rewrites block column indices as source-dataset column indices.
pub fn block_tree_to_dataset(t: &DecisionTree, b: &Block) -> DecisionTree {
    t.remap_features(|f| b.source_cols[f].expect("tree splits on a padded column"))
}

/// Majority vote per row (ties to the lowest class).
pub fn vote(trees: &[DecisionTree], x: &[f64], n_cols: usize, n_classes: usize) -> Result<Vec<usize>> {
    if trees.is_empty() {
        return Err(Error::contract("vote needs at least one tree"));
    }
    let preds: Vec<Vec<usize>> = trees.iter().map(|t| crate::tree::predict(t, x, n_cols)).collect::<Result<_>>()?;
    let rows = preds[0].len();
    Ok((0..rows)
        .map(|r| {
            let mut counts = vec![0usize; n_classes];
            for p in &preds {
                counts[p[r]] += 1;
            }
            crate::tree::majority(&counts).0
        })
        .collect())
}
