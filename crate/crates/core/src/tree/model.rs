use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Deepest tree any builder or the generator will produce.
pub const MAX_TREE_DEPTH: usize = 16;

/// Axis-aligned split: rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

impl Split {
    pub fn new(feature: usize, threshold: f64) -> Self {
        Split { feature, threshold }
    }

    #[inline]
    pub fn goes_left(&self, row: &[f64]) -> bool {
        row[self.feature] <= self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    GreedyGini,
    GreedyEntropy,
    GreedyGainRatio,
    OptimalD2,
    Learned,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::GreedyGini => "greedy-gini",
            Provenance::GreedyEntropy => "greedy-entropy",
            Provenance::GreedyGainRatio => "greedy-gainratio",
            Provenance::OptimalD2 => "optimal-d2",
            Provenance::Learned => "learned",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "greedy-gini" => Provenance::GreedyGini,
            "greedy-entropy" => Provenance::GreedyEntropy,
            "greedy-gainratio" => Provenance::GreedyGainRatio,
            "optimal-d2" => Provenance::OptimalD2,
            "learned" => Provenance::Learned,
            other => return Err(Error::format(format!("unknown provenance '{other}'"))),
        })
    }
}

/// Why a node stopped splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    Pure,
    TooFew,
    NoGain,
    ConstantFeatures,
    Depth,
    /// The chosen split sent every row to one side.
    Degenerate,
    /// The regularized solver preferred a leaf to any split.
    Regularized,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Pure => "pure",
            StopReason::TooFew => "too-few",
            StopReason::NoGain => "no-gain",
            StopReason::ConstantFeatures => "constant-features",
            StopReason::Depth => "depth",
            StopReason::Degenerate => "degenerate",
            StopReason::Regularized => "regularized",
        }
    }
}

impl FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pure" => StopReason::Pure,
            "too-few" => StopReason::TooFew,
            "no-gain" => StopReason::NoGain,
            "constant-features" => StopReason::ConstantFeatures,
            "depth" => StopReason::Depth,
            "degenerate" => StopReason::Degenerate,
            "regularized" => StopReason::Regularized,
            other => return Err(Error::format(format!("unknown stop reason '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leaf {
    pub label: usize,
    pub reason: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Absent,
    Internal(Split),
    Leaf(Leaf),
}

/// Binary tree in heap layout: slot 1 is the root, children of `i` are `2i`
/// and `2i + 1`. Slot 0 is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub depth: usize,
    pub n_classes: usize,
    pub provenance: Provenance,
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn new(depth: usize, n_classes: usize, provenance: Provenance) -> Self {
        assert!(depth <= MAX_TREE_DEPTH, "tree depth {depth} exceeds {MAX_TREE_DEPTH}");
        DecisionTree {
            depth,
            n_classes,
            provenance,
            nodes: vec![Node::Absent; 1 << (depth + 1)],
        }
    }

    /// A tree that is one leaf.
    pub fn leaf(depth: usize, n_classes: usize, provenance: Provenance, leaf: Leaf) -> Self {
        let mut t = DecisionTree::new(depth, n_classes, provenance);
        t.set(1, Node::Leaf(leaf));
        t
    }

    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, index: usize) -> Node {
        self.nodes.get(index).copied().unwrap_or(Node::Absent)
    }

    pub fn set(&mut self, index: usize, node: Node) {
        assert!(
            index >= 1 && index < self.nodes.len(),
            "node index {index} outside depth {}",
            self.depth
        );
        self.nodes[index] = node;
    }

    /// Depth of a heap slot (root is 0).
    pub fn level_of(index: usize) -> usize {
        (usize::BITS - 1 - index.leading_zeros()) as usize
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, Node)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, n)| !matches!(n, Node::Absent))
            .map(|(i, n)| (i, *n))
    }

    pub fn root_split(&self) -> Option<Split> {
        match self.node(1) {
            Node::Internal(s) => Some(s),
            _ => None,
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes().filter(|(_, n)| matches!(n, Node::Leaf(_))).count()
    }

    pub fn split_count(&self) -> usize {
        self.nodes().filter(|(_, n)| matches!(n, Node::Internal(_))).count()
    }

    /// Deepest level that holds a node.
    pub fn realized_depth(&self) -> usize {
        self.nodes().map(|(i, _)| Self::level_of(i)).max().unwrap_or(0)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes()
            .filter_map(|(_, n)| match n {
                Node::Internal(s) => Some(s.feature),
                _ => None,
            })
            .max()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if matches!(self.node(1), Node::Absent) {
            return Err(Error::format("tree has no root"));
        }
        for (i, n) in self.nodes() {
            if i > 1 && !matches!(self.node(i / 2), Node::Internal(_)) {
                return Err(Error::format(format!("node {i} has no internal parent")));
            }
            match n {
                Node::Internal(s) => {
                    if 2 * i + 1 >= self.nodes.len()
                        || matches!(self.node(2 * i), Node::Absent)
                        || matches!(self.node(2 * i + 1), Node::Absent)
                    {
                        return Err(Error::format(format!("internal node {i} lacks children")));
                    }
                    if !s.threshold.is_finite() {
                        return Err(Error::format(format!("node {i} has a non-finite threshold")));
                    }
                }
                Node::Leaf(l) if l.label >= self.n_classes => {
                    return Err(Error::format(format!("leaf {i} label out of range")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Heap index of the leaf a row lands in.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 1;
        loop {
            match self.nodes[i] {
                Node::Internal(s) => i = if s.goes_left(row) { 2 * i } else { 2 * i + 1 },
                Node::Leaf(_) => return i,
                Node::Absent => panic!("malformed tree: reached an absent node at {i}"),
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf(l) => l.label,
            _ => unreachable!(),
        }
    }

    /// Rewrites every split feature through `map`.
    pub fn remap_features(&self, map: impl Fn(usize) -> usize) -> DecisionTree {
        let mut out = self.clone();
        for n in out.nodes.iter_mut() {
            if let Node::Internal(s) = n {
                s.feature = map(s.feature);
            }
        }
        out
    }

    /// Rewrites every split through `map`.
    pub fn map_splits(&self, map: impl Fn(Split) -> Split) -> DecisionTree {
        let mut out = self.clone();
        for n in out.nodes.iter_mut() {
            if let Node::Internal(s) = n {
                *s = map(*s);
            }
        }
        out
    }
}

/// Labels for each row of a row-major matrix.
pub fn predict(t: &DecisionTree, x: &[f64], n_cols: usize) -> Result<Vec<usize>> {
    if n_cols == 0 || x.len() % n_cols != 0 {
        return Err(Error::contract(format!(
            "matrix of {} values does not have {n_cols} columns",
            x.len()
        )));
    }
    if let Some(f) = t.max_feature() {
        if f >= n_cols {
            return Err(Error::contract(format!(
                "tree uses feature {f} but the matrix has {n_cols} columns"
            )));
        }
    }
    Ok(x.chunks(n_cols).map(|r| t.predict_row(r)).collect())
}

/// Fraction of rows predicted correctly.
pub fn accuracy(t: &DecisionTree, x: &[f64], n_cols: usize, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::contract("accuracy of an empty matrix"));
    }
    let pred = predict(t, x, n_cols)?;
    if pred.len() != y.len() {
        return Err(Error::contract(format!("{} rows but {} labels", pred.len(), y.len())));
    }
    let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump() -> DecisionTree {
        let mut t = DecisionTree::new(1, 2, Provenance::GreedyGini);
        t.set(1, Node::Internal(Split::new(0, 1.5)));
        t.set(2, Node::Leaf(Leaf { label: 0, reason: StopReason::Pure }));
        t.set(3, Node::Leaf(Leaf { label: 1, reason: StopReason::Pure }));
        t
    }

    #[test]
    fn boundary_goes_left() {
        assert_eq!(predict(&stump(), &[1.5, 1.6], 1).unwrap(), vec![0, 1]);
    }

    #[test]
    fn single_leaf_is_constant() {
        let t = DecisionTree::leaf(2, 3, Provenance::OptimalD2, Leaf { label: 2, reason: StopReason::Pure });
        assert_eq!(predict(&t, &[0.0, 5.0, -3.0], 1).unwrap(), vec![2, 2, 2]);
    }

    #[test]
    fn accuracy_cases() {
        let x = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(accuracy(&stump(), &x, 1, &[0, 0, 1, 1]).unwrap(), 1.0);
        let c = DecisionTree::leaf(1, 2, Provenance::GreedyGini, Leaf { label: 0, reason: StopReason::Pure });
        let acc = accuracy(&c, &x, 1, &[0, 1, 0, 1]).unwrap();
        assert_eq!(acc, 0.5);
        let err = predict(&c, &x, 1).unwrap().iter().zip([0, 1, 0, 1]).filter(|(p, t)| **p != *t).count() as f64 / 4.0;
        assert_eq!(acc + err, 1.0);
        assert!(accuracy(&c, &[], 1, &[]).is_err());
    }

    #[test]
    fn feature_out_of_range_is_a_contract_error() {
        let t = stump().remap_features(|_| 3);
        assert!(matches!(predict(&t, &[0.0, 1.0], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn validate_catches_missing_children() {
        let mut t = DecisionTree::new(1, 2, Provenance::Learned);
        t.set(1, Node::Internal(Split::new(0, 0.0)));
        assert!(t.validate().is_err());
        assert!(stump().validate().is_ok());
    }
}
