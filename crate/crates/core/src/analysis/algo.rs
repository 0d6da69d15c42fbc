use std::fmt;
use std::sync::Arc;

use crate::data::Block;
use crate::error::{Error, Result};
use crate::generate::{generate_tree, SplitScorer};
use crate::model::Model;
use crate::tree::{build_greedy, build_optimal_depth2, Criterion, DecisionTree, DEFAULT_LAMBDA};

/// A tree-fitting algorithm under evaluation.
#[derive(Clone)]
pub enum Algo {
    Learned { name: String, scorer: Arc<dyn SplitScorer + Send> },
    Greedy(Criterion),
    Optimal { lambda: f64 },
}

impl fmt::Debug for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Algo {
    /// Parses `greedy-gini`, `greedy-entropy`, `greedy-gainratio`,
    /// `optimal-d2` or `learned` (which needs a model).
    pub fn parse(s: &str, model: Option<&Arc<Model>>) -> Result<Algo> {
        match s {
            "optimal-d2" => Ok(Algo::Optimal { lambda: DEFAULT_LAMBDA }),
            "learned" => model
                .map(|m| Algo::learned("learned", m.clone()))
                .ok_or_else(|| Error::validation("algorithm 'learned' needs a model checkpoint")),
            _ => match s.strip_prefix("greedy-") {
                Some(c) => Ok(Algo::Greedy(c.parse()?)),
                None => Err(Error::validation(format!("unknown algorithm '{s}'"))),
            },
        }
    }

    pub fn learned(name: impl Into<String>, scorer: Arc<dyn SplitScorer + Send>) -> Algo {
        Algo::Learned { name: name.into(), scorer }
    }

    pub fn name(&self) -> String {
        match self {
            Algo::Learned { name, .. } => name.clone(),
            Algo::Greedy(Criterion::Gini) => "greedy-gini".into(),
            Algo::Greedy(Criterion::Entropy) => "greedy-entropy".into(),
            Algo::Greedy(Criterion::GainRatio) => "greedy-gainratio".into(),
            Algo::Optimal { .. } => "optimal-d2".into(),
        }
    }

    /// Rejects configurations the algorithm cannot fit.
    pub fn check_depth(&self, depth: usize) -> Result<()> {
        match self {
            Algo::Optimal { .. } if depth != 2 => Err(Error::Unsupported(format!(
                "optimal-d2 fits depth-2 trees only; depth {depth} requested"
            ))),
            _ if depth == 0 => Err(Error::validation("depth must be at least 1")),
            _ => Ok(()),
        }
    }

    /// A tree over block columns.
    pub fn fit(&self, b: &Block, depth: usize, seed: u64) -> Result<DecisionTree> {
        self.check_depth(depth)?;
        match self {
            Algo::Learned { scorer, .. } => {
                let (n, m) = scorer.block_shape();
                if b.n > n || b.m > m {
                    return Err(Error::contract(format!(
                        "{}x{} block exceeds the model's {n}x{m} capacity",
                        b.n, b.m
                    )));
                }
                generate_tree(scorer.as_ref(), b, depth, seed)
            }
            Algo::Greedy(c) => build_greedy(b, depth, *c),
            Algo::Optimal { lambda } => build_optimal_depth2(b, *lambda),
        }
    }
}
