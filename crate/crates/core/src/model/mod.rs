//! The split-scoring network.

mod config;
mod net;
mod params;

pub use config::{parse_kv, ModelConfig, Preset};
pub use net::{layer_flops, score_to_split, CellChoice, LayerFlops, Packed, Trace};
pub use params::{ModelParams, INIT_STD};

pub(crate) use net::build_graph;

use std::path::Path;

use crate::autodiff::{Container, DType, TensorData};
use crate::data::Block;
use crate::error::{Error, Result};

/// A network in either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    F32(ModelParams<f32>),
    F64(ModelParams<f64>),
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::F32(p) => &p.config,
            Model::F64(p) => &p.config,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Model::F32(_) => DType::F32,
            Model::F64(_) => DType::F64,
        }
    }

    /// Scores on the full grid; see [`ModelParams::forward`].
    pub fn scores(&self, b: &Block, row_subset: Option<&[bool]>) -> Result<Vec<f64>> {
        match self {
            Model::F32(p) => p.forward(b, row_subset),
            Model::F64(p) => p.forward(b, row_subset),
        }
    }

    /// Probe scores for every hidden state, embedding first; the last entry
    /// equals [`scores`](Self::scores).
    pub fn layer_scores(&self, b: &Block, row_subset: Option<&[bool]>) -> Result<Vec<Vec<f64>>> {
        fn run<T: crate::autodiff::Real>(p: &ModelParams<T>, b: &Block, r: Option<&[bool]>) -> Result<Vec<Vec<f64>>> {
            let t = p.trace(b, r)?;
            (0..t.hiddens.len()).map(|l| p.probe_layer(&t, l)).collect()
        }
        match self {
            Model::F32(p) => run(p, b, row_subset),
            Model::F64(p) => run(p, b, row_subset),
        }
    }

    pub fn store(&self, c: &mut Container) {
        match self {
            Model::F32(p) => p.store(c),
            Model::F64(p) => p.store(c),
        }
    }

    /// Restores parameters in the precision they were stored in.
    pub fn restore(c: &Container) -> Result<Model> {
        let e = c.get("param/embed.w_x").ok_or_else(|| Error::format("container holds no model parameters"))?;
        match e.data {
            TensorData::F32(_) => Ok(Model::F32(ModelParams::restore(c)?)),
            TensorData::F64(_) => Ok(Model::F64(ModelParams::restore(c)?)),
            TensorData::I64(_) => Err(Error::format("model parameters stored as integers")),
        }
    }

    /// Loads a checkpoint or bare model file.
    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Self::restore(&Container::load(path)?)
    }
}
