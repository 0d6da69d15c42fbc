//! Decision-tree induction with classical builders and a learned split model.

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod generate;
pub mod model;
pub mod seed;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
