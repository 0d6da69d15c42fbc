//! Shared fixtures for the benchmarks.

use metatree::data::{gen_xor, Block, XorSpec};
use metatree::model::{Model, ModelConfig, ModelParams};

/// A normalized XOR-L1 block with 15% label noise, `n` rows and `m` columns.
pub fn xor_block(n: usize, m: usize, seed: u64) -> Block {
    let spec = XorSpec::new(1, 0.15, m.saturating_sub(2), seed);
    gen_xor(&spec, n).expect("valid XOR spec").0
}

/// The desk preset at its initialization, in 32-bit.
pub fn desk_model(seed: u64) -> Model {
    Model::F32(ModelParams::init(&ModelConfig::desk(), seed).expect("desk config is valid"))
}
