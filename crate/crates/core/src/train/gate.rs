use super::example_loss;
use crate::autodiff::{grad_check, GradCheckReport, DEFAULT_EPS, DEFAULT_MAX_COORDS};
use crate::data::{gen_xor, XorSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tree::build_optimal_depth2;

/// The smallest model the gradient gate runs on: 8x3 blocks, 2 layers, width 16.
pub fn gate_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        d_mlp: 32,
        n_max: 8,
        m_max: 3,
        k_max: 2,
        ..ModelConfig::desk()
    }
}

/// Finite-difference check of the full training loss (root and child
/// terms) in 64-bit on one XOR block filling the model's capacity.
pub fn loss_grad_check(cfg: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    cfg.validate()?;
    if cfg.m_max < 2 || cfg.k_max < 2 {
        return Err(Error::validation("the gradient gate needs at least 2 columns and 2 classes"));
    }
    let mut p = ModelParams::<f64>::init(cfg, seed)?;
    // Away from initialization so that every parameter carries signal.
    p.perturb(seed ^ 1, 0.2);
    let (b, _) = gen_xor(&XorSpec::new(1, 0.1, cfg.m_max - 2, seed), cfg.n_max.max(4))?;
    let teacher = build_optimal_depth2(&b, 1e-3)?;
    if teacher.root_split().is_none() {
        return Err(Error::validation("gate block has no teacher split; try another seed"));
    }
    Ok(grad_check(
        |tape, v| example_loss(tape, v, cfg, &b, &teacher).unwrap().expect("teacher has a root split"),
        &p.tensors,
        DEFAULT_EPS,
        DEFAULT_MAX_COORDS,
        seed,
    ))
}
