//! Dense tensors with reverse-mode differentiation, AdamW and a
//! finite-difference gradient checker.

mod adamw;
mod container;
mod gradcheck;
mod ops;
mod real;
mod tape;
mod tensor;

pub use adamw::{AdamWConfig, AdamWState};
pub use container::{Container, Entry, TensorData, CONTAINER_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_EPS, DEFAULT_MAX_COORDS};
pub use ops::{Axis, CustomBackward, BCE_CLAMP, RMS_EPS};
pub use real::{gemm, DType, MatMut, MatRef, Real};
pub use tape::{Tape, Var};
pub use tensor::{permute_data, strides, Tensor};
