//! Tabular data: datasets, fixed-capacity normalized blocks, synthetic XOR
//! problems and categorical-noise injection.

mod block;
mod csvio;
mod dataset;
mod noise;
mod xor;

pub use block::{normalize_block, sample_block, Block, DEFAULT_M_MAX, DEFAULT_N_MAX};
pub use csvio::{load_csv, write_csv, LabelColumn};
pub use dataset::{train_test_split, Dataset, FeatureKind, DEFAULT_TRAIN_FRACTION};
pub use noise::{inject_categorical_noise, DEFAULT_NOISE_BOUND, DEFAULT_NOISE_SIGMA};
pub use xor::{gen_xor, XorBoundary, XorSpec, XOR_SPEC_FORMAT};
