//! Teacher corpus, smoothed targets and the curriculum trainer.

mod corpus;
mod gate;
mod stream;
mod target;
mod trainer;

pub use corpus::{gen_corpus, gen_corpus_with, xor_datasets, Corpus, CorpusSpec, HeldOut, ManifestEntry, TrainingExample, CORPUS_FORMAT_VERSION};
pub use gate::{gate_config, loss_grad_check};
pub use stream::{select_phase_stream, Phase, PhaseStream};
pub use target::{bce_loss, gaussian_target, snap_split, SnappedSplit};
pub use trainer::{augment, example_loss, Curriculum, Schedule, Trainer, CHECKPOINT_FORMAT};

#[cfg(test)]
mod tests;

