//! Minimal reverse-mode differentiable computation layer: tape autodiff,
//! parameter stores with Adam, stacked BiLSTMs, gradient verification, and
//! the parameter-archive format.

pub mod archive;
pub mod embeddings;
pub mod gradcheck;
pub mod init;
pub mod lstm;
pub mod rng;
pub mod store;
pub mod tape;

pub use archive::Archive;
pub use gradcheck::{grad_check, GradCheckReport};
pub use lstm::{lstm_step, BiLstmSpec};
pub use rng::substream;
pub use store::{AdamConfig, ParameterStore, TensorValue};
pub use tape::{NodeId, Tape};
