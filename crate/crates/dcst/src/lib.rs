//! Deep contextualized self-training for graph-based dependency parsing.
//!
//! The pipeline: train a biaffine parser on a small labeled set, parse the
//! unlabeled set, re-encode the automatic trees as word-level tag sequences,
//! pre-train BiLSTM sequence taggers on those tags, and fuse the tagger
//! encoders back into a freshly initialized parser through a gating
//! mechanism.

pub mod config;
pub mod conllu;
pub mod error;
pub mod features;
pub mod gating;
pub mod metrics;
pub mod nn;
pub mod parser;
pub mod pipeline;
pub mod synth;
pub mod tagger;
pub mod train;
pub mod tree;

pub use error::DcstError;
