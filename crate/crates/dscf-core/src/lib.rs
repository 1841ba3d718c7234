//! Deep social collaborative filtering for rating prediction.
//!
//! The pipeline turns a trust network and a rating history into per-pair
//! predictions: random walks over the social graph produce user sequences,
//! each walked-to user contributes their train-time interaction most similar
//! to the target item (with its rating), and a Bi-LSTM encoder with two
//! attention levels turns those item-aware sequences into a social context
//! vector that feeds a small MLP rating head. Training, evaluation, and the
//! matrix-factorization baselines live here too; the `dscf` binary in the
//! sibling crate drives everything from the command line.

pub mod data;
pub mod error;
pub mod features;
pub mod graph;
pub mod model;
pub mod neumf;
pub mod nn;
pub mod pmf;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
