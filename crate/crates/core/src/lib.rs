//! Variance-controlled, optimization-based per-token reweighting for
//! chain-of-thought supervision, on a tiny autoregressive model.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every numeric piece
//! of the pipeline:
//!
//! - [`model`]: a small pre-norm transformer with exact per-token losses and
//!   hand-written reverse-mode gradients of arbitrarily weighted losses.
//! - [`utility`]: per-token gradient utilities, both the exact inner-product
//!   oracle and the one-backward forward probing estimator.
//! - [`reweight`]: Gibbs weights, the KL temperature solver, the variance
//!   control coefficient and the baseline weighting strategies.
//! - [`datagen`]: synthetic modular-arithmetic chain-of-thought examples with
//!   labelled spurious tokens.
//! - [`trainer`]: one SGD step of the reweighted objective and the seeded
//!   sampling around it.
//! - [`eval`]: greedy-decoding accuracy, weight diagnostics and the
//!   loss-spike metric.
//!
//! File formats, checkpoints and the command-line tool live in `vcore-lab`.

#![no_std]

extern crate alloc;

pub mod batch;
pub mod datagen;
mod error;
pub mod eval;
pub mod model;
pub mod reweight;
pub mod seed;
pub mod trainer;
pub mod utility;

pub use batch::{Sequence, SequenceBatch, TokenLosses, TokenWeights};
pub use error::{Error, Result};
pub use model::{ModelConfig, ParamVector, TinyLm};
