//! Per-token gradient utilities `s_t = <d, grad l_t>`, where `d` is the
//! uniform-weight gradient of a probe batch.
//!
//! [`exact_utilities`] computes the inner products directly, one backward
//! pass per token. [`probe_utilities`] estimates all of them at once from the
//! change in token losses after a step of size `epsilon` along `-d`, which
//! costs forward passes only.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::batch::{SequenceBatch, TokenLosses, TokenWeights};
use crate::error::{Error, Result};
use crate::model::{ParamVector, TinyLm};

/// Utilities per sequence, one entry per supervised position.
pub type Utilities = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epsilon: f64,
    /// Divide the loss difference by `epsilon`. When false the raw
    /// difference `l_t(theta) - l_t(theta - epsilon d)` is returned.
    pub normalize_by_epsilon: bool,
}

impl ProbeConfig {
    pub const MIN_EPSILON: f64 = 1e-8;
    pub const MAX_EPSILON: f64 = 1e-1;

    pub fn new(epsilon: f64) -> Result<Self> {
        let cfg = Self {
            epsilon,
            normalize_by_epsilon: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(Self::MIN_EPSILON..=Self::MAX_EPSILON).contains(&self.epsilon) {
            return Err(Error::InvalidArgument(alloc::format!(
                "epsilon {} outside [{}, {}]",
                self.epsilon,
                Self::MIN_EPSILON,
                Self::MAX_EPSILON
            )));
        }
        Ok(())
    }
}

/// Uniform-weight batch gradient: `1/|y|` per token, summed over sequences,
/// then divided by the number of sequences.
pub fn descent_direction(
    model: &TinyLm,
    params: &ParamVector,
    probe_batch: &SequenceBatch,
) -> Result<ParamVector> {
    if probe_batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let weights = TokenWeights::uniform(probe_batch);
    let mut g = model.grad_weighted_loss(params, probe_batch, &weights)?;
    g.scale(1.0 / probe_batch.len() as f64);
    Ok(g)
}

/// Exact `<direction, grad l_t>` for every supervised position.
pub fn exact_utilities(
    model: &TinyLm,
    direction: &ParamVector,
    params: &ParamVector,
    batch: &SequenceBatch,
) -> Result<Utilities> {
    if direction.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            got: direction.len(),
        });
    }
    batch
        .rows
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            seq.supervised_positions()
                .map(|t| model.grad_token_loss(params, batch, i, t)?.dot(direction))
                .collect()
        })
        .collect()
}

/// Probing estimate of the utilities. Two forward evaluations, no backward.
pub fn probe_utilities(
    model: &TinyLm,
    params: &ParamVector,
    direction: &ParamVector,
    batch: &SequenceBatch,
    cfg: &ProbeConfig,
) -> Result<Utilities> {
    let base = model.forward_token_losses(params, batch)?;
    probe_utilities_from(model, params, &base, direction, batch, cfg)
}

/// As [`probe_utilities`], reusing already computed losses at `params`
/// (one forward evaluation).
pub fn probe_utilities_from(
    model: &TinyLm,
    params: &ParamVector,
    base_losses: &TokenLosses,
    direction: &ParamVector,
    batch: &SequenceBatch,
    cfg: &ProbeConfig,
) -> Result<Utilities> {
    cfg.validate()?;
    if !direction.is_finite() {
        return Err(Error::NonFinite("probe direction".into()));
    }
    let perturbed = params.axpy(direction, -cfg.epsilon)?;
    let shifted = model.forward_token_losses(&perturbed, batch)?;
    let mut out = Vec::with_capacity(batch.len());
    for (l0, l1) in base_losses.rows.iter().zip(&shifted.rows) {
        let mut row = Vec::with_capacity(l0.len());
        for (&a, &b) in l0.iter().zip(l1) {
            if !b.is_finite() {
                return Err(Error::NonFinite(
                    "perturbed token loss (epsilon too large?)".into(),
                ));
            }
            let diff = a - b;
            row.push(if cfg.normalize_by_epsilon {
                diff / cfg.epsilon
            } else {
                diff
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// `(max_t |est - exact|, mean_t |est - exact|)`, both divided by
/// `max_t |exact| + 1e-12`.
pub fn relative_errors(estimate: &Utilities, exact: &Utilities) -> (f64, f64) {
    let scale = exact
        .iter()
        .flatten()
        .fold(0.0f64, |m, s| m.max(s.abs()))
        + 1e-12;
    let mut max_err = 0.0f64;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (e, x) in estimate.iter().flatten().zip(exact.iter().flatten()) {
        let err = (e - x).abs();
        max_err = max_err.max(err);
        sum += err;
        n += 1;
    }
    let mean = if n == 0 { 0.0 } else { sum / n as f64 };
    (max_err / scale, mean / scale)
}
