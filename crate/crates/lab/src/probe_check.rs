//! Probe estimator against exact utilities on a built-in toy case.

use std::io::Write;

use clap::ValueEnum;
use rand::Rng;
use rand_distr::StandardNormal;
use vcore_core::seed::rng_for;
use vcore_core::utility::{descent_direction, exact_utilities, probe_utilities, relative_errors, ProbeConfig};
use vcore_core::{ModelConfig, ParamVector, Sequence, SequenceBatch, TinyLm};

use crate::{Error, Result};

pub const COLUMNS: [&str; 3] = ["epsilon", "max_rel_error", "mean_rel_error"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    /// The uniform descent direction of the toy sequence itself.
    Descent,
    Zero,
    /// Gaussian, rescaled to the descent direction's norm.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub epsilon: f64,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

/// Vocab 16, `d_model` 16, one block, one fully supervised 32-token
/// sequence, parameters jittered off the initialization.
pub fn toy_case(seed: u64) -> Result<(TinyLm, ParamVector, SequenceBatch)> {
    let model = TinyLm::new(ModelConfig {
        vocab_size: 16,
        context_len: 32,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        init_seed: seed,
    })?;
    let mut rng = rng_for(seed, "toy", 0);
    let tokens: Vec<u32> = (0..32).map(|_| rng.random_range(4..16)).collect();
    let batch = SequenceBatch::new(vec![Sequence::fully_supervised(tokens)?]);
    let params = ParamVector(
        model
            .init_params()
            .0
            .iter()
            .map(|p| p + 0.1 * (2.0 * rng.random::<f64>() - 1.0))
            .collect(),
    );
    Ok((model, params, batch))
}

pub fn probe_check(epsilons: &[f64], direction: Direction, seed: u64) -> Result<Vec<ProbeRow>> {
    if epsilons.is_empty() {
        return Err(Error::Usage("no epsilons given".into()));
    }
    let (model, params, batch) = toy_case(seed)?;
    let descent = descent_direction(&model, &params, &batch)?;
    let dir = match direction {
        Direction::Descent => descent,
        Direction::Zero => ParamVector::zeros(params.len()),
        Direction::Random => {
            let mut rng = rng_for(seed, "direction", 0);
            let mut d = ParamVector((0..params.len()).map(|_| rng.sample(StandardNormal)).collect());
            d.scale(descent.norm() / d.norm());
            d
        }
    };
    let exact = exact_utilities(&model, &dir, &params, &batch)?;
    epsilons
        .iter()
        .map(|&epsilon| {
            let cfg = ProbeConfig::new(epsilon).map_err(|e| Error::Usage(e.to_string()))?;
            let est = probe_utilities(&model, &params, &dir, &batch, &cfg)?;
            let (max_rel_error, mean_rel_error) = relative_errors(&est, &exact);
            Ok(ProbeRow {
                epsilon,
                max_rel_error,
                mean_rel_error,
            })
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[ProbeRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COLUMNS)?;
    for r in rows {
        out.write_record([
            r.epsilon.to_string(),
            r.max_rel_error.to_string(),
            r.mean_rel_error.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
