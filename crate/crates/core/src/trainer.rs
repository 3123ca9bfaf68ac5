//! One step of reweighted SGD, and the seeded batch sampling around it.
//!
//! Every random draw of step `k` comes from a generator derived from
//! `(seed, label, k)`, so a run can stop after any step and continue
//! bit-identically from `(config, data, TrainState)` alone.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{Sequence, SequenceBatch, TokenLosses, TokenWeights};
use crate::error::{Error, Result};
use crate::eval::batch_diagnostics;
use crate::model::{ParamVector, TinyLm};
use crate::reweight::{
    calibrate_median_kl, strategy_weights, ReweightConfig, Strategy, StrategyInputs, Temperature,
    VarianceStats,
};
use crate::seed::rng_for;
use crate::utility::{descent_direction, probe_utilities_from, ProbeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    /// Heavy-ball momentum: `m <- beta m + g`, `theta <- theta - lr m`.
    SgdMomentum { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub reweight: ReweightConfig,
    pub probe: ProbeConfig,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub log_every: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// 0 disables periodic evaluation.
    pub eval_every: u64,
    /// Draw the probe batch from examples not in the training batch.
    pub probe_disjoint: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            steps: 500,
            batch_size: 16,
            reweight: ReweightConfig::default(),
            probe: ProbeConfig {
                epsilon: 1e-4,
                normalize_by_epsilon: true,
            },
            optimizer: Optimizer::Sgd,
            seed: 0,
            log_every: 1,
            checkpoint_every: 0,
            eval_every: 0,
            probe_disjoint: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} outside [0, 1]",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be >= 1".into()));
        }
        if let Optimizer::SgdMomentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("momentum {beta} outside [0, 1)")));
            }
        }
        self.reweight
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        if self.reweight.strategy == Strategy::Vcore {
            self.probe
                .validate()
                .map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// Steps completed, counting this one.
    pub step: u64,
    pub mean_loss: f64,
    pub alpha: f64,
    /// Batch temperature, when one applies.
    pub tau: Option<f64>,
    pub kl_q_u: f64,
    pub weight_entropy: f64,
    /// `None` when the batch has no spurious tokens.
    pub spurious_mass_ratio: Option<f64>,
    pub v_u: f64,
    pub v_q: f64,
    /// Norm of the applied update direction before the learning rate.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: ParamVector,
    /// Steps completed.
    pub step: u64,
    pub momentum: Option<ParamVector>,
    pub stats: VarianceStats,
    /// Temperature fixed by median-KL calibration on the first step.
    pub resolved_tau: Option<f64>,
    /// Frozen copy of the initial parameters.
    pub reference_params: ParamVector,
}

impl TrainState {
    pub fn new(params: ParamVector) -> Self {
        Self {
            reference_params: params.clone(),
            params,
            step: 0,
            momentum: None,
            stats: VarianceStats::default(),
            resolved_tau: None,
        }
    }

    pub fn fresh(model: &TinyLm) -> Self {
        Self::new(model.init_params())
    }
}

/// Everything besides the parameters that a step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDetail {
    pub log: StepLog,
    pub weights: TokenWeights,
    pub losses: TokenLosses,
    /// `alpha / |B| * sum_seq sum_t w_t grad l_t` at the pre-step parameters.
    pub update: ParamVector,
}

/// One step of reweighted SGD on batch `batch`, with
/// `probe` supplying the descent direction for `vcore`.
///
/// The state is only modified when the step succeeds.
pub fn train_step<R: Rng + ?Sized>(
    model: &TinyLm,
    state: &mut TrainState,
    batch: &SequenceBatch,
    probe: Option<&SequenceBatch>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepDetail> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let params = &state.params;
    let losses = model.forward_token_losses(params, batch)?;
    if losses.rows.iter().flatten().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!(
            "token loss at step {}",
            state.step + 1
        )));
    }

    let mut rw = cfg.reweight;
    let mut stats = state.stats;
    let mut resolved_tau = state.resolved_tau;
    let mut utilities = None;
    let mut reference = None;
    match rw.strategy {
        Strategy::Vcore => {
            let probe = probe.ok_or(Error::MissingInput {
                strategy: "vcore",
                what: "probe batch",
            })?;
            if probe.is_empty() {
                return Err(Error::EmptyBatch);
            }
            let direction = descent_direction(model, params, probe)?;
            let u = probe_utilities_from(model, params, &losses, &direction, batch, &cfg.probe)?;
            if let Temperature::MedianKl(target) = rw.temperature {
                let tau = match resolved_tau {
                    Some(t) => t,
                    None => calibrate_median_kl(&u, target)?.tau,
                };
                resolved_tau = Some(tau);
                rw.temperature = Temperature::TauEff(tau);
            }
            utilities = Some(u);
        }
        Strategy::IwSft => {
            reference = Some(model.forward_token_losses(&state.reference_params, batch)?);
        }
        _ => {}
    }
    let out = strategy_weights(
        &StrategyInputs {
            batch,
            losses: &losses,
            utilities: utilities.as_ref(),
            reference_losses: reference.as_ref(),
        },
        &rw,
        &mut stats,
        Some(rng),
    )?;

    let mut update = model.grad_weighted_loss(params, batch, &out.weights)?;
    update.scale(out.alpha / batch.len() as f64);
    if !update.is_finite() {
        return Err(Error::NonFinite(format!(
            "update at step {} (alpha {})",
            state.step + 1,
            out.alpha
        )));
    }

    let lr = cfg.learning_rate;
    let (new_params, momentum) = match cfg.optimizer {
        Optimizer::Sgd => (params.axpy(&update, -lr)?, None),
        Optimizer::SgdMomentum { beta } => {
            let m = match &state.momentum {
                Some(prev) => {
                    let mut m = prev.clone();
                    m.scale(beta);
                    m.axpy(&update, 1.0)?
                }
                None => update.clone(),
            };
            (params.axpy(&m, -lr)?, Some(m))
        }
    };
    if !new_params.is_finite() {
        return Err(Error::NonFinite(format!("parameters after step {}", state.step + 1)));
    }

    let diag = batch_diagnostics(&out.weights.normalized(), batch)?;
    let log = StepLog {
        step: state.step + 1,
        mean_loss: losses.uniform_mean(),
        alpha: out.alpha,
        tau: out.tau,
        kl_q_u: diag.mean_kl_q_u,
        weight_entropy: diag.mean_entropy,
        spurious_mass_ratio: diag.spurious_mass_ratio,
        v_u: stats.v_u,
        v_q: stats.v_q,
        grad_norm: update.norm(),
    };

    state.params = new_params;
    state.momentum = momentum;
    state.stats = stats;
    state.resolved_tau = resolved_tau;
    state.step += 1;
    Ok(StepDetail {
        log,
        weights: out.weights,
        losses,
        update,
    })
}

/// Indices of the training and probe batches for step `step` (0-based),
/// sampled uniformly with replacement. `None` when the strategy needs no
/// probe batch.
pub fn sample_step_indices(
    cfg: &TrainConfig,
    n_examples: usize,
    step: u64,
) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
    if n_examples == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut rng = rng_for(cfg.seed, "batch", step);
    let batch: Vec<usize> = (0..cfg.batch_size)
        .map(|_| rng.random_range(0..n_examples))
        .collect();
    if cfg.reweight.strategy != Strategy::Vcore {
        return Ok((batch, None));
    }
    let mut rng = rng_for(cfg.seed, "probe", step);
    let probe = if cfg.probe_disjoint {
        let mut taken = alloc::vec![false; n_examples];
        for &i in &batch {
            taken[i] = true;
        }
        let pool: Vec<usize> = (0..n_examples).filter(|&i| !taken[i]).collect();
        if pool.is_empty() {
            return Err(Error::InvalidConfig(
                "probe_disjoint needs more examples than one batch covers".into(),
            ));
        }
        (0..cfg.batch_size)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect()
    } else {
        (0..cfg.batch_size)
            .map(|_| rng.random_range(0..n_examples))
            .collect()
    };
    Ok((batch, Some(probe)))
}

fn gather(data: &[Sequence], idx: &[usize]) -> SequenceBatch {
    SequenceBatch::new(idx.iter().map(|&i| data[i].clone()).collect())
}

/// Samples the batches for the next step and applies it.
pub fn advance(
    model: &TinyLm,
    state: &mut TrainState,
    train: &[Sequence],
    cfg: &TrainConfig,
) -> Result<StepDetail> {
    let (b, p) = sample_step_indices(cfg, train.len(), state.step)?;
    let batch = gather(train, &b);
    let probe = p.map(|p| gather(train, &p));
    let mut rng = rng_for(cfg.seed, "mask", state.step);
    train_step(model, state, &batch, probe.as_ref(), cfg, &mut rng)
}

/// Runs steps until `state.step == until`, calling `on_step` after each.
pub fn run_until<F>(
    model: &TinyLm,
    state: &mut TrainState,
    train: &[Sequence],
    cfg: &TrainConfig,
    until: u64,
    mut on_step: F,
) -> Result<()>
where
    F: FnMut(&TrainState, &StepDetail) -> Result<()>,
{
    while state.step < until {
        let detail = advance(model, state, train, cfg)?;
        on_step(state, &detail)?;
    }
    Ok(())
}
