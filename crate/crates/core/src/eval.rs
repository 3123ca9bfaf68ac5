//! Held-out accuracy, weight diagnostics and the loss-spike metric.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::batch::{SequenceBatch, TokenWeights};
use crate::datagen::{encode, prompt_tokens, CotExample, Symbol, TaskSpec};
use crate::error::{Error, Result};
use crate::model::{ParamVector, TinyLm};
use crate::reweight::{entropy, kl_to_uniform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub exact_match: f64,
    pub mean_eval_loss: f64,
    pub n_examples: usize,
}

/// The tokens between the first `<a>` and the next `</a>`; `None` when
/// either marker is missing.
pub fn extract_answer(generated: &[u32], spec: &TaskSpec) -> Option<Vec<u32>> {
    let open = spec.token_id(Symbol::AnsOpen);
    let close = spec.token_id(Symbol::AnsClose);
    let start = generated.iter().position(|&t| t == open)? + 1;
    let len = generated[start..].iter().position(|&t| t == close)?;
    Some(generated[start..start + len].to_vec())
}

/// Greedy-decodes one example and compares answer spans. A missing or empty
/// span, or running out of context, is a miss.
pub fn answer_correct(
    model: &TinyLm,
    params: &ParamVector,
    example: &CotExample,
    spec: &TaskSpec,
) -> Result<bool> {
    let prompt = prompt_tokens(example, spec);
    let room = model.config().context_len.saturating_sub(prompt.len());
    if room == 0 {
        return Ok(false);
    }
    let generated = model.decode_greedy(params, &prompt, room)?;
    let reference = spec.ids(example.answer_span());
    Ok(match extract_answer(&generated, spec) {
        Some(span) => !span.is_empty() && span == reference,
        None => false,
    })
}

/// Exact match under greedy decoding, and the uniform-weight token loss on
/// the reference targets.
pub fn eval_accuracy(
    model: &TinyLm,
    params: &ParamVector,
    examples: &[CotExample],
    spec: &TaskSpec,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut hits = 0usize;
    for ex in examples {
        if answer_correct(model, params, ex, spec)? {
            hits += 1;
        }
    }
    let mean_eval_loss = mean_target_loss(model, params, examples, spec)?;
    Ok(EvalReport {
        exact_match: hits as f64 / examples.len() as f64,
        mean_eval_loss,
        n_examples: examples.len(),
    })
}

pub fn mean_target_loss(
    model: &TinyLm,
    params: &ParamVector,
    examples: &[CotExample],
    spec: &TaskSpec,
) -> Result<f64> {
    let rows = examples
        .iter()
        .map(|e| encode(e, spec, model.config().context_len))
        .collect::<Result<Vec<_>>>()?;
    let losses = model.forward_token_losses(params, &SequenceBatch::new(rows))?;
    Ok(losses.uniform_mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub mean_kl_q_u: f64,
    pub mean_entropy: f64,
    /// Mean over sequences with spurious tokens of
    /// `mean(q on spurious) / (1/|y|)`; `None` if no sequence has any.
    pub spurious_mass_ratio: Option<f64>,
}

/// Diagnostics of per-sequence weight distributions. `spurious[i][t]` marks
/// the spurious supervised positions of sequence `i`.
pub fn weight_diagnostics(weights: &[Vec<f64>], spurious: &[Vec<bool>]) -> Result<WeightDiagnostics> {
    if weights.len() != spurious.len() {
        return Err(Error::LengthMismatch {
            expected: weights.len(),
            got: spurious.len(),
        });
    }
    let mut kl = 0.0;
    let mut ent = 0.0;
    let mut n = 0usize;
    let mut ratio = 0.0;
    let mut n_ratio = 0usize;
    for (i, (q, mask)) in weights.iter().zip(spurious).enumerate() {
        if q.is_empty() {
            continue;
        }
        if q.len() != mask.len() {
            return Err(Error::MisalignedWeights(format!(
                "sequence {i}: {} weights, {} mask entries",
                q.len(),
                mask.len()
            )));
        }
        kl += kl_to_uniform(q)?;
        ent += entropy(q)?;
        n += 1;
        let k = mask.iter().filter(|&&m| m).count();
        if k > 0 {
            let mass: f64 = q.iter().zip(mask).filter(|(_, &m)| m).map(|(w, _)| w).sum();
            ratio += (mass / k as f64) * q.len() as f64;
            n_ratio += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(WeightDiagnostics {
        mean_kl_q_u: kl / n as f64,
        mean_entropy: ent / n as f64,
        spurious_mass_ratio: (n_ratio > 0).then(|| ratio / n_ratio as f64),
    })
}

pub fn batch_diagnostics(weights: &TokenWeights, batch: &SequenceBatch) -> Result<WeightDiagnostics> {
    let masks: Vec<Vec<bool>> = batch.rows.iter().map(|s| s.supervised_spurious_flags()).collect();
    weight_diagnostics(&weights.rows, &masks)
}

/// Median of a slice; NaN-free input assumed. 0 for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn head_count(n: usize, fraction: f64) -> usize {
    (libm::ceil(fraction * n as f64) as usize).clamp(1, n)
}

/// `max(first early_fraction of losses) / median(last 20% of losses)`.
pub fn loss_spike_metric(losses: &[f64], early_fraction: f64) -> Result<f64> {
    if losses.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "loss series of length {} is shorter than 10",
            losses.len()
        )));
    }
    if !(early_fraction > 0.0 && early_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "early_fraction {early_fraction} outside (0, 1]"
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("loss series".into()));
    }
    let n = losses.len();
    let early = head_count(n, early_fraction);
    let tail = head_count(n, 0.2);
    let peak = losses[..early].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let base = median(&losses[n - tail..]);
    if base <= 0.0 {
        return Err(Error::InvalidArgument("tail median must be positive".into()));
    }
    Ok(peak / base)
}

/// Median of the last 20% of a series (at least one element).
pub fn tail_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = head_count(values.len(), 0.2);
    Some(median(&values[values.len() - k..]))
}
