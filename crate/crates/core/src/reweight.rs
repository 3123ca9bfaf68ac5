//! From utilities to supervision weights.
//!
//! The reweighted objective for one sequence picks a distribution `q` over
//! its supervised positions maximizing `sum_t q_t s_t` subject to
//! `KL(q || u) <= delta`, with `u` uniform. The maximizer is the Gibbs
//! distribution `q_t ∝ exp(tau s_t)`, where `tau` is fixed directly or
//! solved from `delta`. The update is then scaled by
//! `alpha = sqrt(V_u / V_q)`, matching the cross-sequence variance of the
//! reweighted descent to that of uniform weighting.
//!
//! Baselines (uniform, DFT, iw-SFT, random masking) share the same entry
//! point, [`strategy_weights`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{SequenceBatch, TokenLosses, TokenWeights};
use crate::error::{Error, Result};
use crate::utility::Utilities;

/// Fraction of supervised tokens kept by the random-mask baseline.
pub const RANDOM_KEEP_FRACTION: f64 = 0.20;
/// Clip range of the iw-SFT probability ratio.
pub const IW_CLIP: (f64, f64) = (0.2, 5.0);

const DIST_TOL: f64 = 1e-9;
const KL_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 400;
/// Largest temperature tried, in units of `1 / (max s - min s)`.
const TAU_MAX_SCALED: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Uniform,
    Vcore,
    Dft,
    IwSft,
    RandomMask,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::Vcore => "vcore",
            Strategy::Dft => "dft",
            Strategy::IwSft => "iw_sft",
            Strategy::RandomMask => "random_mask",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    Off,
    PerBatch,
    Ema,
}

/// What sets the Gibbs temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Temperature {
    /// Fixed `tau_eff`, applied to epsilon-normalized utilities.
    TauEff(f64),
    /// Per-sequence temperature with `KL(q || u) = delta`.
    KlBudget(f64),
    /// A single temperature putting the batch median of `KL(q || u)` at
    /// the given value; resolved once on the first batch by the trainer.
    MedianKl(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightConfig {
    pub strategy: Strategy,
    pub temperature: Temperature,
    pub alpha_mode: AlphaMode,
    pub alpha_clamp: (f64, f64),
    pub ema_decay: f64,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Uniform,
            temperature: Temperature::MedianKl(0.5),
            alpha_mode: AlphaMode::PerBatch,
            alpha_clamp: (0.01, 1.0),
            ema_decay: 0.9,
        }
    }
}

impl ReweightConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.alpha_clamp;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha_clamp ({lo}, {hi}) must satisfy 0 < lo <= 1 <= hi"
            )));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ema_decay {} not in (0, 1)",
                self.ema_decay
            )));
        }
        let t = match self.temperature {
            Temperature::TauEff(t) | Temperature::KlBudget(t) | Temperature::MedianKl(t) => t,
        };
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature parameter {t} must be finite and >= 0"
            )));
        }
        Ok(())
    }
}

/// `q_t = exp(tau s_t) / sum_j exp(tau s_j)`, computed relative to the
/// maximum utility. An infinite `tau` gives the uniform distribution over
/// the argmax set; an empty input gives an empty output.
pub fn gibbs_weights(utilities: &[f64], tau: f64) -> Vec<f64> {
    let n = utilities.len();
    if n == 0 {
        return Vec::new();
    }
    let tau = if tau.is_nan() || tau < 0.0 { 0.0 } else { tau };
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if tau.is_infinite() {
        let k = utilities.iter().filter(|&&s| s == max).count() as f64;
        return utilities
            .iter()
            .map(|&s| if s == max { 1.0 / k } else { 0.0 })
            .collect();
    }
    let mut q: Vec<f64> = utilities
        .iter()
        .map(|&s| libm::exp(tau * (s - max)))
        .collect();
    let z: f64 = q.iter().sum();
    for x in &mut q {
        *x /= z;
    }
    q
}

/// Gibbs weights for every row of a batch at one temperature.
pub fn gibbs_batch(utilities: &Utilities, tau: f64) -> TokenWeights {
    TokenWeights {
        rows: utilities.iter().map(|u| gibbs_weights(u, tau)).collect(),
        is_distribution: true,
    }
}

fn check_distribution(q: &[f64]) -> Result<()> {
    if q.is_empty() {
        return Err(Error::NotADistribution("empty".into()));
    }
    if q.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::NotADistribution("negative or non-finite entry".into()));
    }
    let s: f64 = q.iter().sum();
    if (s - 1.0).abs() > DIST_TOL {
        return Err(Error::NotADistribution(format!("sums to {s}")));
    }
    Ok(())
}

/// `KL(q || u) = sum_t q_t ln(q_t |y|)`, with `0 ln 0 = 0`.
pub fn kl_to_uniform(q: &[f64]) -> Result<f64> {
    check_distribution(q)?;
    Ok(kl_unchecked(q))
}

fn kl_unchecked(q: &[f64]) -> f64 {
    let n = q.len() as f64;
    q.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * libm::log(x * n))
        .sum()
}

/// Shannon entropy in nats.
pub fn entropy(q: &[f64]) -> Result<f64> {
    check_distribution(q)?;
    Ok(-q
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * libm::log(x))
        .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSolution {
    pub tau: f64,
    /// KL achieved at `tau`.
    pub kl: f64,
    /// The requested KL is not attainable at any finite temperature.
    pub saturated: bool,
}

fn spread(utilities: &[f64]) -> f64 {
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = utilities.iter().copied().fold(f64::INFINITY, f64::min);
    if utilities.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// Bisection on an increasing function `f` over `[0, tau_max]` for
/// `f(tau) = target`, with `f(0) <= target` assumed.
fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64, scale: f64) -> TemperatureSolution {
    let tau_max = TAU_MAX_SCALED / scale;
    let mut lo = 0.0;
    let mut hi = 1.0 / scale;
    let mut f_hi = f(hi);
    while f_hi < target {
        if hi >= tau_max {
            return TemperatureSolution {
                tau: tau_max,
                kl: f(tau_max),
                saturated: true,
            };
        }
        lo = hi;
        hi = (hi * 2.0).min(tau_max);
        f_hi = f(hi);
    }
    let mut mid = hi;
    let mut f_mid = f_hi;
    for _ in 0..MAX_BISECTIONS {
        if (f_mid - target).abs() <= KL_TOL || hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
        mid = 0.5 * (lo + hi);
        f_mid = f(mid);
        if f_mid < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    TemperatureSolution {
        tau: mid,
        kl: f_mid,
        saturated: false,
    }
}

/// Temperature with `KL(q_tau || u) = delta` for one sequence.
///
/// `KL(q_tau || u)` increases from 0 towards `ln(|y| / k)` as `tau` grows,
/// where `k` is the number of positions tied at the maximum utility. A
/// budget at or beyond that supremum returns the largest temperature tried
/// and sets `saturated`.
pub fn solve_temperature(utilities: &[f64], delta: f64) -> Result<TemperatureSolution> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("KL budget {delta} must be >= 0")));
    }
    if utilities.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("utilities".into()));
    }
    let n = utilities.len();
    if delta == 0.0 || n == 0 {
        return Ok(TemperatureSolution {
            tau: 0.0,
            kl: 0.0,
            saturated: delta > 0.0,
        });
    }
    let width = spread(utilities);
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = utilities.iter().filter(|&&s| s == max).count();
    let supremum = libm::log(n as f64 / ties as f64);
    if width == 0.0 || delta >= supremum {
        let tau = if width == 0.0 {
            TAU_MAX_SCALED
        } else {
            TAU_MAX_SCALED / width
        };
        return Ok(TemperatureSolution {
            tau,
            kl: kl_unchecked(&gibbs_weights(utilities, tau)),
            saturated: true,
        });
    }
    Ok(bisect_increasing(
        |tau| kl_unchecked(&gibbs_weights(utilities, tau)),
        delta,
        width,
    ))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One temperature for the whole batch, chosen so the median per-sequence
/// `KL(q || u)` equals `target`.
pub fn calibrate_median_kl(utilities: &Utilities, target: f64) -> Result<TemperatureSolution> {
    if !(target >= 0.0) {
        return Err(Error::InvalidArgument(format!("target KL {target} must be >= 0")));
    }
    let median_kl = |tau: f64| {
        let mut kls: Vec<f64> = utilities
            .iter()
            .filter(|u| !u.is_empty())
            .map(|u| kl_unchecked(&gibbs_weights(u, tau)))
            .collect();
        median(&mut kls)
    };
    let width = utilities
        .iter()
        .map(|u| spread(u))
        .fold(0.0f64, f64::max);
    if target == 0.0 {
        return Ok(TemperatureSolution {
            tau: 0.0,
            kl: 0.0,
            saturated: false,
        });
    }
    if width == 0.0 {
        return Ok(TemperatureSolution {
            tau: TAU_MAX_SCALED,
            kl: 0.0,
            saturated: true,
        });
    }
    Ok(bisect_increasing(median_kl, target, width))
}

/// Cross-sequence variance statistics of the per-sequence descent scalars
/// `a_i = sum_t q_t s_t` (reweighted) and `b_i = sum_t s_t / |y|` (uniform).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VarianceStats {
    pub v_u: f64,
    pub v_q: f64,
    /// Sequences in the most recent batch.
    pub sample_count: u64,
    pub ema_v_u: f64,
    pub ema_v_q: f64,
    /// Batches folded into the EMA fields.
    pub ema_updates: u64,
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

/// Per-sequence `(a_i, b_i)`.
pub fn descent_scalars(utilities: &Utilities, weights: &TokenWeights) -> (Vec<f64>, Vec<f64>) {
    utilities
        .iter()
        .zip(&weights.rows)
        .map(|(s, q)| {
            let u = 1.0 / s.len().max(1) as f64;
            let a = s.iter().zip(q).map(|(s, q)| q * s).sum::<f64>();
            let b = s.iter().map(|s| u * s).sum::<f64>();
            (a, b)
        })
        .unzip()
}

impl VarianceStats {
    /// Replaces the per-batch variances with this batch's sample variances
    /// and folds them into the EMA (the first batch initializes it).
    /// Batches of one sequence leave the EMA untouched.
    pub fn update(&mut self, utilities: &Utilities, weights: &TokenWeights, ema_decay: f64) {
        let (a, b) = descent_scalars(utilities, weights);
        self.update_from_scalars(&a, &b, ema_decay);
    }

    pub fn update_from_scalars(&mut self, a: &[f64], b: &[f64], ema_decay: f64) {
        self.sample_count = a.len() as u64;
        self.v_q = sample_variance(a);
        self.v_u = sample_variance(b);
        if a.len() < 2 {
            return;
        }
        if self.ema_updates == 0 {
            self.ema_v_q = self.v_q;
            self.ema_v_u = self.v_u;
        } else {
            self.ema_v_q = ema_decay * self.ema_v_q + (1.0 - ema_decay) * self.v_q;
            self.ema_v_u = ema_decay * self.ema_v_u + (1.0 - ema_decay) * self.v_u;
        }
        self.ema_updates += 1;
    }
}

pub fn update_variance_stats(
    stats: &VarianceStats,
    utilities: &Utilities,
    weights: &TokenWeights,
    ema_decay: f64,
) -> VarianceStats {
    let mut next = *stats;
    next.update(utilities, weights, ema_decay);
    next
}

/// `alpha = sqrt(V_u / V_q)` clamped to `cfg.alpha_clamp`; 1 when the
/// estimate is unavailable (fewer than two sequences, or `V_q = 0`).
pub fn variance_alpha(stats: &VarianceStats, cfg: &ReweightConfig) -> f64 {
    let (v_u, v_q) = match cfg.alpha_mode {
        AlphaMode::Off => return 1.0,
        AlphaMode::PerBatch => {
            if stats.sample_count < 2 {
                return 1.0;
            }
            (stats.v_u, stats.v_q)
        }
        AlphaMode::Ema => {
            if stats.ema_updates == 0 {
                return 1.0;
            }
            (stats.ema_v_u, stats.ema_v_q)
        }
    };
    if v_q <= 0.0 {
        return 1.0;
    }
    let (lo, hi) = cfg.alpha_clamp;
    libm::sqrt(v_u / v_q).clamp(lo, hi)
}

/// Everything a strategy may need. Losses are taken at the current
/// parameters; `reference_losses` at the frozen reference parameters.
pub struct StrategyInputs<'a> {
    pub batch: &'a SequenceBatch,
    pub losses: &'a TokenLosses,
    pub utilities: Option<&'a Utilities>,
    pub reference_losses: Option<&'a TokenLosses>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutput {
    pub weights: TokenWeights,
    pub alpha: f64,
    /// Temperature used when one temperature applies to the whole batch.
    pub tau: Option<f64>,
}

/// Weights and scaling factor for one batch under `cfg.strategy`.
///
/// For `vcore` the variance statistics are updated from this batch before
/// `alpha` is computed. `rng` is only consulted by `random_mask`.
pub fn strategy_weights<R: Rng + ?Sized>(
    inputs: &StrategyInputs<'_>,
    cfg: &ReweightConfig,
    stats: &mut VarianceStats,
    rng: Option<&mut R>,
) -> Result<StrategyOutput> {
    let batch = inputs.batch;
    if inputs.losses.rows.len() != batch.len() {
        return Err(Error::LengthMismatch {
            expected: batch.len(),
            got: inputs.losses.rows.len(),
        });
    }
    let uniform_out = |weights| StrategyOutput {
        weights,
        alpha: 1.0,
        tau: None,
    };
    match cfg.strategy {
        Strategy::Uniform => Ok(uniform_out(TokenWeights::uniform(batch))),
        Strategy::Vcore => {
            let utilities = inputs.utilities.ok_or(Error::MissingInput {
                strategy: "vcore",
                what: "utilities",
            })?;
            let (weights, tau) = match cfg.temperature {
                Temperature::TauEff(t) => (gibbs_batch(utilities, t), Some(t)),
                Temperature::MedianKl(target) => {
                    let t = calibrate_median_kl(utilities, target)?.tau;
                    (gibbs_batch(utilities, t), Some(t))
                }
                Temperature::KlBudget(delta) => {
                    let rows = utilities
                        .iter()
                        .map(|u| Ok(gibbs_weights(u, solve_temperature(u, delta)?.tau)))
                        .collect::<Result<Vec<_>>>()?;
                    (
                        TokenWeights {
                            rows,
                            is_distribution: true,
                        },
                        None,
                    )
                }
            };
            stats.update(utilities, &weights, cfg.ema_decay);
            let alpha = variance_alpha(stats, cfg);
            Ok(StrategyOutput {
                weights,
                alpha,
                tau,
            })
        }
        Strategy::Dft => {
            let rows = inputs
                .losses
                .rows
                .iter()
                .map(|r| {
                    let n = r.len() as f64;
                    r.iter().map(|&l| libm::exp(-l) / n).collect()
                })
                .collect();
            Ok(uniform_out(TokenWeights {
                rows,
                is_distribution: false,
            }))
        }
        Strategy::IwSft => {
            let reference = inputs.reference_losses.ok_or(Error::MissingInput {
                strategy: "iw_sft",
                what: "reference parameters",
            })?;
            let rows = inputs
                .losses
                .rows
                .iter()
                .zip(&reference.rows)
                .map(|(cur, refr)| {
                    let n = cur.len() as f64;
                    cur.iter()
                        .zip(refr)
                        // p / p_ref = exp(l_ref - l)
                        .map(|(&l, &lr)| libm::exp(lr - l).clamp(IW_CLIP.0, IW_CLIP.1) / n)
                        .collect()
                })
                .collect();
            Ok(uniform_out(TokenWeights {
                rows,
                is_distribution: false,
            }))
        }
        Strategy::RandomMask => {
            let rng = rng.ok_or(Error::MissingInput {
                strategy: "random_mask",
                what: "rng",
            })?;
            let rows = batch
                .rows
                .iter()
                .map(|s| random_mask_row(&s.supervised_answer_flags(), rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(uniform_out(TokenWeights {
                rows,
                is_distribution: true,
            }))
        }
    }
}

/// Keeps every answer position plus uniformly sampled other positions until
/// `round(0.2 |y|)` are kept (never fewer than the answer positions), each
/// with weight `1 / kept`.
pub fn random_mask_row<R: Rng + ?Sized>(answer_flags: &[bool], rng: &mut R) -> Result<Vec<f64>> {
    let n = answer_flags.len();
    let answers = answer_flags.iter().filter(|&&a| a).count();
    if answers == 0 {
        return Err(Error::MissingInput {
            strategy: "random_mask",
            what: "answer positions",
        });
    }
    let target = (libm::round(RANDOM_KEEP_FRACTION * n as f64) as usize)
        .max(answers)
        .min(n);
    let others: Vec<usize> = (0..n).filter(|&t| !answer_flags[t]).collect();
    let extra = target - answers;
    let mut keep: Vec<bool> = answer_flags.to_vec();
    for i in rand::seq::index::sample(rng, others.len(), extra).iter() {
        keep[others[i]] = true;
    }
    let w = 1.0 / target as f64;
    Ok(keep.iter().map(|&k| if k { w } else { 0.0 }).collect())
}

/// Per-row KL of weights (normalized first when they are not already a
/// distribution); handy for logging any strategy.
pub fn row_kls(weights: &TokenWeights) -> Vec<f64> {
    let norm;
    let w = if weights.is_distribution {
        weights
    } else {
        norm = weights.normalized();
        &norm
    };
    w.rows
        .iter()
        .filter(|r| !r.is_empty())
        .map(|r| kl_unchecked(r))
        .collect()
}

/// Uniform weights over a row of length `n`.
pub fn uniform_row(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gibbs_closed_form() {
        let q = gibbs_weights(&[0.0, libm::log(2.0), libm::log(4.0)], 1.0);
        for (a, b) in q.iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gibbs_zero_temperature_is_exactly_uniform() {
        let q = gibbs_weights(&[3.0, -1.0, 0.25, 8.0, 2.0], 0.0);
        assert!(q.iter().all(|&x| x == uniform_row(5)[0]));
        let q = gibbs_weights(&[2.0; 4], 7.0);
        assert!(q.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn gibbs_survives_extreme_inputs() {
        let q = gibbs_weights(&[1e300, -1e300, 0.0], 1e10);
        assert_eq!(q, vec![1.0, 0.0, 0.0]);
        let q = gibbs_weights(&[1.0, 1.0, 0.0], f64::INFINITY);
        assert_eq!(q, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn kl_values() {
        assert!(kl_to_uniform(&uniform_row(7)).unwrap().abs() < 1e-15);
        let k = kl_to_uniform(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((k - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert!(kl_to_uniform(&[0.5, 0.6]).is_err());
        assert!(kl_to_uniform(&[]).is_err());
    }

    #[test]
    fn temperature_edge_cases() {
        let s = [0.3, -0.1, 0.9, 0.2];
        let zero = solve_temperature(&s, 0.0).unwrap();
        assert_eq!(zero.tau, 0.0);
        assert!(!zero.saturated);

        let flat = solve_temperature(&[0.5; 5], 0.1).unwrap();
        assert!(flat.saturated);

        // Unique max on 4 positions: supremum ln 4.
        let sat = solve_temperature(&s, 1.5).unwrap();
        assert!(sat.saturated);
        let ok = solve_temperature(&s, 1.3).unwrap();
        assert!(!ok.saturated);
        assert!((ok.kl - 1.3).abs() <= 1e-8);

        // Two tied maxima on 4 positions: supremum ln 2.
        let tied = solve_temperature(&[1.0, 1.0, 0.0, -1.0], 0.7).unwrap();
        assert!(tied.saturated);
        assert!(solve_temperature(&s, -0.1).is_err());
    }

    #[test]
    fn variance_stats_identities() {
        let utils: Utilities = vec![vec![0.1, 0.5, -0.3], vec![1.0, 0.0, 0.2, 0.4], vec![0.7, 0.7]];
        let uniform = TokenWeights {
            rows: utils.iter().map(|u| uniform_row(u.len())).collect(),
            is_distribution: true,
        };
        let st = update_variance_stats(&VarianceStats::default(), &utils, &uniform, 0.9);
        assert_eq!(st.v_q, st.v_u);
        assert_eq!(st.sample_count, 3);
        let cfg = ReweightConfig {
            strategy: Strategy::Vcore,
            ..Default::default()
        };
        assert_eq!(variance_alpha(&st, &cfg), 1.0);

        let same: Utilities = vec![vec![0.1, 0.5]; 4];
        let q = gibbs_batch(&same, 3.0);
        let st = update_variance_stats(&VarianceStats::default(), &same, &q, 0.9);
        assert_eq!((st.v_q, st.v_u), (0.0, 0.0));
        assert_eq!(variance_alpha(&st, &cfg), 1.0);
    }

    #[test]
    fn alpha_arithmetic_and_clamp() {
        let mut st = VarianceStats {
            v_u: 1.0,
            v_q: 4.0,
            sample_count: 8,
            ..Default::default()
        };
        let mut cfg = ReweightConfig::default();
        assert_eq!(variance_alpha(&st, &cfg), 0.5);
        st.v_q = 1e8;
        assert_eq!(variance_alpha(&st, &cfg), 0.01);
        st.v_q = 0.25;
        assert_eq!(variance_alpha(&st, &cfg), 1.0);
        cfg.alpha_clamp = (0.01, 4.0);
        assert_eq!(variance_alpha(&st, &cfg), 2.0);
        st.sample_count = 1;
        assert_eq!(variance_alpha(&st, &cfg), 1.0);
        cfg.alpha_mode = AlphaMode::Off;
        st.sample_count = 8;
        assert_eq!(variance_alpha(&st, &cfg), 1.0);
    }

    #[test]
    fn ema_tracks_batches_and_skips_singletons() {
        let mut st = VarianceStats::default();
        st.update_from_scalars(&[0.0, 2.0], &[0.0, 1.0], 0.9);
        assert_eq!((st.ema_v_q, st.ema_v_u, st.ema_updates), (2.0, 0.5, 1));
        st.update_from_scalars(&[0.0, 4.0], &[0.0, 1.0], 0.9);
        assert!((st.ema_v_q - (0.9 * 2.0 + 0.1 * 8.0)).abs() < 1e-12);
        st.update_from_scalars(&[5.0], &[1.0], 0.9);
        assert_eq!(st.ema_updates, 2);
        assert_eq!(st.sample_count, 1);
        let cfg = ReweightConfig {
            alpha_mode: AlphaMode::Ema,
            ..Default::default()
        };
        let expect = libm::sqrt(st.ema_v_u / st.ema_v_q);
        assert_eq!(variance_alpha(&st, &cfg), expect);
    }

    #[test]
    fn random_mask_keeps_answers_and_count() {
        let mut flags = vec![false; 20];
        flags[17] = true;
        flags[18] = true;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_mask_row(&flags, &mut rng).unwrap();
            assert_eq!(w.iter().filter(|&&x| x > 0.0).count(), 4);
            assert_eq!((w[17], w[18]), (0.25, 0.25));
        }
        // More answers than the 20% budget: all answers kept, nothing else.
        let w = random_mask_row(&[true, true, false, false, false], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(w, vec![0.5, 0.5, 0.0, 0.0, 0.0]);
        assert!(random_mask_row(&[false; 5], &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ReweightConfig::default().validate().is_ok());
        let mut c = ReweightConfig::default();
        c.alpha_clamp = (0.0, 1.0);
        assert!(c.validate().is_err());
        c.alpha_clamp = (0.5, 0.9);
        assert!(c.validate().is_err());
        let mut c = ReweightConfig::default();
        c.ema_decay = 1.0;
        assert!(c.validate().is_err());
        let mut c = ReweightConfig::default();
        c.temperature = Temperature::TauEff(-1.0);
        assert!(c.validate().is_err());
    }
}
