//! `(tau_eff, epsilon)` sensitivity sweeps.
//!
//! Each cell is a fresh vcore run of the base config with the cell's
//! temperature and probe scale. A failed cell is reported, not fatal.

use std::io::Write;

use vcore_core::reweight::{Strategy, Temperature};
use vcore_core::trainer::TrainConfig;
use vcore_core::ModelConfig;

use crate::dataset::Dataset;
use crate::run::run_training;
use crate::{Error, Result};

pub const COLUMNS: [&str; 7] = [
    "tau_eff",
    "epsilon",
    "exact_match",
    "mean_eval_loss",
    "mean_kl_q_u",
    "spike_metric",
    "status",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub exact_match: f64,
    pub mean_eval_loss: f64,
    pub mean_kl_q_u: f64,
    pub spike_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau_eff: f64,
    pub epsilon: f64,
    /// `Err` holds the reason the run aborted.
    pub result: std::result::Result<CellResult, String>,
}

pub fn cell_config(base: &TrainConfig, tau_eff: f64, epsilon: f64) -> TrainConfig {
    let mut c = base.clone();
    c.reweight.strategy = Strategy::Vcore;
    c.reweight.temperature = Temperature::TauEff(tau_eff);
    c.probe.epsilon = epsilon;
    c
}

fn run_cell(model: &ModelConfig, cfg: &TrainConfig, data: &Dataset) -> std::result::Result<CellResult, String> {
    let out = run_training(model, cfg, data, None, None).map_err(|e| e.to_string())?;
    let s = out.summary;
    Ok(CellResult {
        exact_match: s.exact_match,
        mean_eval_loss: s.mean_eval_loss,
        mean_kl_q_u: s.mean_kl_q_u,
        spike_metric: s.spike_metric,
    })
}

/// Rows in grid order, temperatures outer. `jobs` cells run at once.
pub fn sweep(
    model: &ModelConfig,
    base: &TrainConfig,
    data: &Dataset,
    taus: &[f64],
    epsilons: &[f64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    use rayon::prelude::*;
    if taus.is_empty() || epsilons.is_empty() {
        return Err(Error::Usage("sweep grid is empty".into()));
    }
    let cells: Vec<(f64, f64)> = taus
        .iter()
        .flat_map(|&t| epsilons.iter().map(move |&e| (t, e)))
        .collect();
    for &(t, e) in &cells {
        cell_config(base, t, e)
            .validate()
            .map_err(|err| Error::Usage(format!("cell tau_eff={t} epsilon={e}: {err}")))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|&(tau_eff, epsilon)| SweepRow {
                tau_eff,
                epsilon,
                result: run_cell(model, &cell_config(base, tau_eff, epsilon), data),
            })
            .collect()
    }))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(rows: &[SweepRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COLUMNS)?;
    for r in rows {
        let mut rec = vec![r.tau_eff.to_string(), r.epsilon.to_string()];
        match &r.result {
            Ok(c) => rec.extend([
                c.exact_match.to_string(),
                c.mean_eval_loss.to_string(),
                c.mean_kl_q_u.to_string(),
                opt(c.spike_metric),
                "ok".to_string(),
            ]),
            Err(_) => rec.extend(["", "", "", "", "failed"].map(String::from)),
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
