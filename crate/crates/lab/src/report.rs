//! Per-strategy comparison across finished runs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::manifest::read_manifests;
use crate::run::{read_summary, RunSummary};
use crate::{Error, Result};

pub const COLUMNS: [&str; 6] = [
    "strategy",
    "runs",
    "exact_match",
    "mean_eval_loss",
    "spike_metric",
    "spurious_mass_ratio",
];

/// Means over the runs of one strategy. Optional metrics average over the
/// runs that have them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub strategy: String,
    pub runs: usize,
    pub exact_match: f64,
    pub mean_eval_loss: f64,
    pub spike_metric: Option<f64>,
    pub spurious_mass_ratio: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Refuses runs trained on different datasets.
pub fn report(run_dirs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    if run_dirs.is_empty() {
        return Err(Error::Usage("report needs at least one run directory".into()));
    }
    let mut digest: Option<(String, &Path)> = None;
    let mut by_strategy: BTreeMap<String, Vec<RunSummary>> = BTreeMap::new();
    for dir in run_dirs {
        let manifests = read_manifests(dir)?;
        let m = manifests
            .iter()
            .rev()
            .find(|m| m.command == "train")
            .ok_or_else(|| Error::format(dir, "no train manifest"))?;
        match &digest {
            Some((d, first)) if *d != m.dataset_digest => {
                return Err(Error::Usage(format!(
                    "dataset digest of {} differs from {}",
                    dir.display(),
                    first.display()
                )))
            }
            None => digest = Some((m.dataset_digest.clone(), dir)),
            _ => {}
        }
        let s = read_summary(dir)?;
        by_strategy.entry(s.strategy.clone()).or_default().push(s);
    }
    Ok(by_strategy
        .into_iter()
        .map(|(strategy, runs)| ReportRow {
            strategy,
            runs: runs.len(),
            exact_match: mean(runs.iter().map(|r| r.exact_match)).unwrap(),
            mean_eval_loss: mean(runs.iter().map(|r| r.mean_eval_loss)).unwrap(),
            spike_metric: mean(runs.iter().filter_map(|r| r.spike_metric)),
            spurious_mass_ratio: mean(runs.iter().filter_map(|r| r.spurious_mass_ratio)),
        })
        .collect())
}

pub fn write_csv<W: Write>(rows: &[ReportRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COLUMNS)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.strategy.clone(),
            r.runs.to_string(),
            r.exact_match.to_string(),
            r.mean_eval_loss.to_string(),
            opt(r.spike_metric),
            opt(r.spurious_mass_ratio),
        ])?;
    }
    out.flush()?;
    Ok(())
}
