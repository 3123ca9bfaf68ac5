//! Training runs with metrics, checkpoints and a summary on disk.
//!
//! An output directory receives `metrics.jsonl` (one [`Record`] per line),
//! `checkpoint-NNNNNN.bin` files and `summary.json`. Nothing written there
//! depends on wall-clock time, so identical runs produce identical bytes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vcore_core::eval::{eval_accuracy, loss_spike_metric, tail_median};
use vcore_core::trainer::{advance, StepLog, TrainConfig, TrainState};
use vcore_core::{ModelConfig, TinyLm};

use crate::checkpoint;
use crate::dataset::Dataset;
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SPIKE_EARLY_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Step(StepLog),
    Eval {
        step: u64,
        exact_match: f64,
        mean_eval_loss: f64,
        n_examples: usize,
    },
}

impl Record {
    pub fn step(&self) -> u64 {
        match self {
            Record::Step(l) => l.step,
            Record::Eval { step, .. } => *step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub steps: u64,
    pub final_train_loss: f64,
    pub exact_match: f64,
    pub mean_eval_loss: f64,
    /// `None` with fewer than ten logged steps.
    pub spike_metric: Option<f64>,
    /// Median spurious-mass ratio over the last 20% of logged steps.
    pub spurious_mass_ratio: Option<f64>,
    pub mean_kl_q_u: f64,
}

pub fn summarize(records: &[Record], strategy: &str) -> Option<RunSummary> {
    let logs: Vec<&StepLog> = records
        .iter()
        .filter_map(|r| match r {
            Record::Step(l) => Some(l),
            _ => None,
        })
        .collect();
    let last = logs.last()?;
    let (exact_match, mean_eval_loss) = records.iter().rev().find_map(|r| match r {
        Record::Eval {
            step,
            exact_match,
            mean_eval_loss,
            ..
        } if *step == last.step => Some((*exact_match, *mean_eval_loss)),
        _ => None,
    })?;
    let losses: Vec<f64> = logs.iter().map(|l| l.mean_loss).collect();
    let ratios: Vec<f64> = logs.iter().filter_map(|l| l.spurious_mass_ratio).collect();
    Some(RunSummary {
        strategy: strategy.to_string(),
        steps: last.step,
        final_train_loss: last.mean_loss,
        exact_match,
        mean_eval_loss,
        spike_metric: loss_spike_metric(&losses, SPIKE_EARLY_FRACTION).ok(),
        spurious_mass_ratio: tail_median(&ratios),
        mean_kl_q_u: logs.iter().map(|l| l.kl_q_u).sum::<f64>() / logs.len() as f64,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub state: TrainState,
    pub records: Vec<Record>,
    /// Files written, in creation order.
    pub artifacts: Vec<PathBuf>,
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e)))
        .collect()
}

fn record_line(r: &Record) -> Vec<u8> {
    let mut v = serde_json::to_vec(r).expect("records serialize");
    v.push(b'\n');
    v
}

struct Sink {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl Sink {
    fn create(path: PathBuf, existing: &[Record]) -> Result<Self> {
        let f = fs::File::create(&path).map_err(Error::io(&path))?;
        let mut sink = Self {
            out: BufWriter::new(f),
            path,
        };
        for r in existing {
            sink.write(r)?;
        }
        Ok(sink)
    }

    fn write(&mut self, r: &Record) -> Result<()> {
        self.out.write_all(&record_line(r)).map_err(Error::io(&self.path))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(Error::io(&self.path))
    }
}

/// Runs `cfg.steps` steps from a fresh start or from `resume_from`, then
/// evaluates on the eval split. With `out = None` nothing is written.
///
/// On resume the metrics file keeps the records up to the checkpoint's step
/// and continues from there, so a resumed run ends with the same files as
/// an uninterrupted one.
pub fn run_training(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    out: Option<&Path>,
    resume_from: Option<&Path>,
) -> Result<RunOutcome> {
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    if model_cfg.vocab_size != data.spec.vocab_size() {
        return Err(Error::ConfigMismatch(format!(
            "model vocab {} but the task has {} tokens",
            model_cfg.vocab_size,
            data.spec.vocab_size()
        )));
    }
    let model = TinyLm::new(*model_cfg)?;
    let train = data.encode_train(model_cfg.context_len)?;
    let mut state = match resume_from {
        Some(p) => checkpoint::resume(p, model_cfg)?,
        None => TrainState::fresh(&model),
    };
    if state.step > cfg.steps {
        return Err(Error::Usage(format!(
            "checkpoint is at step {} beyond the requested {} steps",
            state.step, cfg.steps
        )));
    }
    let mut records = Vec::new();
    let mut artifacts = Vec::new();
    let mut sink = None;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let metrics = dir.join(METRICS_FILE);
        if resume_from.is_some() && metrics.exists() {
            records = read_records(&metrics)?;
            // Records the interrupted run wrote only because it ended are
            // not part of the continued one.
            let (log, eval) = (cfg.log_every, cfg.eval_every);
            records.retain(|r| match r {
                Record::Step(l) => l.step % log == 0 && l.step <= state.step,
                Record::Eval { step, .. } => eval > 0 && step % eval == 0 && *step <= state.step,
            });
        }
        sink = Some(Sink::create(metrics, &records)?);
    }

    let mut emit = |r: Record, records: &mut Vec<Record>| -> Result<()> {
        if let Some(s) = sink.as_mut() {
            s.write(&r)?;
        }
        records.push(r);
        Ok(())
    };
    let evaluate = |state: &TrainState| -> Result<Record> {
        let rep = eval_accuracy(&model, &state.params, &data.eval, &data.spec)?;
        Ok(Record::Eval {
            step: state.step,
            exact_match: rep.exact_match,
            mean_eval_loss: rep.mean_eval_loss,
            n_examples: rep.n_examples,
        })
    };

    let result = (|| -> Result<()> {
        while state.step < cfg.steps {
            let detail = advance(&model, &mut state, &train, cfg)?;
            let step = state.step;
            let last = step == cfg.steps;
            if step % cfg.log_every == 0 || last {
                emit(Record::Step(detail.log), &mut records)?;
            }
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 && !last {
                emit(evaluate(&state)?, &mut records)?;
            }
            if let Some(dir) = out {
                if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || last {
                    let path = dir.join(checkpoint::file_name(step));
                    checkpoint::save(&path, model_cfg, &state)?;
                    artifacts.push(path);
                }
            }
        }
        if !records.iter().any(|r| matches!(r, Record::Eval { step, .. } if *step == cfg.steps)) {
            emit(evaluate(&state)?, &mut records)?;
        }
        Ok(())
    })();
    if let Some(s) = sink.as_mut() {
        s.flush()?;
    }
    result?;

    let summary = summarize(&records, cfg.reweight.strategy.name())
        .ok_or_else(|| Error::Usage("run produced no step records".into()))?;
    if let Some(dir) = out {
        artifacts.insert(0, dir.join(METRICS_FILE));
        let path = dir.join(SUMMARY_FILE);
        let mut bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(Error::io(&path))?;
        artifacts.push(path);
    }
    Ok(RunOutcome {
        summary,
        state,
        records,
        artifacts,
    })
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e))
}
