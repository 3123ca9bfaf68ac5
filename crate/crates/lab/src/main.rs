use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use vcore_core::datagen::{NoiseMode, NoiseSpec, Op, TaskSpec};
use vcore_core::eval::eval_accuracy;
use vcore_core::TinyLm;
use vcore_lab::config::{ModelSection, ProbeSection, ReweightSection, Settings, TrainSection};
use vcore_lab::manifest::RunManifest;
use vcore_lab::probe_check::{probe_check, Direction};
use vcore_lab::{checkpoint, dataset, report, run, sweep, Error, Result};

#[derive(Parser)]
#[command(name = "vcore", version, about = "Variance-controlled token reweighting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Distractor,
    Corrupt,
}

#[derive(clap::Args)]
struct RunFlags {
    /// TOML file; flags override its values.
    #[arg(long, env = "VCORE_CONFIG")]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelSection,
    #[command(flatten)]
    train: TrainSection,
    #[command(flatten)]
    reweight: ReweightSection,
    #[command(flatten)]
    probe: ProbeSection,
}

impl RunFlags {
    fn settings(&self) -> Result<Settings> {
        let flags = Settings {
            model: self.model.clone(),
            train: self.train.clone(),
            reweight: self.reweight.clone(),
            probe: self.probe.clone(),
        };
        Ok(match &self.config {
            Some(p) => flags.over(&Settings::from_toml_file(p)?),
            None => flags,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and eval splits.
    GenData {
        #[arg(long)]
        modulus: u32,
        #[arg(long, default_value_t = 4)]
        chain: usize,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [OpArg::Add, OpArg::Sub, OpArg::Mul])]
        ops: Vec<OpArg>,
        #[arg(long = "train", default_value_t = 512)]
        n_train: usize,
        #[arg(long = "eval", default_value_t = 128)]
        n_eval: usize,
        /// Fraction of each training rationale that is spurious.
        #[arg(long, default_value_t = 0.0)]
        spurious: f64,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [NoiseArg::Distractor, NoiseArg::Corrupt])]
        noise_modes: Vec<NoiseArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write metrics, checkpoints and a summary.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Greedy-decoding exact match of a checkpoint on the eval split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare probe utilities with exact ones on the built-in toy model.
    ProbeCheck {
        #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-4, 1e-5])]
        epsilons: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Direction::Descent)]
        direction: Direction,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exit with status 4 if any max relative error exceeds this.
        #[arg(long)]
        fail_above: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one vcore run per (tau_eff, epsilon) cell.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<f64>,
        #[arg(long = "epsilons", value_delimiter = ',', required = true)]
        sweep_epsilons: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Summarize finished runs per strategy.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => std::io::stdout().write_all(bytes).map_err(|source| Error::Io {
            path: "<stdout>".into(),
            source,
        }),
    }
}

fn table(out: Option<&Path>, write: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| Error::Usage(e.to_string()))?;
    emit(out, &buf)
}

fn parent(p: &Path) -> &Path {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    let started = Instant::now();
    match cmd {
        Command::GenData {
            modulus,
            chain,
            ops,
            n_train,
            n_eval,
            spurious,
            noise_modes,
            seed,
            out,
        } => {
            let ops: Vec<Op> = ops
                .iter()
                .map(|o| match o {
                    OpArg::Add => Op::Add,
                    OpArg::Sub => Op::Sub,
                    OpArg::Mul => Op::Mul,
                })
                .collect();
            let spec = TaskSpec::new(modulus, chain, ops).map_err(|e| Error::Usage(e.to_string()))?;
            let noise = NoiseSpec {
                spurious_rate: spurious,
                modes: noise_modes
                    .iter()
                    .map(|m| match m {
                        NoiseArg::Distractor => NoiseMode::DistractorStep,
                        NoiseArg::Corrupt => NoiseMode::CorruptedValue,
                    })
                    .collect(),
                seed,
            };
            noise.validate().map_err(|e| Error::Usage(e.to_string()))?;
            let data = dataset::build_dataset(&out, &spec, n_train, n_eval, Some(&noise), seed)?;
            let spurious_tokens: usize = data.train.iter().map(|e| e.spurious_positions.len()).sum();
            let (tp, ep) = dataset::paths(&out);
            let mut m = RunManifest::new(
                "gen-data",
                json!({ "task": spec, "n_train": n_train, "n_eval": n_eval, "noise": noise, "seed": seed }),
                data.digest.clone(),
            );
            m.artifacts = vec![tp, ep];
            m.wall_clock_secs = started.elapsed().as_secs_f64();
            m.append_to(&out)?;
            println!(
                "train {} eval {} spurious_tokens {} vocab {} digest {}",
                data.train.len(),
                data.eval.len(),
                spurious_tokens,
                spec.vocab_size(),
                data.digest
            );
        }
        Command::Train {
            data,
            out,
            resume,
            flags,
        } => {
            let settings = flags.settings()?;
            let data = dataset::load_dataset(&data)?;
            let (model_cfg, cfg) = settings.resolve(data.spec.vocab_size())?;
            let outcome = run::run_training(&model_cfg, &cfg, &data, Some(&out), resume.as_deref())?;
            let mut m = RunManifest::new(
                "train",
                json!({ "model": model_cfg, "train": cfg, "resumed_from": resume }),
                data.digest.clone(),
            );
            m.artifacts = outcome.artifacts;
            m.wall_clock_secs = started.elapsed().as_secs_f64();
            m.append_to(&out)?;
            let s = &outcome.summary;
            println!(
                "strategy {} steps {} train_loss {} exact_match {} eval_loss {}",
                s.strategy, s.steps, s.final_train_loss, s.exact_match, s.mean_eval_loss
            );
        }
        Command::Eval { data, checkpoint } => {
            let data = dataset::load_dataset(&data)?;
            let (model_cfg, state) = checkpoint::load(&checkpoint)?;
            if model_cfg.vocab_size != data.spec.vocab_size() {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint vocab {} but the task has {} tokens",
                    model_cfg.vocab_size,
                    data.spec.vocab_size()
                )));
            }
            let model = TinyLm::new(model_cfg)?;
            let rep = eval_accuracy(&model, &state.params, &data.eval, &data.spec)?;
            let mut line = serde_json::to_vec(&rep).expect("report serializes");
            line.push(b'\n');
            emit(None, &line)?;
        }
        Command::ProbeCheck {
            epsilons,
            direction,
            seed,
            fail_above,
            out,
        } => {
            let rows = probe_check(&epsilons, direction, seed)?;
            table(out.as_deref(), |b| vcore_lab::probe_check::write_csv(&rows, b))?;
            if let Some(limit) = fail_above {
                if let Some(r) = rows.iter().find(|r| !(r.max_rel_error <= limit)) {
                    return Err(Error::Threshold(format!(
                        "max relative error {} at epsilon {} exceeds {limit}",
                        r.max_rel_error, r.epsilon
                    )));
                }
            }
        }
        Command::Sweep {
            data,
            taus,
            sweep_epsilons,
            jobs,
            out,
            flags,
        } => {
            let mut settings = flags.settings()?;
            settings.reweight.strategy = None;
            let data = dataset::load_dataset(&data)?;
            let (model_cfg, base) = settings.resolve(data.spec.vocab_size())?;
            let rows = sweep::sweep(&model_cfg, &base, &data, &taus, &sweep_epsilons, jobs)?;
            table(Some(&out), |b| sweep::write_csv(&rows, b))?;
            for r in &rows {
                if let Err(e) = &r.result {
                    eprintln!("cell tau_eff={} epsilon={} failed: {e}", r.tau_eff, r.epsilon);
                }
            }
            let mut m = RunManifest::new(
                "sweep",
                json!({ "model": model_cfg, "base": base, "taus": taus, "epsilons": sweep_epsilons }),
                data.digest.clone(),
            );
            m.artifacts = vec![out.clone()];
            m.wall_clock_secs = started.elapsed().as_secs_f64();
            m.append_to(parent(&out))?;
        }
        Command::Report { runs, out } => {
            let rows = report::report(&runs)?;
            table(out.as_deref(), |b| report::write_csv(&rows, b))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
