//! Run configuration: a TOML file merged with command-line flags.
//!
//! Every key is optional in both places. A flag (or its `VCORE_*`
//! environment variable) wins over the file, and the file wins over the
//! built-in default. The file mirrors the flag names, grouped in sections:
//!
//! ```toml
//! [model]
//! d_model = 32
//! n_layers = 1
//! n_heads = 4
//! context_len = 64
//!
//! [train]
//! learning_rate = 0.3
//! steps = 500
//! batch_size = 16
//! seed = 42
//! optimizer = "sgd"        # or "sgd-momentum" with momentum = 0.9
//! log_every = 1
//! checkpoint_every = 100
//! eval_every = 0
//! probe_disjoint = false
//!
//! [reweight]
//! strategy = "vcore"       # uniform | vcore | dft | iw-sft | random
//! tau_eff = 0.5            # or kl_budget = 0.5, or median_kl = 0.5
//! alpha_mode = "per-batch" # off | per-batch | ema
//! alpha_min = 0.01
//! alpha_max = 1.0
//! ema_decay = 0.9
//!
//! [probe]
//! epsilon = 1e-4
//! raw_difference = false
//! ```

use std::path::Path;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use vcore_core::reweight::{AlphaMode, ReweightConfig, Strategy, Temperature};
use vcore_core::seed::derive_seed;
use vcore_core::trainer::{Optimizer, TrainConfig};
use vcore_core::utility::ProbeConfig;
use vcore_core::ModelConfig;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    Uniform,
    Vcore,
    Dft,
    IwSft,
    Random,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Uniform => Strategy::Uniform,
            StrategyArg::Vcore => Strategy::Vcore,
            StrategyArg::Dft => Strategy::Dft,
            StrategyArg::IwSft => Strategy::IwSft,
            StrategyArg::Random => Strategy::RandomMask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaArg {
    Off,
    PerBatch,
    Ema,
}

impl From<AlphaArg> for AlphaMode {
    fn from(a: AlphaArg) -> Self {
        match a {
            AlphaArg::Off => AlphaMode::Off,
            AlphaArg::PerBatch => AlphaMode::PerBatch,
            AlphaArg::Ema => AlphaMode::Ema,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Sgd,
    SgdMomentum,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    #[arg(long, env = "VCORE_D_MODEL")]
    pub d_model: Option<usize>,
    #[arg(long, env = "VCORE_N_LAYERS")]
    pub n_layers: Option<usize>,
    #[arg(long, env = "VCORE_N_HEADS")]
    pub n_heads: Option<usize>,
    #[arg(long, env = "VCORE_CONTEXT_LEN")]
    pub context_len: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    #[arg(long = "lr", env = "VCORE_LR")]
    pub learning_rate: Option<f64>,
    #[arg(long, env = "VCORE_STEPS")]
    pub steps: Option<u64>,
    #[arg(long, env = "VCORE_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Root of every random stream: initialization, batches, probes, masks.
    #[arg(long, env = "VCORE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, value_enum, env = "VCORE_OPTIMIZER")]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, env = "VCORE_MOMENTUM")]
    pub momentum: Option<f64>,
    #[arg(long, env = "VCORE_LOG_EVERY")]
    pub log_every: Option<u64>,
    #[arg(long, env = "VCORE_CHECKPOINT_EVERY")]
    pub checkpoint_every: Option<u64>,
    #[arg(long, env = "VCORE_EVAL_EVERY")]
    pub eval_every: Option<u64>,
    #[arg(long, env = "VCORE_PROBE_DISJOINT")]
    pub probe_disjoint: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ReweightSection {
    #[arg(long, value_enum, env = "VCORE_STRATEGY")]
    pub strategy: Option<StrategyArg>,
    /// Fixed effective temperature on epsilon-normalized utilities.
    #[arg(long, env = "VCORE_TAU_EFF", conflicts_with_all = ["kl_budget", "median_kl"])]
    pub tau_eff: Option<f64>,
    /// Per-sequence temperature solved for KL(q || u) = budget.
    #[arg(long, env = "VCORE_KL_BUDGET", conflicts_with = "median_kl")]
    pub kl_budget: Option<f64>,
    /// One temperature calibrated on the first batch to this median KL.
    #[arg(long, env = "VCORE_MEDIAN_KL")]
    pub median_kl: Option<f64>,
    #[arg(long, value_enum, env = "VCORE_ALPHA_MODE")]
    pub alpha_mode: Option<AlphaArg>,
    #[arg(long, env = "VCORE_ALPHA_MIN")]
    pub alpha_min: Option<f64>,
    #[arg(long, env = "VCORE_ALPHA_MAX")]
    pub alpha_max: Option<f64>,
    #[arg(long, env = "VCORE_EMA_DECAY")]
    pub ema_decay: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    #[arg(long, env = "VCORE_EPSILON")]
    pub epsilon: Option<f64>,
    /// Use the raw loss difference instead of dividing by epsilon.
    #[arg(long, env = "VCORE_RAW_DIFFERENCE")]
    pub raw_difference: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub model: ModelSection,
    pub train: TrainSection,
    pub reweight: ReweightSection,
    pub probe: ProbeSection,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr; $($f:ident),+) => {
        $( if $hi.$f.is_none() { $hi.$f = $lo.$f.clone(); } )+
    };
}

impl ReweightSection {
    fn temperature_set(&self) -> usize {
        [self.tau_eff, self.kl_budget, self.median_kl]
            .iter()
            .filter(|t| t.is_some())
            .count()
    }
}

impl Settings {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let s: Settings = toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        if s.reweight.temperature_set() > 1 {
            return Err(Error::Usage(format!(
                "{}: set at most one of tau_eff, kl_budget, median_kl",
                path.display()
            )));
        }
        Ok(s)
    }

    /// `self` wins wherever it has a value. The temperature is taken as a
    /// unit from whichever side sets one.
    pub fn over(mut self, lower: &Settings) -> Settings {
        overlay!(self.model, lower.model; d_model, n_layers, n_heads, context_len);
        overlay!(self.train, lower.train; learning_rate, steps, batch_size, seed, optimizer,
            momentum, log_every, checkpoint_every, eval_every, probe_disjoint);
        if self.reweight.temperature_set() == 0 {
            overlay!(self.reweight, lower.reweight; tau_eff, kl_budget, median_kl);
        }
        overlay!(self.reweight, lower.reweight; strategy, alpha_mode, alpha_min, alpha_max, ema_decay);
        overlay!(self.probe, lower.probe; epsilon, raw_difference);
        self
    }

    /// Fills every unset key with its default so the snapshot in the run
    /// manifest is complete.
    pub fn with_defaults(&self) -> Settings {
        let t = TrainConfig::default();
        let r = ReweightConfig::default();
        let mut s = self.clone();
        let m = &mut s.model;
        m.d_model.get_or_insert(32);
        m.n_layers.get_or_insert(1);
        m.n_heads.get_or_insert(4);
        m.context_len.get_or_insert(64);
        let tr = &mut s.train;
        tr.learning_rate.get_or_insert(t.learning_rate);
        tr.steps.get_or_insert(t.steps);
        tr.batch_size.get_or_insert(t.batch_size);
        tr.seed.get_or_insert(t.seed);
        let opt = *tr.optimizer.get_or_insert(OptimizerArg::Sgd);
        if opt == OptimizerArg::SgdMomentum {
            tr.momentum.get_or_insert(0.9);
        }
        tr.log_every.get_or_insert(t.log_every);
        tr.checkpoint_every.get_or_insert(t.checkpoint_every);
        tr.eval_every.get_or_insert(t.eval_every);
        tr.probe_disjoint.get_or_insert(t.probe_disjoint);
        let rw = &mut s.reweight;
        rw.strategy.get_or_insert(StrategyArg::Uniform);
        if rw.temperature_set() == 0 {
            if let Temperature::MedianKl(k) = r.temperature {
                rw.median_kl = Some(k);
            }
        }
        rw.alpha_mode.get_or_insert(AlphaArg::PerBatch);
        rw.alpha_min.get_or_insert(r.alpha_clamp.0);
        rw.alpha_max.get_or_insert(r.alpha_clamp.1);
        rw.ema_decay.get_or_insert(r.ema_decay);
        s.probe.raw_difference.get_or_insert(false);
        s
    }

    /// The model and training configs for a task with `vocab_size` tokens.
    /// The vcore strategy needs an explicit epsilon.
    pub fn resolve(&self, vocab_size: usize) -> Result<(ModelConfig, TrainConfig)> {
        let s = self.with_defaults();
        let strategy: Strategy = s.reweight.strategy.unwrap().into();
        if strategy == Strategy::Vcore && s.probe.epsilon.is_none() {
            return Err(Error::Usage(
                "--strategy vcore requires --epsilon (or probe.epsilon in the config file)".into(),
            ));
        }
        if s.train.momentum.is_some() && s.train.optimizer != Some(OptimizerArg::SgdMomentum) {
            return Err(Error::Usage("--momentum needs --optimizer sgd-momentum".into()));
        }
        let seed = s.train.seed.unwrap();
        let model = ModelConfig {
            vocab_size,
            context_len: s.model.context_len.unwrap(),
            d_model: s.model.d_model.unwrap(),
            n_layers: s.model.n_layers.unwrap(),
            n_heads: s.model.n_heads.unwrap(),
            init_seed: derive_seed(seed, "init", 0),
        };
        model.validate().map_err(|e| Error::Usage(e.to_string()))?;
        let rw = &s.reweight;
        let temperature = match (rw.tau_eff, rw.kl_budget, rw.median_kl) {
            (Some(t), None, None) => Temperature::TauEff(t),
            (None, Some(k), None) => Temperature::KlBudget(k),
            (None, None, Some(k)) => Temperature::MedianKl(k),
            _ => return Err(Error::Usage("set exactly one temperature".into())),
        };
        let cfg = TrainConfig {
            learning_rate: s.train.learning_rate.unwrap(),
            steps: s.train.steps.unwrap(),
            batch_size: s.train.batch_size.unwrap(),
            reweight: ReweightConfig {
                strategy,
                temperature,
                alpha_mode: rw.alpha_mode.unwrap().into(),
                alpha_clamp: (rw.alpha_min.unwrap(), rw.alpha_max.unwrap()),
                ema_decay: rw.ema_decay.unwrap(),
            },
            probe: ProbeConfig {
                epsilon: s.probe.epsilon.unwrap_or(TrainConfig::default().probe.epsilon),
                normalize_by_epsilon: !s.probe.raw_difference.unwrap(),
            },
            optimizer: match s.train.optimizer.unwrap() {
                OptimizerArg::Sgd => Optimizer::Sgd,
                OptimizerArg::SgdMomentum => Optimizer::SgdMomentum {
                    beta: s.train.momentum.unwrap(),
                },
            },
            seed,
            log_every: s.train.log_every.unwrap(),
            checkpoint_every: s.train.checkpoint_every.unwrap(),
            eval_every: s.train.eval_every.unwrap(),
            probe_disjoint: s.train.probe_disjoint.unwrap(),
        };
        cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok((model, cfg))
    }
}
