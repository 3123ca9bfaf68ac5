#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use vcore_core::datagen::{NoiseMode, NoiseSpec, Op, TaskSpec};
use vcore_core::trainer::TrainConfig;
use vcore_core::ModelConfig;
use vcore_lab::dataset::{build_dataset, Dataset};

pub fn small_spec() -> TaskSpec {
    TaskSpec::new(7, 2, Op::ALL.to_vec()).unwrap()
}

pub fn noise(rate: f64) -> NoiseSpec {
    NoiseSpec {
        spurious_rate: rate,
        modes: vec![NoiseMode::DistractorStep, NoiseMode::CorruptedValue],
        seed: 5,
    }
}

/// 64 train / 16 eval examples of a 2-step modulus-7 task, 30% noise.
pub fn small_dataset(dir: &Path) -> Dataset {
    build_dataset(dir, &small_spec(), 64, 16, Some(&noise(0.3)), 5).unwrap()
}

pub fn small_model(spec: &TaskSpec) -> ModelConfig {
    ModelConfig {
        vocab_size: spec.vocab_size(),
        context_len: 32,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        init_seed: 11,
    }
}

pub fn small_train(steps: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.2,
        steps,
        batch_size: 4,
        seed: 3,
        ..Default::default()
    }
}

pub fn vcore(path: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcore"))
        .current_dir(path)
        .args(args)
        .output()
        .unwrap()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}
