//! Line-delimited JSON dataset files.
//!
//! A dataset directory holds `train.jsonl` and `eval.jsonl`. Each line is one
//! object with the fields, in this order:
//!
//! ```text
//! {"prompt":"3 + 4 * 2","rationale":"3 + 4 = 7 ; 7 * 2 = 1 ;","answer":"<a> 1 </a>",
//!  "spurious_positions":[],"meta":{"split":"train","index":0,"modulus":13,
//!  "chain_length":2,"operators":"+ - *"}}
//! ```
//!
//! Symbol strings are space-separated tokens. Strings use standard JSON
//! escaping, and no symbol needs escaping. `spurious_positions` index
//! whitespace-separated tokens of `rationale`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vcore_core::datagen::{
    encode, evaluate_rationale, generate_splits, strip_spurious, symbols_to_text, text_to_symbols,
    CotExample, NoiseSpec, Op, Symbol, TaskSpec,
};
use vcore_core::Sequence;

use crate::{Error, Result};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub prompt: String,
    pub rationale: String,
    pub answer: String,
    pub spurious_positions: Vec<usize>,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub split: String,
    pub index: usize,
    pub modulus: u32,
    pub chain_length: usize,
    pub operators: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub train: Vec<CotExample>,
    pub eval: Vec<CotExample>,
    /// Hex SHA-256 over both files, see [`content_digest`].
    pub digest: String,
}

impl Dataset {
    pub fn encode_train(&self, context_len: usize) -> Result<Vec<Sequence>> {
        self.train
            .iter()
            .map(|e| encode(e, &self.spec, context_len).map_err(Error::from))
            .collect()
    }
}

fn operators_text(ops: &[Op]) -> String {
    ops.iter().map(|o| o.symbol()).collect::<Vec<_>>().join(" ")
}

fn parse_operators(text: &str) -> Option<Vec<Op>> {
    text.split_whitespace()
        .map(|s| Op::ALL.iter().copied().find(|o| o.symbol() == s))
        .collect()
}

/// One JSON line per example, in index order.
pub fn to_jsonl(examples: &[CotExample], spec: &TaskSpec, split: &str) -> Vec<u8> {
    let mut out = Vec::new();
    for (index, e) in examples.iter().enumerate() {
        let rec = Record {
            prompt: symbols_to_text(&e.prompt),
            rationale: symbols_to_text(&e.rationale),
            answer: symbols_to_text(&e.answer),
            spurious_positions: e.spurious_positions.clone(),
            meta: RecordMeta {
                split: split.to_string(),
                index,
                modulus: spec.modulus,
                chain_length: spec.chain_length,
                operators: operators_text(&spec.operators),
            },
        };
        serde_json::to_writer(&mut out, &rec).expect("records serialize");
        out.push(b'\n');
    }
    out
}

/// SHA-256 over the length-prefixed train and eval file contents.
pub fn content_digest(train: &[u8], eval: &[u8]) -> String {
    let mut h = Sha256::new();
    for part in [train, eval] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

fn parse_record(line: &str, path: &Path, lineno: usize) -> Result<(TaskSpec, CotExample)> {
    let bad = |m: String| Error::format(path, format!("line {lineno}: {m}"));
    let rec: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    let ops = parse_operators(&rec.meta.operators)
        .ok_or_else(|| bad(format!("unknown operators {:?}", rec.meta.operators)))?;
    let spec = TaskSpec::new(rec.meta.modulus, rec.meta.chain_length, ops)
        .map_err(|e| bad(e.to_string()))?;
    let m = spec.modulus;
    let sym = |t: &str| text_to_symbols(t, m).map_err(|e| bad(e.to_string()));
    let ex = CotExample {
        prompt: sym(&rec.prompt)?,
        rationale: sym(&rec.rationale)?,
        answer: sym(&rec.answer)?,
        spurious_positions: rec.spurious_positions,
    };
    if ex.spurious_positions.iter().any(|&p| p >= ex.rationale.len())
        || ex.spurious_positions.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(bad("spurious_positions out of range or unsorted".into()));
    }
    let stored = match ex.answer_span() {
        [Symbol::Value(v)] if ex.answer.first() == Some(&Symbol::AnsOpen) => *v,
        _ => return Err(bad("answer must be `<a> value </a>`".into())),
    };
    if evaluate_rationale(&ex.prompt, &strip_spurious(&ex), m) != Some(stored) {
        return Err(bad("rationale does not derive the stored answer".into()));
    }
    Ok((spec, ex))
}

fn parse_file(path: &Path, bytes: &[u8]) -> Result<(Option<TaskSpec>, Vec<CotExample>)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(path, e))?;
    let mut spec: Option<TaskSpec> = None;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (s, ex) = parse_record(line, path, i + 1)?;
        match &spec {
            Some(prev) if *prev != s => {
                return Err(Error::format(path, format!("line {}: task differs from line 1", i + 1)))
            }
            None => spec = Some(s),
            _ => {}
        }
        out.push(ex);
    }
    Ok((spec, out))
}

pub fn paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(TRAIN_FILE), dir.join(EVAL_FILE))
}

/// Generates both splits and writes them under `dir`.
pub fn build_dataset(
    dir: &Path,
    spec: &TaskSpec,
    n_train: usize,
    n_eval: usize,
    noise: Option<&NoiseSpec>,
    seed: u64,
) -> Result<Dataset> {
    let (train, eval) = generate_splits(spec, n_train, n_eval, noise, seed)?;
    let train_bytes = to_jsonl(&train, spec, "train");
    let eval_bytes = to_jsonl(&eval, spec, "eval");
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let (tp, ep) = paths(dir);
    fs::write(&tp, &train_bytes).map_err(Error::io(&tp))?;
    fs::write(&ep, &eval_bytes).map_err(Error::io(&ep))?;
    Ok(Dataset {
        spec: spec.clone(),
        train,
        eval,
        digest: content_digest(&train_bytes, &eval_bytes),
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let (tp, ep) = paths(dir);
    let train_bytes = fs::read(&tp).map_err(Error::io(&tp))?;
    let eval_bytes = fs::read(&ep).map_err(Error::io(&ep))?;
    let (ts, train) = parse_file(&tp, &train_bytes)?;
    let (es, eval) = parse_file(&ep, &eval_bytes)?;
    let spec = match (ts, es) {
        (Some(a), Some(b)) if a == b => a,
        (Some(_), Some(_)) => return Err(Error::format(&ep, "task differs from the train split")),
        _ => return Err(Error::format(dir, "both splits must be nonempty")),
    };
    Ok(Dataset {
        spec,
        train,
        eval,
        digest: content_digest(&train_bytes, &eval_bytes),
    })
}
