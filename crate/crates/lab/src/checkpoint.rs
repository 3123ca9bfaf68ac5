//! Binary checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! | field            | bytes                                             |
//! |------------------|---------------------------------------------------|
//! | magic            | `VCORECKP`                                        |
//! | format version   | u32                                               |
//! | model config     | vocab, context, d_model, layers, heads, init seed, each u64 |
//! | param count `n`  | u64                                               |
//! | params           | `n` f64 in layout order                           |
//! | train state      | step u64, tau flag u8 + f64, 6 variance words, momentum flag u8 |
//! | reference params | `n` f64                                           |
//! | momentum         | `n` f64 when the flag is set                      |
//! | trailer          | SHA-256 of everything above                       |

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use vcore_core::reweight::VarianceStats;
use vcore_core::trainer::TrainState;
use vcore_core::{ModelConfig, ParamVector};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VCORECKP";
pub const VERSION: u32 = 1;
const TRAILER: usize = 32;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_params(out: &mut Vec<u8>, p: &ParamVector) {
    for &x in &p.0 {
        put_f64(out, x);
    }
}

pub fn encode(cfg: &ModelConfig, state: &TrainState) -> Vec<u8> {
    let n = state.params.len();
    let mut out = Vec::with_capacity(128 + 24 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        cfg.vocab_size as u64,
        cfg.context_len as u64,
        cfg.d_model as u64,
        cfg.n_layers as u64,
        cfg.n_heads as u64,
        cfg.init_seed,
        n as u64,
    ] {
        put_u64(&mut out, v);
    }
    put_params(&mut out, &state.params);
    put_u64(&mut out, state.step);
    out.push(state.resolved_tau.is_some() as u8);
    put_f64(&mut out, state.resolved_tau.unwrap_or(0.0));
    let s = &state.stats;
    put_f64(&mut out, s.v_u);
    put_f64(&mut out, s.v_q);
    put_u64(&mut out, s.sample_count);
    put_f64(&mut out, s.ema_v_u);
    put_f64(&mut out, s.ema_v_q);
    put_u64(&mut out, s.ema_updates);
    out.push(state.momentum.is_some() as u8);
    put_params(&mut out, &state.reference_params);
    if let Some(m) = &state.momentum {
        put_params(&mut out, m);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }

    fn params(&mut self, n: usize) -> std::result::Result<ParamVector, String> {
        let bytes = self.take(n.checked_mul(8).ok_or("parameter count overflows")?)?;
        Ok(ParamVector(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    }

    fn flag(&mut self) -> std::result::Result<bool, String> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(format!("bad flag byte {b}")),
        }
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(ModelConfig, TrainState), String> {
    if bytes.len() < MAGIC.len() + 4 + TRAILER {
        return Err(format!("only {} bytes", bytes.len()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err("bad magic".into());
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER);
    if Sha256::digest(body).as_slice() != trailer {
        return Err("checksum mismatch (truncated or modified)".into());
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let cfg = ModelConfig {
        vocab_size: r.usize()?,
        context_len: r.usize()?,
        d_model: r.usize()?,
        n_layers: r.usize()?,
        n_heads: r.usize()?,
        init_seed: r.u64()?,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let n = r.usize()?;
    if n != cfg.param_count() {
        return Err(format!("{n} parameters stored, config needs {}", cfg.param_count()));
    }
    let params = r.params(n)?;
    let step = r.u64()?;
    let has_tau = r.flag()?;
    let tau = r.f64()?;
    let stats = VarianceStats {
        v_u: r.f64()?,
        v_q: r.f64()?,
        sample_count: r.u64()?,
        ema_v_u: r.f64()?,
        ema_v_q: r.f64()?,
        ema_updates: r.u64()?,
    };
    let has_momentum = r.flag()?;
    let reference_params = r.params(n)?;
    let momentum = if has_momentum { Some(r.params(n)?) } else { None };
    if r.pos != body.len() {
        return Err(format!("{} trailing bytes", body.len() - r.pos));
    }
    let state = TrainState {
        params,
        step,
        momentum,
        stats,
        resolved_tau: has_tau.then_some(tau),
        reference_params,
    };
    Ok((cfg, state))
}

/// Writes through a temporary file so a crash never leaves a partial
/// checkpoint under the final name.
pub fn save(path: &Path, cfg: &ModelConfig, state: &TrainState) -> Result<()> {
    let tmp = path.with_extension("bin.tmp");
    fs::write(&tmp, encode(cfg, state)).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<(ModelConfig, TrainState)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|msg| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        msg,
    })
}

/// Loads a checkpoint for a run that expects `expected`.
pub fn resume(path: &Path, expected: &ModelConfig) -> Result<TrainState> {
    let (cfg, state) = load(path)?;
    if cfg != *expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has {cfg:?}, run expects {expected:?}"
        )));
    }
    Ok(state)
}

pub fn file_name(step: u64) -> String {
    format!("checkpoint-{step:06}.bin")
}
