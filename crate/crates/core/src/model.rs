//! A tiny autoregressive transformer with exact per-token losses and exact
//! gradients of weighted token losses.
//!
//! Architecture: token embedding + learned positions, `n_layers` pre-norm
//! blocks (causal multi-head attention, then a GELU MLP of width
//! `4 * d_model`), a final layer norm when `n_layers > 0`, and an untied
//! output projection. With `n_layers = 0` the logits are simply
//! `(E[tok] + P[pos]) W_out + b_out`.
//!
//! All parameters live in one flat [`ParamVector`]; [`Layout`] maps names to
//! ranges. Matrices are stored row-major as `[in][out]`, so `y = x W`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use core::sync::atomic::{AtomicU64, Ordering};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::batch::{Sequence, SequenceBatch, TokenLosses, TokenWeights};
use crate::error::{Error, Result};
use crate::seed;

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const RESERVED_IDS: usize = 4;

pub const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub d_model: usize,
    /// Number of attention/MLP blocks, 0 to 2.
    pub n_layers: usize,
    pub n_heads: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size < RESERVED_IDS {
            return bad(format!(
                "vocab_size {} < {RESERVED_IDS} reserved ids",
                self.vocab_size
            ));
        }
        if self.context_len < 2 {
            return bad(format!("context_len {} < 2", self.context_len));
        }
        if self.d_model == 0 {
            return bad("d_model must be positive".into());
        }
        if self.n_layers > 2 {
            return bad(format!("n_layers {} > 2", self.n_layers));
        }
        if self.n_layers > 0 && (self.n_heads == 0 || self.d_model % self.n_heads != 0) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        Ok(())
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, c, d, f, l) = (
            self.vocab_size,
            self.context_len,
            self.d_model,
            self.d_ff(),
            self.n_layers,
        );
        let block = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        let final_norm = if l > 0 { 2 * d } else { 0 };
        v * d + c * d + l * block + final_norm + d * v + v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Deterministic mapping from named tensors to ranges of the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: Option<Range<usize>>,
    pub lnf_b: Option<Range<usize>>,
    pub w_out: Range<usize>,
    pub b_out: Range<usize>,
    pub len: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, c, d, f) = (cfg.vocab_size, cfg.context_len, cfg.d_model, cfg.d_ff());
        let mut cur = Cursor(0);
        let tok_emb = cur.take(v * d);
        let pos_emb = cur.take(c * d);
        let blocks = (0..cfg.n_layers)
            .map(|_| BlockLayout {
                ln1_g: cur.take(d),
                ln1_b: cur.take(d),
                wq: cur.take(d * d),
                bq: cur.take(d),
                wk: cur.take(d * d),
                bk: cur.take(d),
                wv: cur.take(d * d),
                bv: cur.take(d),
                wo: cur.take(d * d),
                bo: cur.take(d),
                ln2_g: cur.take(d),
                ln2_b: cur.take(d),
                w1: cur.take(d * f),
                b1: cur.take(f),
                w2: cur.take(f * d),
                b2: cur.take(d),
            })
            .collect();
        let (lnf_g, lnf_b) = if cfg.n_layers > 0 {
            (Some(cur.take(d)), Some(cur.take(d)))
        } else {
            (None, None)
        };
        let w_out = cur.take(d * v);
        let b_out = cur.take(v);
        Self {
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            len: cur.0,
        }
    }

    /// Every named tensor with its range, in layout order.
    pub fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut out = vec![
            ("tok_emb".into(), self.tok_emb.clone()),
            ("pos_emb".into(), self.pos_emb.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, r) in [
                ("ln1_g", &b.ln1_g),
                ("ln1_b", &b.ln1_b),
                ("wq", &b.wq),
                ("bq", &b.bq),
                ("wk", &b.wk),
                ("bk", &b.bk),
                ("wv", &b.wv),
                ("bv", &b.bv),
                ("wo", &b.wo),
                ("bo", &b.bo),
                ("ln2_g", &b.ln2_g),
                ("ln2_b", &b.ln2_b),
                ("w1", &b.w1),
                ("b1", &b.b1),
                ("w2", &b.w2),
                ("b2", &b.b2),
            ] {
                out.push((format!("block{i}.{name}"), r.clone()));
            }
        }
        if let (Some(g), Some(b)) = (&self.lnf_g, &self.lnf_b) {
            out.push(("lnf_g".into(), g.clone()));
            out.push(("lnf_b".into(), b.clone()));
        }
        out.push(("w_out".into(), self.w_out.clone()));
        out.push(("b_out".into(), self.b_out.clone()));
        out
    }
}

/// The flat parameter state of a [`TinyLm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|x| x * x).sum())
    }

    pub fn scale(&mut self, factor: f64) {
        for x in &mut self.0 {
            *x *= factor;
        }
    }

    /// `self + scale * direction`.
    pub fn axpy(&self, direction: &ParamVector, scale: f64) -> Result<ParamVector> {
        axpy(self, direction, scale)
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

/// Elementwise `params + scale * direction`.
pub fn axpy(params: &ParamVector, direction: &ParamVector, scale: f64) -> Result<ParamVector> {
    check_len(params.len(), direction.len())?;
    let out: Vec<f64> = params
        .0
        .iter()
        .zip(&direction.0)
        .map(|(p, d)| p + scale * d)
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("axpy result".into()));
    }
    Ok(ParamVector(out))
}

/// Forward/backward pass counters, used to check cost contracts.
#[derive(Debug, Default)]
pub struct PassCounter {
    forward: AtomicU64,
    backward: AtomicU64,
}

impl PassCounter {
    pub fn forward(&self) -> u64 {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn backward(&self) -> u64 {
        self.backward.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.forward.store(0, Ordering::Relaxed);
        self.backward.store(0, Ordering::Relaxed);
    }
}

/// The model: a configuration, its parameter layout and pass counters.
/// Parameters are passed explicitly to every operation.
#[derive(Debug)]
pub struct TinyLm {
    config: ModelConfig,
    layout: Layout,
    counter: PassCounter,
}

impl Clone for TinyLm {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            layout: self.layout.clone(),
            counter: PassCounter::default(),
        }
    }
}

struct BlockTrace {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][i][j]`, causal (zero above the diagonal).
    probs: Vec<f64>,
    ctx: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    h2: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

struct Trace {
    rows: usize,
    blocks: Vec<BlockTrace>,
    xhat_f: Vec<f64>,
    rstd_f: Vec<f64>,
    /// Input to the output projection.
    h_out: Vec<f64>,
    logits: Vec<f64>,
}

impl TinyLm {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            layout: Layout::new(&config),
            config,
            counter: PassCounter::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn counter(&self) -> &PassCounter {
        &self.counter
    }

    pub fn param_count(&self) -> usize {
        self.layout.len
    }

    /// Gaussian (std 0.02) weights and embeddings, zero biases and norm
    /// offsets, unit norm gains. A pure function of `init_seed`.
    pub fn init_params(&self) -> ParamVector {
        let mut rng = seed::rng_for(self.config.init_seed, "init", 0);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut p = ParamVector::zeros(self.layout.len);
        let mut fill = |r: &Range<usize>, p: &mut ParamVector| {
            for x in &mut p.0[r.clone()] {
                *x = normal.sample(&mut rng);
            }
        };
        let l = &self.layout;
        fill(&l.tok_emb, &mut p);
        fill(&l.pos_emb, &mut p);
        for b in &l.blocks {
            for r in [&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2] {
                fill(r, &mut p);
            }
            p.0[b.ln1_g.clone()].fill(1.0);
            p.0[b.ln2_g.clone()].fill(1.0);
        }
        if let Some(g) = &l.lnf_g {
            p.0[g.clone()].fill(1.0);
        }
        fill(&l.w_out, &mut p);
        p
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        check_len(self.layout.len, params.len())
    }

    fn check_sequence(&self, seq: &Sequence) -> Result<()> {
        if seq.len() > self.config.context_len {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                context_len: self.config.context_len,
            });
        }
        self.check_tokens(&seq.tokens)
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        for &id in tokens {
            if id as usize >= self.config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn check_batch(&self, params: &ParamVector, batch: &SequenceBatch) -> Result<()> {
        self.check_params(params)?;
        batch.rows.iter().try_for_each(|s| self.check_sequence(s))
    }

    /// `-log p(y_t | y_<t)` at every supervised position.
    pub fn forward_token_losses(
        &self,
        params: &ParamVector,
        batch: &SequenceBatch,
    ) -> Result<TokenLosses> {
        self.check_batch(params, batch)?;
        self.counter.forward.fetch_add(1, Ordering::Relaxed);
        let p = params.as_slice();
        let v = self.config.vocab_size;
        let rows = batch
            .rows
            .iter()
            .map(|seq| {
                if seq.supervised_count() == 0 {
                    return Vec::new();
                }
                let trace = self.forward_trace(p, &seq.tokens[..seq.len() - 1]);
                seq.supervised_positions()
                    .map(|t| {
                        let logits = &trace.logits[(t - 1) * v..t * v];
                        log_sum_exp(logits) - logits[seq.tokens[t] as usize]
                    })
                    .collect()
            })
            .collect();
        Ok(TokenLosses { rows })
    }

    /// `p(y_t | y_<t)` at every supervised position, `exp(-loss)`.
    pub fn forward_token_probs(
        &self,
        params: &ParamVector,
        batch: &SequenceBatch,
    ) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_token_losses(params, batch)?.probabilities())
    }

    /// Full next-token distribution at every position of `tokens`.
    pub fn next_token_distributions(
        &self,
        params: &ParamVector,
        tokens: &[u32],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_params(params)?;
        self.check_tokens(tokens)?;
        if tokens.is_empty() || tokens.len() > self.config.context_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                context_len: self.config.context_len,
            });
        }
        let trace = self.forward_trace(params.as_slice(), tokens);
        Ok(trace
            .logits
            .chunks(self.config.vocab_size)
            .map(softmax)
            .collect())
    }

    /// `sum_seq sum_t w_t * grad(l_t)`, by reverse mode.
    pub fn grad_weighted_loss(
        &self,
        params: &ParamVector,
        batch: &SequenceBatch,
        weights: &TokenWeights,
    ) -> Result<ParamVector> {
        self.check_batch(params, batch)?;
        weights.check_aligned(batch)?;
        self.counter.backward.fetch_add(1, Ordering::Relaxed);
        let p = params.as_slice();
        let v = self.config.vocab_size;
        let mut grad = ParamVector::zeros(self.layout.len);
        for (seq, w) in batch.rows.iter().zip(&weights.rows) {
            if w.iter().all(|&x| x == 0.0) {
                continue;
            }
            let inputs = &seq.tokens[..seq.len() - 1];
            let trace = self.forward_trace(p, inputs);
            let mut dlogits = vec![0.0; trace.rows * v];
            for (t, &wt) in seq.supervised_positions().zip(w) {
                if wt == 0.0 {
                    continue;
                }
                let row = t - 1;
                let logits = &trace.logits[row * v..(row + 1) * v];
                let probs = softmax(logits);
                let d = &mut dlogits[row * v..(row + 1) * v];
                for (dj, pj) in d.iter_mut().zip(&probs) {
                    *dj = wt * pj;
                }
                d[seq.tokens[t] as usize] -= wt;
            }
            self.backward(p, inputs, &trace, &dlogits, grad.as_mut_slice());
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok(grad)
    }

    /// Gradient of a single token loss; a one-hot [`Self::grad_weighted_loss`].
    pub fn grad_token_loss(
        &self,
        params: &ParamVector,
        batch: &SequenceBatch,
        seq: usize,
        pos: usize,
    ) -> Result<ParamVector> {
        let w = TokenWeights::one_hot(batch, seq, pos)?;
        self.grad_weighted_loss(params, batch, &w)
    }

    /// Greedy continuation of `prompt`: argmax token each step (ties to the
    /// lowest id), stopping after `eos` or `max_new` tokens. Returns only the
    /// generated tokens.
    pub fn decode_greedy(
        &self,
        params: &ParamVector,
        prompt: &[u32],
        max_new: usize,
    ) -> Result<Vec<u32>> {
        self.check_params(params)?;
        self.check_tokens(prompt)?;
        if prompt.is_empty() {
            return Err(Error::InvalidArgument("empty prompt".into()));
        }
        if prompt.len() + max_new > self.config.context_len {
            return Err(Error::SequenceTooLong {
                len: prompt.len() + max_new,
                context_len: self.config.context_len,
            });
        }
        let v = self.config.vocab_size;
        let mut tokens = prompt.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_new {
            let trace = self.forward_trace(params.as_slice(), &tokens);
            let last = &trace.logits[(trace.rows - 1) * v..];
            let next = argmax_lowest(last) as u32;
            tokens.push(next);
            out.push(next);
            if next == EOS_ID {
                break;
            }
        }
        Ok(out)
    }

    fn forward_trace(&self, p: &[f64], tokens: &[u32]) -> Trace {
        let cfg = &self.config;
        let (d, v, f) = (cfg.d_model, cfg.vocab_size, cfg.d_ff());
        let rows = tokens.len();
        let l = &self.layout;

        let mut x = vec![0.0; rows * d];
        let tok = &p[l.tok_emb.clone()];
        let pos = &p[l.pos_emb.clone()];
        for (r, &id) in tokens.iter().enumerate() {
            let e = &tok[id as usize * d..(id as usize + 1) * d];
            let pe = &pos[r * d..(r + 1) * d];
            for ((xi, a), b) in x[r * d..(r + 1) * d].iter_mut().zip(e).zip(pe) {
                *xi = a + b;
            }
        }

        let mut blocks = Vec::with_capacity(l.blocks.len());
        for b in &l.blocks {
            let (xhat1, rstd1, h1) =
                layer_norm(&x, &p[b.ln1_g.clone()], &p[b.ln1_b.clone()], rows, d);
            let q = linear(&h1, &p[b.wq.clone()], &p[b.bq.clone()], rows, d, d);
            let k = linear(&h1, &p[b.wk.clone()], &p[b.bk.clone()], rows, d, d);
            let vv = linear(&h1, &p[b.wv.clone()], &p[b.bv.clone()], rows, d, d);
            let (probs, ctx) = attention(&q, &k, &vv, rows, d, cfg.n_heads);
            let attn = linear(&ctx, &p[b.wo.clone()], &p[b.bo.clone()], rows, d, d);
            for (xi, a) in x.iter_mut().zip(&attn) {
                *xi += a;
            }
            let (xhat2, rstd2, h2) =
                layer_norm(&x, &p[b.ln2_g.clone()], &p[b.ln2_b.clone()], rows, d);
            let pre_act = linear(&h2, &p[b.w1.clone()], &p[b.b1.clone()], rows, d, f);
            let act: Vec<f64> = pre_act.iter().map(|&u| gelu(u)).collect();
            let mlp = linear(&act, &p[b.w2.clone()], &p[b.b2.clone()], rows, f, d);
            for (xi, m) in x.iter_mut().zip(&mlp) {
                *xi += m;
            }
            blocks.push(BlockTrace {
                xhat1,
                rstd1,
                h1,
                q,
                k,
                v: vv,
                probs,
                ctx,
                xhat2,
                rstd2,
                h2,
                pre_act,
                act,
            });
        }

        let (xhat_f, rstd_f, h_out) = match (&l.lnf_g, &l.lnf_b) {
            (Some(g), Some(bb)) => layer_norm(&x, &p[g.clone()], &p[bb.clone()], rows, d),
            _ => (Vec::new(), Vec::new(), x),
        };
        let logits = linear(&h_out, &p[l.w_out.clone()], &p[l.b_out.clone()], rows, d, v);
        Trace {
            rows,
            blocks,
            xhat_f,
            rstd_f,
            h_out,
            logits,
        }
    }

    fn backward(&self, p: &[f64], tokens: &[u32], tr: &Trace, dlogits: &[f64], g: &mut [f64]) {
        let cfg = &self.config;
        let (d, v, f) = (cfg.d_model, cfg.vocab_size, cfg.d_ff());
        let rows = tr.rows;
        let l = &self.layout;

        let mut dh = vec![0.0; rows * d];
        linear_backward(
            &tr.h_out,
            &p[l.w_out.clone()],
            dlogits,
            rows,
            d,
            v,
            &mut dh,
            &mut g[l.w_out.clone()],
        );
        bias_backward(dlogits, rows, v, &mut g[l.b_out.clone()]);

        let mut dx = match (&l.lnf_g, &l.lnf_b) {
            (Some(lg), Some(lb)) => {
                let mut dx = vec![0.0; rows * d];
                layer_norm_backward(
                    &dh,
                    &tr.xhat_f,
                    &tr.rstd_f,
                    &p[lg.clone()],
                    rows,
                    d,
                    &mut dx,
                    &mut g[lg.clone()],
                );
                bias_backward(&dh, rows, d, &mut g[lb.clone()]);
                dx
            }
            _ => dh,
        };

        for (b, bt) in l.blocks.iter().zip(&tr.blocks).rev() {
            // MLP branch: x += W2 gelu(W1 LN2(x) + b1) + b2
            let mut dact = vec![0.0; rows * f];
            linear_backward(&bt.act, &p[b.w2.clone()], &dx, rows, f, d, &mut dact, &mut g[b.w2.clone()]);
            bias_backward(&dx, rows, d, &mut g[b.b2.clone()]);
            for (da, &u) in dact.iter_mut().zip(&bt.pre_act) {
                *da *= gelu_grad(u);
            }
            let mut dh2 = vec![0.0; rows * d];
            linear_backward(&bt.h2, &p[b.w1.clone()], &dact, rows, d, f, &mut dh2, &mut g[b.w1.clone()]);
            bias_backward(&dact, rows, f, &mut g[b.b1.clone()]);
            layer_norm_backward(
                &dh2,
                &bt.xhat2,
                &bt.rstd2,
                &p[b.ln2_g.clone()],
                rows,
                d,
                &mut dx,
                &mut g[b.ln2_g.clone()],
            );
            bias_backward(&dh2, rows, d, &mut g[b.ln2_b.clone()]);

            // Attention branch: x += Wo attn(LN1(x)) + bo
            let mut dctx = vec![0.0; rows * d];
            linear_backward(&bt.ctx, &p[b.wo.clone()], &dx, rows, d, d, &mut dctx, &mut g[b.wo.clone()]);
            bias_backward(&dx, rows, d, &mut g[b.bo.clone()]);
            let (dq, dk, dv) = attention_backward(&bt.q, &bt.k, &bt.v, &bt.probs, &dctx, rows, d, cfg.n_heads);
            let mut dh1 = vec![0.0; rows * d];
            linear_backward(&bt.h1, &p[b.wq.clone()], &dq, rows, d, d, &mut dh1, &mut g[b.wq.clone()]);
            bias_backward(&dq, rows, d, &mut g[b.bq.clone()]);
            linear_backward(&bt.h1, &p[b.wk.clone()], &dk, rows, d, d, &mut dh1, &mut g[b.wk.clone()]);
            bias_backward(&dk, rows, d, &mut g[b.bk.clone()]);
            linear_backward(&bt.h1, &p[b.wv.clone()], &dv, rows, d, d, &mut dh1, &mut g[b.wv.clone()]);
            bias_backward(&dv, rows, d, &mut g[b.bv.clone()]);
            layer_norm_backward(
                &dh1,
                &bt.xhat1,
                &bt.rstd1,
                &p[b.ln1_g.clone()],
                rows,
                d,
                &mut dx,
                &mut g[b.ln1_g.clone()],
            );
            bias_backward(&dh1, rows, d, &mut g[b.ln1_b.clone()]);
        }

        let tok_off = l.tok_emb.start;
        let pos_off = l.pos_emb.start;
        for (r, &id) in tokens.iter().enumerate() {
            let src = &dx[r * d..(r + 1) * d];
            let te = tok_off + id as usize * d;
            for (gi, s) in g[te..te + d].iter_mut().zip(src) {
                *gi += s;
            }
            let pe = pos_off + r * d;
            for (gi, s) in g[pe..pe + d].iter_mut().zip(src) {
                *gi += s;
            }
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + libm::log(xs.iter().map(|&x| libm::exp(x - m)).sum::<f64>())
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&x| libm::exp(x - m)).collect();
    let s: f64 = out.iter().sum();
    for o in &mut out {
        *o /= s;
    }
    out
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + libm::tanh(GELU_C * (u + GELU_A * u * u * u)))
}

fn gelu_grad(u: f64) -> f64 {
    let th = libm::tanh(GELU_C * (u + GELU_A * u * u * u));
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// `x[rows][din] * w[din][dout] + b`.
fn linear(x: &[f64], w: &[f64], b: &[f64], rows: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * dout];
    for r in 0..rows {
        let o = &mut out[r * dout..(r + 1) * dout];
        o.copy_from_slice(b);
        for (i, &xi) in x[r * din..(r + 1) * din].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (oj, wj) in o.iter_mut().zip(&w[i * dout..(i + 1) * dout]) {
                *oj += xi * wj;
            }
        }
    }
    out
}

/// Accumulates `dx += dy W^T` and `dw += x^T dy`.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    din: usize,
    dout: usize,
    dx: &mut [f64],
    dw: &mut [f64],
) {
    for r in 0..rows {
        let dyr = &dy[r * dout..(r + 1) * dout];
        if dyr.iter().all(|&z| z == 0.0) {
            continue;
        }
        let xr = &x[r * din..(r + 1) * din];
        let dxr = &mut dx[r * din..(r + 1) * din];
        for i in 0..din {
            let wi = &w[i * dout..(i + 1) * dout];
            let dwi = &mut dw[i * dout..(i + 1) * dout];
            let xi = xr[i];
            let mut acc = 0.0;
            for j in 0..dout {
                acc += dyr[j] * wi[j];
                dwi[j] += xi * dyr[j];
            }
            dxr[i] += acc;
        }
    }
}

fn bias_backward(dy: &[f64], rows: usize, dout: usize, db: &mut [f64]) {
    for r in 0..rows {
        for (b, d) in db.iter_mut().zip(&dy[r * dout..(r + 1) * dout]) {
            *b += d;
        }
    }
}

/// Returns `(xhat, rstd, y)` with `y = g * xhat + b` per row.
fn layer_norm(x: &[f64], g: &[f64], b: &[f64], rows: usize, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    let mut y = vec![0.0; rows * d];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / libm::sqrt(var + LN_EPS);
        rstd[r] = rs;
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = g[i] * h + b[i];
        }
    }
    (xhat, rstd, y)
}

/// Accumulates into `dx` and the gain gradient `dg`; the offset gradient is
/// the plain column sum of `dy` and is handled by [`bias_backward`].
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    g: &[f64],
    rows: usize,
    d: usize,
    dx: &mut [f64],
    dg: &mut [f64],
) {
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for i in 0..d {
            dg[i] += dyr[i] * xr[i];
            dxhat[i] = dyr[i] * g[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xr[i];
        }
        mean_d /= d as f64;
        mean_dx /= d as f64;
        for i in 0..d {
            dx[r * d + i] += rstd[r] * (dxhat[i] - mean_d - xr[i] * mean_dx);
        }
    }
}

/// Causal multi-head attention; returns `(probs[h][i][j], ctx)`.
fn attention(q: &[f64], k: &[f64], v: &[f64], rows: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let hd = d / heads;
    let scale = 1.0 / libm::sqrt(hd as f64);
    let mut probs = vec![0.0; heads * rows * rows];
    let mut ctx = vec![0.0; rows * d];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..rows {
            let qi = &q[i * d + off..i * d + off + hd];
            let pr = &mut probs[(h * rows + i) * rows..(h * rows + i + 1) * rows];
            let mut m = f64::NEG_INFINITY;
            for j in 0..=i {
                let kj = &k[j * d + off..j * d + off + hd];
                let s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                pr[j] = s;
                m = m.max(s);
            }
            let mut z = 0.0;
            for pj in pr[..=i].iter_mut() {
                *pj = libm::exp(*pj - m);
                z += *pj;
            }
            for pj in pr[..=i].iter_mut() {
                *pj /= z;
            }
            let ci = &mut ctx[i * d + off..i * d + off + hd];
            for j in 0..=i {
                let vj = &v[j * d + off..j * d + off + hd];
                let pij = pr[j];
                for (c, vv) in ci.iter_mut().zip(vj) {
                    *c += pij * vv;
                }
            }
        }
    }
    (probs, ctx)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dctx: &[f64],
    rows: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = d / heads;
    let scale = 1.0 / libm::sqrt(hd as f64);
    let mut dq = vec![0.0; rows * d];
    let mut dk = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    let mut dp = vec![0.0; rows];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..rows {
            let pr = &probs[(h * rows + i) * rows..(h * rows + i + 1) * rows];
            let dci = &dctx[i * d + off..i * d + off + hd];
            let mut dot = 0.0;
            for j in 0..=i {
                let vj = &v[j * d + off..j * d + off + hd];
                dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                dot += pr[j] * dp[j];
                let dvj = &mut dv[j * d + off..j * d + off + hd];
                for (x, c) in dvj.iter_mut().zip(dci) {
                    *x += pr[j] * c;
                }
            }
            for j in 0..=i {
                let ds = pr[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..hd {
                    dq[i * d + off + c] += ds * k[j * d + off + c];
                    dk[j * d + off + c] += ds * q[i * d + off + c];
                }
            }
        }
    }
    (dq, dk, dv)
}
