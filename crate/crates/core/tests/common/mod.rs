#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use vcore_core::model::RESERVED_IDS;
use vcore_core::{ModelConfig, ParamVector, Sequence, SequenceBatch, TinyLm, TokenWeights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn model(vocab: usize, d: usize, layers: usize, heads: usize, ctx: usize, seed: u64) -> TinyLm {
    TinyLm::new(ModelConfig {
        vocab_size: vocab,
        context_len: ctx,
        d_model: d,
        n_layers: layers,
        n_heads: heads,
        init_seed: seed,
    })
    .unwrap()
}

/// Random tokens; everything from `prompt_len` on is supervised and the last
/// supervised position is the answer.
pub fn sequence(rng: &mut impl Rng, vocab: usize, len: usize, prompt_len: usize) -> Sequence {
    let tokens: Vec<u32> = (0..len)
        .map(|_| rng.random_range(RESERVED_IDS as u32..vocab as u32))
        .collect();
    let loss: Vec<bool> = (0..len).map(|t| t >= prompt_len.max(1)).collect();
    let mut answer = vec![false; len];
    answer[len - 1] = true;
    let spurious = vec![false; len];
    Sequence::new(tokens, loss, answer, spurious).unwrap()
}

pub fn batch(rng: &mut impl Rng, vocab: usize, n: usize, len_range: (usize, usize)) -> SequenceBatch {
    SequenceBatch::new(
        (0..n)
            .map(|_| {
                let len = rng.random_range(len_range.0..=len_range.1);
                let prompt = rng.random_range(1..len);
                sequence(rng, vocab, len, prompt)
            })
            .collect(),
    )
}

/// Parameters moved away from the initialization so every nonlinearity is
/// exercised.
pub fn jitter(params: &ParamVector, rng: &mut impl Rng, scale: f64) -> ParamVector {
    ParamVector(
        params
            .0
            .iter()
            .map(|p| p + scale * (rng.random::<f64>() * 2.0 - 1.0))
            .collect(),
    )
}

pub fn random_weights(rng: &mut impl Rng, batch: &SequenceBatch) -> TokenWeights {
    TokenWeights {
        rows: batch
            .rows
            .iter()
            .map(|s| (0..s.supervised_count()).map(|_| rng.random::<f64>()).collect())
            .collect(),
        is_distribution: false,
    }
}

pub fn weighted_loss(model: &TinyLm, params: &ParamVector, batch: &SequenceBatch, w: &TokenWeights) -> f64 {
    let l = model.forward_token_losses(params, batch).unwrap();
    l.rows
        .iter()
        .zip(&w.rows)
        .map(|(l, w)| l.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
