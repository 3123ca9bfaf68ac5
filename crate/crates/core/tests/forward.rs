mod common;

use common::*;
use rand::Rng;
use vcore_core::model::{axpy, EOS_ID};
use vcore_core::{ModelConfig, ParamVector, Sequence, SequenceBatch, TinyLm};

fn count_by_enumeration(cfg: &ModelConfig) -> usize {
    let (v, c, d) = (cfg.vocab_size, cfg.context_len, cfg.d_model);
    let f = 4 * d;
    let mut n = v * d + c * d;
    for _ in 0..cfg.n_layers {
        let shapes: [(usize, usize); 16] = [
            (d, 1), (d, 1),           // ln1
            (d, d), (d, 1),           // q
            (d, d), (d, 1),           // k
            (d, d), (d, 1),           // v
            (d, d), (d, 1),           // o
            (d, 1), (d, 1),           // ln2
            (d, f), (f, 1),           // mlp in
            (f, d), (d, 1),           // mlp out
        ];
        n += shapes.iter().map(|(a, b)| a * b).sum::<usize>();
    }
    if cfg.n_layers > 0 {
        n += 2 * d;
    }
    n + d * v + v
}

#[test]
fn parameter_count_matches_enumeration() {
    let m = model(16, 8, 1, 2, 16, 0);
    assert_eq!(m.param_count(), count_by_enumeration(m.config()));
    assert_eq!(m.init_params().len(), m.param_count());
    for layers in 0..=2 {
        let m = model(24, 16, layers, 4, 40, 0);
        assert_eq!(m.param_count(), count_by_enumeration(m.config()));
    }
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    let a = model(16, 8, 1, 2, 16, 7).init_params();
    let b = model(16, 8, 1, 2, 16, 7).init_params();
    let c = model(16, 8, 1, 2, 16, 8).init_params();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.is_finite());
}

fn zero_output(m: &TinyLm) -> ParamVector {
    let mut p = m.init_params();
    p.0[m.layout().w_out.clone()].fill(0.0);
    p.0[m.layout().b_out.clone()].fill(0.0);
    p
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let m = model(16, 8, 2, 2, 12, 1);
    let p = zero_output(&m);
    let mut r = rng(1);
    let b = batch(&mut r, 16, 3, (4, 12));
    let ln_v = 16f64.ln();
    for row in m.forward_token_losses(&p, &b).unwrap().rows {
        assert!(row.iter().all(|l| (l - ln_v).abs() < 1e-12));
    }
    for row in m.forward_token_probs(&p, &b).unwrap() {
        assert!(row.iter().all(|q| (q - 1.0 / 16.0).abs() < 1e-15));
    }
}

#[test]
fn two_logit_case() {
    // Output bias (1, 0, -1e3, -1e3): the two suppressed logits contribute
    // exp(-1001), far below f64 resolution of 1 + e^-1.
    let m = model(4, 4, 0, 1, 4, 0);
    let mut p = zero_output(&m);
    let bo = m.layout().b_out.clone();
    p.0[bo].copy_from_slice(&[1.0, 0.0, -1e3, -1e3]);
    let seq = Sequence::fully_supervised(vec![1, 0]).unwrap();
    let b = SequenceBatch::new(vec![seq]);
    let l = m.forward_token_losses(&p, &b).unwrap().rows[0][0];
    let expect = (1.0 + (-1.0f64).exp()).ln();
    assert!((l - expect).abs() < 1e-15);
    let q = m.forward_token_probs(&p, &b).unwrap()[0][0];
    assert!((q - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
}

#[test]
fn empty_loss_row_emits_nothing() {
    let m = model(8, 8, 1, 2, 8, 0);
    let s = Sequence::new(vec![1, 5, 6], vec![false; 3], vec![false; 3], vec![false; 3]).unwrap();
    let l = m.forward_token_losses(&m.init_params(), &SequenceBatch::new(vec![s])).unwrap();
    assert!(l.rows[0].is_empty());
}

#[test]
fn probabilities_are_exp_negative_losses_and_normalized() {
    let m = model(12, 8, 2, 2, 12, 2);
    let mut r = rng(2);
    let p = jitter(&m.init_params(), &mut r, 0.3);
    let b = batch(&mut r, 12, 4, (3, 12));
    let l = m.forward_token_losses(&p, &b).unwrap();
    let q = m.forward_token_probs(&p, &b).unwrap();
    for (lr, qr) in l.rows.iter().zip(&q) {
        for (a, b) in lr.iter().zip(qr) {
            assert!(*a >= 0.0 && a.is_finite());
            assert!(((-a).exp() - b).abs() <= 1e-12);
            assert!(*b > 0.0 && *b <= 1.0);
        }
    }
    for seq in &b.rows {
        for dist in m.next_token_distributions(&p, &seq.tokens).unwrap() {
            assert!((dist.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn losses_are_causal() {
    let m = model(12, 8, 2, 2, 12, 3);
    let mut r = rng(3);
    let p = jitter(&m.init_params(), &mut r, 0.3);
    for _ in 0..20 {
        let len = r.random_range(4..=12);
        let base = Sequence::fully_supervised(
            (0..len).map(|_| r.random_range(4..12)).collect(),
        )
        .unwrap();
        let t = r.random_range(1..len);
        let mut changed = base.clone();
        for tok in &mut changed.tokens[t..] {
            *tok = 4 + (*tok - 4 + 1) % 8;
        }
        let la = m.forward_token_losses(&p, &SequenceBatch::new(vec![base.clone()])).unwrap();
        let lb = m.forward_token_losses(&p, &SequenceBatch::new(vec![changed.clone()])).unwrap();
        // Supervised position t' reads tokens < t': losses before the edit are
        // unchanged, and so is the predicted distribution at the edit itself.
        for tp in 1..t {
            assert_eq!(la.rows[0][tp - 1], lb.rows[0][tp - 1], "position {tp} of {len}, edit at {t}");
        }
        let da = m.next_token_distributions(&p, &base.tokens).unwrap();
        let db = m.next_token_distributions(&p, &changed.tokens).unwrap();
        assert_eq!(da[..t], db[..t]);
    }
}

#[test]
fn repeated_calls_are_bit_identical() {
    let m = model(12, 8, 2, 2, 12, 4);
    let mut r = rng(4);
    let p = jitter(&m.init_params(), &mut r, 0.2);
    let b = batch(&mut r, 12, 3, (3, 12));
    let w = random_weights(&mut r, &b);
    assert_eq!(m.forward_token_losses(&p, &b).unwrap(), m.forward_token_losses(&p, &b).unwrap());
    assert_eq!(
        m.grad_weighted_loss(&p, &b, &w).unwrap(),
        m.grad_weighted_loss(&p, &b, &w).unwrap()
    );
}

#[test]
fn axpy_contracts() {
    let mut r = rng(5);
    let p = ParamVector((0..50).map(|_| r.random::<f64>() - 0.5).collect());
    let d = ParamVector((0..50).map(|_| r.random::<f64>() - 0.5).collect());
    assert_eq!(axpy(&p, &d, 0.0).unwrap(), p);
    let back = axpy(&axpy(&p, &d, 0.37).unwrap(), &d, -0.37).unwrap();
    assert!(max_abs_diff(&back.0, &p.0) <= 1e-12);
    let half = axpy(&p, &d, 0.5).unwrap();
    for i in 0..50 {
        assert_eq!(half.0[i], p.0[i] + 0.5 * d.0[i]);
    }
    assert!(axpy(&p, &ParamVector::zeros(3), 1.0).is_err());
    assert!(axpy(&p, &d, f64::INFINITY).is_err());
}

#[test]
fn greedy_decode_follows_forced_argmax() {
    let m = model(10, 8, 1, 2, 16, 5);
    let mut p = m.init_params();
    let bo = m.layout().b_out.clone();
    p.0[bo.start + 7] = 50.0;
    let out = m.decode_greedy(&p, &[1, 4, 5], 6).unwrap();
    assert_eq!(out, vec![7; 6]);
    assert_eq!(out, m.decode_greedy(&p, &[1, 4, 5], 6).unwrap());

    p.0[bo.start + EOS_ID as usize] = 100.0;
    assert_eq!(m.decode_greedy(&p, &[1, 4], 6).unwrap(), vec![EOS_ID]);
    assert!(m.decode_greedy(&p, &[1; 12], 6).is_err());
}

#[test]
fn pass_counters_count_calls() {
    let m = model(10, 8, 1, 2, 10, 6);
    let mut r = rng(6);
    let b = batch(&mut r, 10, 2, (3, 10));
    let p = m.init_params();
    m.forward_token_losses(&p, &b).unwrap();
    m.forward_token_probs(&p, &b).unwrap();
    m.grad_weighted_loss(&p, &b, &random_weights(&mut r, &b)).unwrap();
    assert_eq!((m.counter().forward(), m.counter().backward()), (2, 1));
    m.counter().reset();
    assert_eq!((m.counter().forward(), m.counter().backward()), (0, 0));
}
