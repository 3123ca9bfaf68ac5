//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! This target reports rather than asserts. The invariants it measures are
//! also asserted by the ordinary unit and integration tests; set
//! `VCORE_ACCEPTANCE_STRICT=1` to make any FAIL line fail the target.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use vcore_core::batch::{Sequence, SequenceBatch};
use vcore_core::datagen::{encode, generate_splits, CotExample, NoiseMode, NoiseSpec, Op, TaskSpec};
use vcore_core::eval::{eval_accuracy, loss_spike_metric, median, tail_median};
use vcore_core::reweight::{
    gibbs_weights, kl_to_uniform, solve_temperature, strategy_weights, variance_alpha, AlphaMode,
    ReweightConfig, Strategy, StrategyInputs, Temperature, VarianceStats,
};
use vcore_core::seed::{derive_seed, rng_for};
use vcore_core::trainer::{run_until, sample_step_indices, train_step, TrainConfig, TrainState};
use vcore_core::utility::descent_direction;
use vcore_core::{ModelConfig, TinyLm};
use vcore_lab::probe_check::{probe_check, Direction};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt_list(xs: &[f64], digits: usize) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", v.join(" "))
}

fn estimator_fidelity() -> Verdict {
    let t = Instant::now();
    let rows = probe_check(&[1e-3, 1e-4, 1e-5], Direction::Descent, 0).unwrap();
    let elapsed = t.elapsed();
    let errs: Vec<f64> = rows.iter().map(|r| r.max_rel_error).collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = errs[2] <= 1e-3
        && ratios.iter().all(|r| (5.0..=20.0).contains(r))
        && elapsed < Duration::from_secs(10);
    verdict(
        pass,
        format!(
            "max rel err at 1e-3,1e-4,1e-5 = {:?}, decade ratios {}, {:.2}s",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>(),
            fmt_list(&ratios, 2),
            secs(elapsed)
        ),
    )
}

fn kl(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter().filter(|&&x| x > 0.0).map(|&x| x * (x * n).ln()).sum()
}

/// A random simplex point with KL to uniform at most `delta`: peaked draws
/// that overshoot are pulled toward uniform onto the constraint surface.
fn feasible_point<R: Rng>(rng: &mut R, n: usize, delta: f64, out: &mut [f64]) {
    let sharp = rng.random_range(0.5..6.0);
    let mut z = 0.0;
    for x in out.iter_mut() {
        let e: f64 = Exp1.sample(rng);
        *x = e.powf(sharp);
        z += *x;
    }
    for x in out.iter_mut() {
        *x /= z;
    }
    if kl(out) <= delta {
        return;
    }
    let u = 1.0 / n as f64;
    let p: Vec<f64> = out.to_vec();
    let mix = |lam: f64, m: &mut [f64]| {
        for (mi, pi) in m.iter_mut().zip(&p) {
            *mi = u + lam * (pi - u);
        }
    };
    // The constraint is convex and increasing along the segment, so Newton
    // from the infeasible end approaches the boundary from outside. Starting
    // just inside the segment keeps the log finite for zero entries.
    let mut lam = 1.0 - 1e-9;
    for _ in 0..60 {
        mix(lam, out);
        let f = kl(out) - delta;
        if f <= 1e-14 {
            break;
        }
        let df: f64 = out.iter().zip(&p).map(|(m, pi)| (pi - u) * (m / u).ln()).sum();
        lam -= f / df;
    }
    lam *= 1.0 - 1e-12;
    if rng.random_bool(0.3) {
        lam *= rng.random::<f64>();
    }
    mix(lam, out);
}

fn gibbs_optimality() -> Verdict {
    let t = Instant::now();
    let mut failures = 0usize;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut infeasible = 0usize;
    let mut bad_points = 0usize;
    let mut buf = [0.0f64; 6];
    for case in 0..200u64 {
        let mut rng = rng_for(2, "utilities", case);
        let n = rng.random_range(1..=6usize);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let s: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        for &delta in &[0.1, 0.5, 1.0] {
            let sol = solve_temperature(&s, delta).unwrap();
            let q = gibbs_weights(&s, sol.tau);
            if kl_to_uniform(&q).unwrap() > delta + 1e-9 {
                infeasible += 1;
            }
            let best: f64 = q.iter().zip(&s).map(|(q, s)| q * s).sum();
            let mut prng = rng_for(case, "points", (delta * 10.0) as u64);
            let mut case_failed = false;
            for _ in 0..100_000 {
                let p = &mut buf[..n];
                feasible_point(&mut prng, n, delta, p);
                bad_points += (kl(p) > delta + 1e-12) as usize;
                let v: f64 = p.iter().zip(&s).map(|(p, s)| p * s).sum();
                let gap = v - best;
                worst_gap = worst_gap.max(gap / scale);
                if gap > 1e-9 {
                    case_failed = true;
                }
            }
            failures += case_failed as usize;
        }
    }
    let elapsed = t.elapsed();
    verdict(
        failures == 0 && infeasible == 0 && bad_points == 0 && elapsed < Duration::from_secs(60),
        format!(
            "600 cases x 1e5 feasible points, {failures} beaten, {infeasible} infeasible optima, \
             {bad_points} sampled points over budget, worst relative margin {worst_gap:.2e}, {:.1}s",
            secs(elapsed)
        ),
    )
}

fn limit_reductions() -> Verdict {
    let mut worst_uniform = 0.0f64;
    let mut worst_mass = 1.0f64;
    for case in 0..1000u64 {
        let mut rng = rng_for(3, "limits", case);
        let n = rng.random_range(1..=64usize);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let q = gibbs_weights(&s, 0.0);
        let u = 1.0 / n as f64;
        worst_uniform = q.iter().fold(worst_uniform, |m, x| m.max((x - u).abs()));

        let mut sorted = s.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let gap = if n > 1 { sorted[0] - sorted[1] } else { 1.0 };
        if gap <= 0.0 {
            continue;
        }
        let tau = 10.0 * rng.random_range(1.0..3.0) / gap;
        let q = gibbs_weights(&s, tau);
        let top = s.iter().position(|&x| x == sorted[0]).unwrap();
        worst_mass = worst_mass.min(q[top]);
    }
    verdict(
        worst_uniform <= 1e-12 && worst_mass >= 0.99,
        format!("1000 cases, max |q-u| at tau 0 = {worst_uniform:.1e}, min argmax mass = {worst_mass:.5}"),
    )
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn variance_matching() -> Verdict {
    let cfg = ReweightConfig {
        strategy: Strategy::Vcore,
        temperature: Temperature::TauEff(1.0),
        ..Default::default()
    };
    let heavy = StudentT::new(3.0).unwrap();
    let mut scaled = Vec::with_capacity(80_000);
    let mut plain = Vec::with_capacity(80_000);
    let mut clamped = 0usize;
    for k in 0..10_000u64 {
        let mut rng = rng_for(4, "stream", k);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..8 {
            let len = rng.random_range(4..=32usize);
            let s: Vec<f64> = (0..len).map(|_| heavy.sample(&mut rng)).collect();
            let q = gibbs_weights(&s, 1.0);
            a.push(q.iter().zip(&s).map(|(q, s)| q * s).sum::<f64>());
            b.push(s.iter().sum::<f64>() / len as f64);
        }
        let mut st = VarianceStats::default();
        st.update_from_scalars(&a, &b, cfg.ema_decay);
        let alpha = variance_alpha(&st, &cfg);
        if alpha == cfg.alpha_clamp.0 || alpha == cfg.alpha_clamp.1 {
            clamped += 1;
        }
        scaled.extend(a.iter().map(|x| alpha * x));
        plain.extend(b);
    }
    let ratio = sample_variance(&scaled) / sample_variance(&plain);

    let mut alphas = Vec::new();
    let mut point_ok = true;
    for &len in &[4usize, 16, 64] {
        let mut rng = rng_for(4, "point", len as u64);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..20_000 {
            let s: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            a.push(s[0]);
            b.push(s.iter().sum::<f64>() / len as f64);
        }
        let mut st = VarianceStats::default();
        st.update_from_scalars(&a, &b, cfg.ema_decay);
        let alpha = variance_alpha(&st, &cfg);
        let target = 1.0 / (len as f64).sqrt();
        point_ok &= ((alpha - target) / target).abs() <= 0.05;
        alphas.push(alpha);
    }
    verdict(
        (0.8..=1.25).contains(&ratio) && point_ok,
        format!(
            "variance ratio {ratio:.4} over 1e4 batches ({clamped} clamped), point-mass alpha {} vs [0.5 0.25 0.125]",
            fmt_list(&alphas, 4)
        ),
    )
}

fn reference_spec() -> TaskSpec {
    TaskSpec::new(13, 4, Op::ALL.to_vec()).unwrap()
}

struct Reference {
    spec: TaskSpec,
    model: TinyLm,
    train: Vec<Sequence>,
    eval: Vec<CotExample>,
}

/// The modulus-13, chain-4 task with 30% spurious tokens, 512 train and
/// 128 eval examples, and a d32 single-block model, all seeded from `seed`.
fn reference(seed: u64) -> Reference {
    let spec = reference_spec();
    let noise = NoiseSpec {
        spurious_rate: 0.3,
        modes: vec![NoiseMode::DistractorStep, NoiseMode::CorruptedValue],
        seed,
    };
    let (train, eval) = generate_splits(&spec, 512, 128, Some(&noise), seed).unwrap();
    let cfg = ModelConfig {
        vocab_size: spec.vocab_size(),
        context_len: 64,
        d_model: 32,
        n_layers: 1,
        n_heads: 4,
        init_seed: derive_seed(seed, "init", 0),
    };
    let train = train.iter().map(|e| encode(e, &spec, 64).unwrap()).collect();
    Reference {
        spec,
        model: TinyLm::new(cfg).unwrap(),
        train,
        eval,
    }
}

fn degenerate_equivalence() -> Verdict {
    let r = reference(7);
    let uniform = TrainConfig {
        learning_rate: 0.3,
        steps: 100,
        seed: 7,
        ..Default::default()
    };
    let mut vcore = uniform.clone();
    vcore.reweight = ReweightConfig {
        strategy: Strategy::Vcore,
        temperature: Temperature::TauEff(0.0),
        alpha_mode: AlphaMode::Off,
        ..Default::default()
    };
    let trajectory = |cfg: &TrainConfig| {
        let mut st = TrainState::fresh(&r.model);
        let mut out = Vec::new();
        run_until(&r.model, &mut st, &r.train, cfg, 100, |s, _| {
            out.push(s.params.clone());
            Ok(())
        })
        .unwrap();
        out
    };
    let a = trajectory(&uniform);
    let b = trajectory(&vcore);
    let worst = a
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| (p - q).abs()))
        .fold(0.0f64, f64::max);
    verdict(
        a.len() == 100 && worst <= 1e-10,
        format!("max |theta_uniform - theta_vcore| over 100 steps = {worst:.2e}"),
    )
}

fn gather(data: &[Sequence], idx: &[usize]) -> SequenceBatch {
    SequenceBatch::new(idx.iter().map(|&i| data[i].clone()).collect())
}

fn taylor_check() -> Verdict {
    let r = reference(7);
    let warmup = TrainConfig {
        learning_rate: 0.3,
        steps: 100,
        seed: 7,
        ..Default::default()
    };
    let mut warm = TrainState::fresh(&r.model);
    run_until(&r.model, &mut warm, &r.train, &warmup, 100, |_, _| Ok(())).unwrap();

    let mut worst: f64 = 0.0;
    let mut pass = true;
    for strategy in [Strategy::Uniform, Strategy::Vcore] {
        let mut cfg = warmup.clone();
        cfg.learning_rate = 1e-3;
        cfg.seed = 1000;
        cfg.reweight.strategy = strategy;
        for k in 0..20u64 {
            let (b, p) = sample_step_indices(&cfg, r.train.len(), k).unwrap();
            let batch = gather(&r.train, &b);
            let probe = p.map(|p| gather(&r.train, &p));
            let mut st = warm.clone();
            let mut rng = rng_for(cfg.seed, "mask", k);
            let d = train_step(&r.model, &mut st, &batch, probe.as_ref(), &cfg, &mut rng).unwrap();
            let before = r.model.forward_token_losses(&warm.params, &batch).unwrap().uniform_mean();
            let after = r.model.forward_token_losses(&st.params, &batch).unwrap().uniform_mean();
            let g = descent_direction(&r.model, &warm.params, &batch).unwrap();
            let predicted = -cfg.learning_rate * d.update.dot(&g).unwrap();
            let rel = ((after - before) - predicted).abs() / predicted.abs();
            worst = worst.max(rel);
            pass &= rel <= 0.2;
        }
    }
    verdict(
        pass,
        format!("eta 1e-3, 20 steps each for uniform and vcore, worst relative error {worst:.3e}"),
    )
}

struct RunResult {
    losses: Vec<f64>,
    ratios: Vec<f64>,
    kl: Vec<f64>,
    exact_match: Option<f64>,
}

fn reference_run(r: &Reference, cfg: &TrainConfig, evaluate: bool) -> RunResult {
    let mut st = TrainState::fresh(&r.model);
    let mut res = RunResult {
        losses: Vec::new(),
        ratios: Vec::new(),
        kl: Vec::new(),
        exact_match: None,
    };
    run_until(&r.model, &mut st, &r.train, cfg, cfg.steps, |_, d| {
        res.losses.push(d.log.mean_loss);
        res.kl.push(d.log.kl_q_u);
        if let Some(x) = d.log.spurious_mass_ratio {
            res.ratios.push(x);
        }
        Ok(())
    })
    .unwrap();
    if evaluate {
        res.exact_match = Some(eval_accuracy(&r.model, &st.params, &r.eval, &r.spec).unwrap().exact_match);
    }
    res
}

fn stability() -> Verdict {
    let t = Instant::now();
    let mut wins = 0;
    let (mut off, mut on) = (Vec::new(), Vec::new());
    let mut max_mass = Vec::new();
    for seed in 1..=10u64 {
        let r = reference(seed);
        let mut cfg = TrainConfig {
            learning_rate: 0.3,
            steps: 200,
            seed: seed + 100,
            ..Default::default()
        };
        cfg.reweight = ReweightConfig {
            strategy: Strategy::Vcore,
            temperature: Temperature::TauEff(1000.0),
            alpha_mode: AlphaMode::Off,
            ..Default::default()
        };
        let a = reference_run(&r, &cfg, false);
        cfg.reweight.alpha_mode = AlphaMode::PerBatch;
        let b = reference_run(&r, &cfg, false);
        let sa = loss_spike_metric(&a.losses, 0.2).unwrap();
        let sb = loss_spike_metric(&b.losses, 0.2).unwrap();
        wins += (sa > sb) as usize;
        off.push(sa);
        on.push(sb);
        // Mean KL near ln(mean |y|) means nearly all mass on one token.
        max_mass.push(mean(&a.kl));
    }
    let elapsed = t.elapsed();
    verdict(
        wins >= 8 && elapsed < Duration::from_secs(900),
        format!(
            "tau_eff 1000: spike metric alpha off {} vs per-batch {}, off larger in {wins}/10, \
             mean KL(q||u) {:.2}, {:.0}s",
            fmt_list(&off, 2),
            fmt_list(&on, 2),
            mean(&max_mass),
            secs(elapsed)
        ),
    )
}

fn suppression() -> Verdict {
    let (mut em_u, mut em_v, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
    let mut slowest: f64 = 0.0;
    for seed in 101..=105u64 {
        let r = reference(seed);
        let uniform = TrainConfig {
            learning_rate: 0.3,
            steps: 500,
            seed,
            ..Default::default()
        };
        let mut vcore = uniform.clone();
        vcore.reweight = ReweightConfig {
            strategy: Strategy::Vcore,
            temperature: Temperature::TauEff(10.0),
            alpha_mode: AlphaMode::PerBatch,
            ..Default::default()
        };
        let t = Instant::now();
        let u = reference_run(&r, &uniform, true);
        slowest = slowest.max(secs(t.elapsed()));
        let t = Instant::now();
        let v = reference_run(&r, &vcore, true);
        slowest = slowest.max(secs(t.elapsed()));
        em_u.push(u.exact_match.unwrap());
        em_v.push(v.exact_match.unwrap());
        ratios.push(tail_median(&v.ratios).unwrap());
    }
    let (mu, mv, med) = (mean(&em_u), mean(&em_v), median(&ratios));
    verdict(
        mv >= mu && med < 1.0 && slowest < 600.0,
        format!(
            "5 seeds, exact match uniform {} mean {mu:.4}, vcore {} mean {mv:.4}; \
             vcore tail spurious ratio {} median {med:.3}; slowest run {slowest:.0}s",
            fmt_list(&em_u, 3),
            fmt_list(&em_v, 3),
            fmt_list(&ratios, 3)
        ),
    )
}

fn baselines() -> Verdict {
    let r = reference(9);
    let mut dft_exact = true;
    for case in 0..20u64 {
        let mut rng = rng_for(9, "dft", case);
        let mut params = r.model.init_params();
        for p in params.as_mut_slice() {
            *p += 0.3 * rng.random_range(-1.0..1.0);
        }
        let idx: Vec<usize> = (0..8).map(|_| rng.random_range(0..r.train.len())).collect();
        let batch = gather(&r.train, &idx);
        let losses = r.model.forward_token_losses(&params, &batch).unwrap();
        let probs = r.model.forward_token_probs(&params, &batch).unwrap();
        let cfg = ReweightConfig {
            strategy: Strategy::Dft,
            ..Default::default()
        };
        let out = strategy_weights(
            &StrategyInputs {
                batch: &batch,
                losses: &losses,
                utilities: None,
                reference_losses: None,
            },
            &cfg,
            &mut VarianceStats::default(),
            Some(&mut rng),
        )
        .unwrap();
        for (w, p) in out.weights.rows.iter().zip(&probs) {
            let n = p.len() as f64;
            dft_exact &= w.len() == p.len() && w.iter().zip(p).all(|(w, p)| *w == p / n);
        }
    }

    let batch = gather(&r.train, &(0..16).collect::<Vec<_>>());
    let losses = r.model.forward_token_losses(&r.model.init_params(), &batch).unwrap();
    let cfg = ReweightConfig {
        strategy: Strategy::RandomMask,
        ..Default::default()
    };
    let mut mask_ok = true;
    for seed in 0..1000u64 {
        let mut rng = rng_for(seed, "mask", 0);
        let out = strategy_weights(
            &StrategyInputs {
                batch: &batch,
                losses: &losses,
                utilities: None,
                reference_losses: None,
            },
            &cfg,
            &mut VarianceStats::default(),
            Some(&mut rng),
        )
        .unwrap();
        for (seq, w) in batch.rows.iter().zip(&out.weights.rows) {
            let kept = w.iter().filter(|&&x| x > 0.0).count();
            let want = (0.2 * w.len() as f64).round() as usize;
            let answers = seq.supervised_answer_flags();
            mask_ok &= kept == want && answers.iter().zip(w).all(|(a, x)| !a || *x > 0.0);
        }
    }
    verdict(
        dft_exact && mask_ok,
        format!(
            "DFT weights equal p/|y| exactly over 20 batches: {dft_exact}; random mask keeps \
             round(0.2|y|) with answers over 1000 seeds: {mask_ok}"
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) {
    let o = Command::new(env!("CARGO_BIN_EXE_vcore"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn invocations(dir: &Path) {
    let small = ["--d-model", "16", "--n-layers", "1", "--n-heads", "2", "--context-len", "32", "--batch-size", "4"];
    cli(
        dir,
        &["gen-data", "--modulus", "7", "--chain", "2", "--train", "64", "--eval", "16", "--spurious", "0.3", "--seed", "3", "--out", "data"],
    );
    let mut train = vec![
        "train", "--data", "data", "--out", "run", "--steps", "20", "--lr", "0.2", "--seed", "42",
        "--strategy", "vcore", "--tau-eff", "0.5", "--epsilon", "1e-4", "--checkpoint-every", "5", "--eval-every", "10",
    ];
    train.extend_from_slice(&small);
    cli(dir, &train);
    let mut sweep = vec![
        "sweep", "--data", "data", "--taus", "0.5,1", "--epsilons", "1e-4,1e-5", "--steps", "10", "--lr", "0.2",
        "--seed", "42", "--out", "sweep.csv", "--jobs", "2",
    ];
    sweep.extend_from_slice(&small);
    cli(dir, &sweep);
}

fn files(dir: &Path) -> Vec<String> {
    let mut out = vec!["sweep.csv".to_string(), "data/train.jsonl".into(), "data/eval.jsonl".into()];
    let mut run: Vec<String> = fs::read_dir(dir.join("run"))
        .unwrap()
        .map(|e| format!("run/{}", e.unwrap().file_name().to_string_lossy()))
        .filter(|n| !n.ends_with("manifest.jsonl"))
        .collect();
    run.sort();
    out.extend(run);
    out
}

fn reproducibility() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    invocations(a.path());
    invocations(b.path());
    let names = files(a.path());
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(a.path().join(n)).ok() != fs::read(b.path().join(n)).ok())
        .collect();
    let checkpoints = names.iter().filter(|n| n.contains("checkpoint-")).count();
    verdict(
        differing.is_empty() && names.len() == files(b.path()).len() && checkpoints == 4,
        format!(
            "{} files compared ({checkpoints} checkpoints, metrics, summary, data, sweep table), differing: {differing:?}",
            names.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("estimator fidelity", estimator_fidelity),
        ("gibbs optimality", gibbs_optimality),
        ("limit reductions", limit_reductions),
        ("variance matching", variance_matching),
        ("degenerate equivalence", degenerate_equivalence),
        ("first-order descent", taylor_check),
        ("stability", stability),
        ("spurious suppression and generalization", suppression),
        ("baseline contracts", baselines),
        ("reproducibility", reproducibility),
    ];
    let only: Option<usize> = std::env::var("VCORE_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let v = f();
        failed += !v.pass as usize;
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {n} ({name}): {}", v.detail);
    }
    if failed > 0 && std::env::var("VCORE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
