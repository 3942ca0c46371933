//! Acceptance suite: ten end-to-end criteria, each printed as PASS or FAIL
//! with its measurement and elapsed time. Run with
//! `cargo test -p shishu-cli --test acceptance -- --nocapture`.

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use shishu::bench::{
    latency_rows, memory_estimate, time_model, BenchConfig, BenchMode, ScoreStorage,
};
use shishu::emd::{emd_1d, emd_lp, DiscreteDistribution};
use shishu::model::{count_parameters, KvCache, LayerView};
use shishu::probe::{fit_linear, fit_scalar_identity, scale_invariance_report, IoCapture};
use shishu::tensor::grad_check::{finite_diff_grad, relative_error, DEFAULT_REL_STEP};
use shishu::tensor::ops::{
    cross_entropy, matmul, matmul_backward, normal_init, rmsnorm, rmsnorm_backward, rope_apply,
    rope_backward, silu, silu_backward, softmax_rows, softmax_rows_backward,
};
use shishu::train::{eval_loss, synthetic_corpus, train, CorpusDataset, TrainConfig};
use shishu::{ModelConfig, ModelWeights, RngState, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn model_from_file(name: &str) -> ModelConfig {
    let text = fs::read_to_string(configs_dir().join(name)).expect("config file");
    let table: toml::Table = toml::from_str(&text).expect("toml");
    table["model"].clone().try_into().expect("model config")
}

fn tiny(layers: &str, max_seq_len: usize) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(layers.parse().expect("schedule"));
    cfg.max_seq_len = max_seq_len;
    cfg
}

fn micro(layers: &str) -> ModelConfig {
    let mut cfg = tiny(layers, 64);
    cfg.hidden_size = 16;
    cfg.intermediate_size = 24;
    cfg.vocab_size = 37;
    cfg
}

fn tokens(rng: &mut RngState, n: usize, vocab: usize) -> Vec<u32> {
    (0..n).map(|_| rng.below(vocab) as u32).collect()
}

fn randn(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    normal_init(shape, 0.0, 1.0, rng)
}

fn jittered(cfg: &ModelConfig, seed: u64) -> ModelWeights<f64> {
    let mut m = ModelWeights::<f64>::build(cfg, seed).unwrap();
    let mut rng = RngState::new(seed ^ 0xabc);
    for t in m.params_mut() {
        if t.ndim() == 1 {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = 1.0 + rng.normal(0.0, 0.1));
        } else {
            t.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        }
    }
    m
}

fn project(y: &Tensor<f64>, g: &Tensor<f64>) -> f64 {
    y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error of backprop against central differences over every
/// parameter of `m`.
fn model_grad_error(m: &ModelWeights<f64>, inputs: &[u32], targets: &[u32], batch: usize) -> f64 {
    let mut work = m.clone();
    work.zero_grad();
    work.loss_and_backward(inputs, targets, batch, 1.0).unwrap();
    let analytic: Vec<Vec<f64>> = work
        .params()
        .into_iter()
        .map(|(_, t)| t.grad().unwrap().to_vec())
        .collect();
    let mut worst = 0.0f64;
    for (idx, grad) in analytic.iter().enumerate() {
        let base = m.params()[idx].1.clone();
        let numeric = finite_diff_grad(
            |probe| {
                let mut trial = m.clone();
                trial.params_mut()[idx]
                    .data_mut()
                    .copy_from_slice(probe.data());
                trial.loss(inputs, targets, batch).unwrap()
            },
            &base,
            DEFAULT_REL_STEP,
        );
        worst = worst.max(relative_error(grad, numeric.data()));
    }
    worst
}

fn c1_parameter_counts() -> Outcome {
    let small = count_parameters(&model_from_file("mobilellm_125m.toml"));
    let large = count_parameters(&model_from_file("mobilellm_600m.toml"));
    ensure(small == 124_635_456, || {
        format!("125M config counts {small}")
    })?;
    ensure(large == 603_188_352, || {
        format!("600M config counts {large}")
    })?;
    Ok(format!("{small} and {large}"))
}

fn c2_rmsnorm_scale_invariance() -> Outcome {
    let mut rng = RngState::new(2);
    let x: Tensor<f32> = normal_init(&[100, 64], 0.0, 1.0, &mut rng);
    let worst =
        scale_invariance_report(&x, &[0.5, 2.0, 10.0, 100.0], 0.0).map_err(|e| e.to_string())?;
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.2e} over 100 vectors"))
}

fn c3_gradients() -> Outcome {
    let worst = std::cell::Cell::new(0.0f64);
    let track = |name: &str, seed: u64, a: &[f64], n: &[f64]| -> Result<(), String> {
        let err = relative_error(a, n);
        worst.set(worst.get().max(err));
        ensure(err < 1e-4, || format!("{name} seed {seed}: {err:e}"))
    };
    for seed in 0..20u64 {
        let mut rng = RngState::new(seed);
        let (a, b, g) = (
            randn(&[3, 5], &mut rng),
            randn(&[5, 4], &mut rng),
            randn(&[3, 4], &mut rng),
        );
        let (da, db) = matmul_backward(&a, &b, &g).unwrap();
        track(
            "matmul",
            seed,
            da.data(),
            finite_diff_grad(
                |x| project(&matmul(x, &b).unwrap(), &g),
                &a,
                DEFAULT_REL_STEP,
            )
            .data(),
        )?;
        track(
            "matmul",
            seed,
            db.data(),
            finite_diff_grad(
                |x| project(&matmul(&a, x).unwrap(), &g),
                &b,
                DEFAULT_REL_STEP,
            )
            .data(),
        )?;

        let (x, g) = (randn(&[4, 6], &mut rng), randn(&[4, 6], &mut rng));
        track(
            "silu",
            seed,
            silu_backward(&x, &g).unwrap().data(),
            finite_diff_grad(|x| project(&silu(x), &g), &x, DEFAULT_REL_STEP).data(),
        )?;

        let (x, g, w) = (
            randn(&[3, 8], &mut rng),
            randn(&[3, 8], &mut rng),
            randn(&[8], &mut rng),
        );
        let (dx, dw) = rmsnorm_backward(&x, &w, 1e-5, &g).unwrap();
        track(
            "rmsnorm",
            seed,
            dx.data(),
            finite_diff_grad(
                |x| project(&rmsnorm(x, &w, 1e-5).unwrap(), &g),
                &x,
                DEFAULT_REL_STEP,
            )
            .data(),
        )?;
        track(
            "rmsnorm",
            seed,
            dw.data(),
            finite_diff_grad(
                |w| project(&rmsnorm(&x, w, 1e-5).unwrap(), &g),
                &w,
                DEFAULT_REL_STEP,
            )
            .data(),
        )?;

        let (x, g) = (randn(&[3, 7], &mut rng), randn(&[3, 7], &mut rng));
        let dx = softmax_rows_backward(&softmax_rows(&x), &g).unwrap();
        track(
            "softmax",
            seed,
            dx.data(),
            finite_diff_grad(|x| project(&softmax_rows(x), &g), &x, DEFAULT_REL_STEP).data(),
        )?;

        let (x, g) = (randn(&[2, 5, 8], &mut rng), randn(&[2, 5, 8], &mut rng));
        let pos = [0, 2, 5, 11, 40];
        let dx = rope_backward(&g, &pos, 10_000.0).unwrap();
        track(
            "rope",
            seed,
            dx.data(),
            finite_diff_grad(
                |x| project(&rope_apply(x, &pos, 10_000.0).unwrap(), &g),
                &x,
                DEFAULT_REL_STEP,
            )
            .data(),
        )?;

        let logits = randn(&[6, 9], &mut rng);
        let targets: Vec<u32> = (0..6).map(|_| rng.below(9) as u32).collect();
        let ce = cross_entropy(&logits, &targets).unwrap();
        track(
            "cross entropy",
            seed,
            ce.grad.data(),
            finite_diff_grad(
                |x| cross_entropy(x, &targets).unwrap().loss,
                &logits,
                DEFAULT_REL_STEP,
            )
            .data(),
        )?;

        let cfg = micro(["D S0 S0", "D D", "S0 D S1 S1"][seed as usize % 3]);
        let m = jittered(&cfg, seed);
        let (inputs, targets) = (tokens(&mut rng, 8, 37), tokens(&mut rng, 8, 37));
        let err = model_grad_error(&m, &inputs, &targets, 2);
        worst.set(worst.get().max(err));
        ensure(err < 1e-4, || format!("full model seed {seed}: {err:e}"))?;
    }
    Ok(format!(
        "6 ops + full model, 20 seeds, worst relative error {:.2e}",
        worst.get()
    ))
}

fn c4_kv_cache() -> Outcome {
    let schedules = [
        "D D D",
        "D S0 S0 D",
        "S0 S0 D D",
        "D S0 S1 S2 D",
        "D D S0 S0 S1 S1",
    ];
    let mut rng = RngState::new(4);
    let mut worst = 0.0f64;
    for pair in 0..20 {
        let cfg = tiny(schedules[pair % schedules.len()], 64);
        let m = ModelWeights::<f32>::build(&cfg, pair as u64).unwrap();
        let total = 2 + rng.below(63);
        let prompt = 1 + rng.below(total - 1);
        let toks = tokens(&mut rng, total, cfg.vocab_size);
        let full = m.forward(&toks, 1, None).unwrap();
        let v = cfg.vocab_size;
        let mut cache = KvCache::new(&cfg, 1);
        let mut got = m
            .forward(&toks[..prompt], 1, Some(&mut cache))
            .unwrap()
            .data()
            .to_vec();
        for t in prompt..total {
            got.extend_from_slice(m.decode_step(&toks[t..t + 1], &mut cache).unwrap().data());
        }
        let diff = got
            .iter()
            .zip(&full.data()[..total * v])
            .map(|(a, b)| f64::from((a - b).abs()))
            .fold(0.0, f64::max);
        worst = worst.max(diff);
        ensure(diff < 1e-5, || format!("pair {pair}: {diff:e}"))?;
    }
    Ok(format!("20 pairs, max |Δlogit| {worst:.2e}"))
}

fn c5_weight_sharing() -> Outcome {
    let cfg = micro("D S0 S0 D");
    let m = jittered(&cfg, 5);
    let mut rng = RngState::new(5);
    let (inputs, targets) = (tokens(&mut rng, 12, 37), tokens(&mut rng, 12, 37));
    let fd = model_grad_error(&m, &inputs, &targets, 2);
    ensure(fd < 1e-4, || {
        format!("shared model finite differences {fd:e}")
    })?;

    let mut shared = m.clone();
    shared.zero_grad();
    shared.loss_and_backward(&inputs, &targets, 2, 1.0).unwrap();
    let mut split = m.unshared();
    split.zero_grad();
    split.loss_and_backward(&inputs, &targets, 2, 1.0).unwrap();
    let g = &shared.shishu_groups[0];
    let (a, b) = (&split.shishu_groups[0], &split.shishu_groups[1]);
    let mut worst = 0.0f64;
    for (s, x, y) in [
        (&g.norm, &a.norm, &b.norm),
        (&g.mlp.gate_proj, &a.mlp.gate_proj, &b.mlp.gate_proj),
        (&g.mlp.up_proj, &a.mlp.up_proj, &b.mlp.up_proj),
        (&g.mlp.down_proj, &a.mlp.down_proj, &b.mlp.down_proj),
    ] {
        let sum: Vec<f64> = x
            .grad()
            .unwrap()
            .iter()
            .zip(y.grad().unwrap())
            .map(|(p, q)| p + q)
            .collect();
        worst = worst.max(relative_error(s.grad().unwrap(), &sum));
    }
    ensure(worst < 1e-4, || {
        format!("shared vs summed gradient {worst:e}")
    })?;

    let cfg = tiny("D S0 S0 D", 64);
    let corpus = synthetic_corpus(40_000, 5);
    let data = CorpusDataset::from_bytes(&corpus, 32, 4).unwrap();
    let tc = TrainConfig {
        total_steps: 100,
        batch_size: 4,
        micro_batch: 4,
        block_size: 32,
        eval_interval: 0,
        val_blocks: 4,
        ..TrainConfig::default()
    };
    let mut model = ModelWeights::<f32>::build(&cfg, 5).unwrap();
    train(&mut model, &data, &tc, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let (LayerView::Shishu(l1), LayerView::Shishu(l2)) = (model.layer(1), model.layer(2)) else {
        return Err("layers 1 and 2 should be MLP-only".into());
    };
    let identical = l1.norm.data() == l2.norm.data()
        && l1.mlp.gate_proj.data() == l2.mlp.gate_proj.data()
        && l1.mlp.up_proj.data() == l2.mlp.up_proj.data()
        && l1.mlp.down_proj.data() == l2.mlp.down_proj.data();
    ensure(identical, || "views differ after training".into())?;
    Ok(format!(
        "finite differences {fd:.2e}, shared vs summed {worst:.2e}, views identical after 100 steps"
    ))
}

fn c6_probe_algebra() -> Outcome {
    let mut rng = RngState::new(6);
    let d = 16;
    let planted = randn(&[d, d], &mut rng);
    let x = randn(&[80, d], &mut rng);
    // z = A·x per row
    let mut z = Tensor::zeros(&[80, d]);
    for r in 0..80 {
        for i in 0..d {
            z.data_mut()[r * d + i] = (0..d)
                .map(|j| planted.data()[i * d + j] * x.data()[r * d + j])
                .sum();
        }
    }
    let cap = IoCapture::from_pairs(vec![(x, z)], 80).map_err(|e| e.to_string())?;
    let fit = fit_linear(&cap, 0, false).map_err(|e| e.to_string())?;
    ensure(fit.mse < 1e-10, || format!("planted map MSE {:e}", fit.mse))?;
    let recovered = fit.w.max_abs_diff(&planted);
    ensure(recovered < 1e-8, || {
        format!("recovered map off by {recovered:e}")
    })?;

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let w = normal_init::<f64>(&[8, 8], 0.0, 1.0, &mut rng);
        let (alpha, _) = fit_scalar_identity(&w).map_err(|e| e.to_string())?;
        let mse_at = |a: f64| {
            (0..64)
                .map(|k| {
                    let t = if k / 8 == k % 8 { a } else { 0.0 };
                    (t - w.data()[k]).powi(2)
                })
                .sum::<f64>()
                / 64.0
        };
        let (mut best, mut best_a) = (f64::INFINITY, 0.0);
        for step in -40_000..=40_000 {
            let a = f64::from(step) * 1e-4;
            let m = mse_at(a);
            if m < best {
                best = m;
                best_a = a;
            }
        }
        worst = worst.max((best_a - alpha).abs());
    }
    ensure(worst < 1e-3, || {
        format!("grid search disagrees by {worst:e}")
    })?;
    Ok(format!(
        "planted MSE {:.1e}, scalar fit vs grid {worst:.1e}",
        fit.mse
    ))
}

fn random_distribution(rng: &mut RngState, max_len: usize) -> DiscreteDistribution {
    let n = 1 + rng.below(max_len);
    let mut points: Vec<f64> = (0..n).map(|_| rng.uniform() * 20.0 - 10.0).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let raw: Vec<f64> = points.iter().map(|_| 0.05 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    DiscreteDistribution::new(points, raw.iter().map(|m| m / total).collect()).unwrap()
}

fn c7_emd() -> Outcome {
    let mut rng = RngState::new(7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (p, q) = (
            random_distribution(&mut rng, 50),
            random_distribution(&mut rng, 50),
        );
        let diff = (emd_1d(&p, &q).unwrap() - emd_lp(&p, &q).unwrap().cost).abs();
        worst = worst.max(diff);
    }
    ensure(worst < 1e-9, || {
        format!("closed form vs transport LP {worst:e}")
    })?;
    for i in 0..500 {
        let (p, q, r) = (
            random_distribution(&mut rng, 12),
            random_distribution(&mut rng, 12),
            random_distribution(&mut rng, 12),
        );
        let pq = emd_1d(&p, &q).unwrap();
        let ok = pq >= 0.0
            && emd_1d(&p, &p).unwrap().abs() < 1e-12
            && (pq - emd_1d(&q, &p).unwrap()).abs() < 1e-12
            && pq <= emd_1d(&p, &r).unwrap() + emd_1d(&r, &q).unwrap() + 1e-9;
        ensure(ok, || format!("metric axiom violated on triple {i}"))?;
    }
    Ok(format!(
        "200 instances, max |1d − lp| {worst:.1e}; axioms hold on 500 triples"
    ))
}

fn c8_training() -> Outcome {
    let cfg = tiny("D D D D S0 S0 S1 S1 S2 S2 S3 S3", 256);
    let corpus = synthetic_corpus(600_000, 8);
    let data = CorpusDataset::from_bytes(&corpus, 64, 32).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        total_steps: 1000,
        batch_size: 8,
        micro_batch: 8,
        block_size: 64,
        eval_interval: 0,
        val_blocks: 32,
        weight_decay: 5e-2,
        seed: 8,
        ..TrainConfig::default()
    };
    let mut model = ModelWeights::<f32>::build(&cfg, tc.seed).unwrap();
    let summary = train(&mut model, &data, &tc, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let val = summary.final_val_loss.ok_or("no validation loss")?;
    let bound = (256f64).ln() - 0.5;
    ensure(val < bound, || {
        format!("validation loss {val:.3} not below {bound:.3}")
    })?;

    // single-batch memorization
    let one = CorpusDataset::from_bytes(&corpus[..8 * 64 + 1], 64, 0).map_err(|e| e.to_string())?;
    let oc = TrainConfig {
        total_steps: 500,
        batch_size: 8,
        micro_batch: 8,
        block_size: 64,
        eval_interval: 0,
        val_blocks: 0,
        learning_rate: 3e-3,
        weight_decay: 0.0,
        seed: 8,
        ..TrainConfig::default()
    };
    let mut over = ModelWeights::<f32>::build(&cfg, 8).unwrap();
    train(&mut over, &one, &oc, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let overfit =
        eval_loss(&over, (0..8).map(|i| one.train_example(i)), 8).map_err(|e| e.to_string())?;
    ensure(overfit < 0.1, || {
        format!("single-batch loss {overfit:.4} not below 0.1")
    })?;
    Ok(format!(
        "val loss {val:.3} < {bound:.3} after 1000 steps; single-batch loss {overfit:.4}"
    ))
}

fn c9_efficiency() -> Outcome {
    let lengths = vec![64, 128, 256, 512];
    let parent_cfg = tiny("D D D D D D D D D D D D", 512);
    let shishu_cfg = tiny("D D D D S0 S0 S1 S1 S2 S2 S3 S3", 512);
    let parent = ModelWeights::<f32>::build(&parent_cfg, 9).unwrap();
    let shishu = ModelWeights::<f32>::build(&shishu_cfg, 9).unwrap();
    let mut lines = Vec::new();
    for mode in [BenchMode::Inference, BenchMode::Training] {
        let bc = BenchConfig {
            lengths: lengths.clone(),
            batch: 1,
            warmup: 2,
            reps: 9,
            mode,
            seed: 9,
        };
        let p = time_model(&parent, &bc).map_err(|e| e.to_string())?;
        let s = time_model(&shishu, &bc).map_err(|e| e.to_string())?;
        for row in latency_rows(mode, &p, &s).map_err(|e| e.to_string())? {
            ensure(row.shishu_ms < row.parent_ms, || {
                format!(
                    "{} T={}: {:.3} ms vs parent {:.3} ms",
                    mode.name(),
                    row.length,
                    row.shishu_ms,
                    row.parent_ms
                )
            })?;
            lines.push(format!(
                "{}@{} −{:.0}%",
                &mode.name()[..5],
                row.length,
                row.pct_reduction
            ));
        }
        for &t in &lengths {
            for scores in [ScoreStorage::Materialized, ScoreStorage::Streaming] {
                let pm = memory_estimate(&parent_cfg, 1, t, mode, scores);
                let sm = memory_estimate(&shishu_cfg, 1, t, mode, scores);
                ensure(sm.total() < pm.total(), || {
                    format!("memory at T={t} not reduced")
                })?;
                if mode == BenchMode::Inference {
                    ensure(sm.kv_cache_bytes * 12 == pm.kv_cache_bytes * 4, || {
                        format!("KV ratio {} / {}", sm.kv_cache_bytes, pm.kv_cache_bytes)
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "latency {}; memory lower; KV ratio exactly 4/12",
        lines.join(", ")
    ))
}

fn c10_ablation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus.txt");
    fs::write(&corpus, synthetic_corpus(120_000, 10)).map_err(|e| e.to_string())?;
    let spec = configs_dir().join("ablation_removal.toml");
    let run = |out: &Path, extra: &[&str]| -> Result<(), String> {
        let mut args = vec![
            "ablate".to_string(),
            "--spec".into(),
            spec.display().to_string(),
            "--corpus".into(),
            corpus.display().to_string(),
            "--out-dir".into(),
            out.display().to_string(),
            "--steps".into(),
            "40".into(),
            "--eval-interval".into(),
            "20".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        let status = Command::new(env!("CARGO_BIN_EXE_shishu"))
            .args(&args)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!("ablate failed: {}", String::from_utf8_lossy(&status.stderr))
        })
    };
    let read = |out: &Path| fs::read_to_string(out.join("summary.csv")).map_err(|e| e.to_string());
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    run(&a, &[])?;
    run(&b, &[])?;
    let reference = read(&a)?;
    let rows: Vec<&str> = reference
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    ensure(rows.len() == 4, || format!("{} summary rows", rows.len()))?;
    ensure(rows.iter().all(|r| r.ends_with(",ok")), || {
        "an entry did not finish".into()
    })?;
    ensure(read(&b)? == reference, || "rerun summary differs".into())?;
    run(&c, &["--limit", "2"])?;
    ensure(read(&c)?.contains(",pending"), || {
        "interrupted run has no pending rows".into()
    })?;
    run(&c, &[])?;
    ensure(read(&c)? == reference, || "resumed summary differs".into())?;
    let names: Vec<&str> = rows
        .iter()
        .map(|r| r.split(',').nth(1).unwrap_or(""))
        .collect();
    Ok(format!(
        "grid {} deterministic; resume after 2 of 4 identical",
        names.join(", ")
    ))
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Duration, Check); 10] = [
        (
            "parameter-count reproduction",
            Duration::from_secs(1),
            c1_parameter_counts,
        ),
        (
            "RMSNorm scale invariance",
            Duration::from_secs(1),
            c2_rmsnorm_scale_invariance,
        ),
        (
            "gradient correctness",
            Duration::from_secs(60),
            c3_gradients,
        ),
        ("KV-cache equivalence", Duration::from_secs(60), c4_kv_cache),
        (
            "weight-sharing correctness",
            Duration::from_secs(60),
            c5_weight_sharing,
        ),
        (
            "linearity-probe algebra",
            Duration::from_secs(30),
            c6_probe_algebra,
        ),
        ("EMD oracle equivalence", Duration::from_secs(30), c7_emd),
        (
            "desk-scale training viability",
            Duration::from_secs(20 * 60),
            c8_training,
        ),
        (
            "directional efficiency",
            Duration::from_secs(5 * 60),
            c9_efficiency,
        ),
        (
            "ablation grid determinism and resume",
            Duration::from_secs(5 * 60),
            c10_ablation,
        ),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.1?}, budget {budget:?}"))
            }
        });
        let line = match &outcome {
            Ok(detail) => format!(
                "criterion {:>2} {name}: PASS ({detail}; {elapsed:.1?})",
                i + 1
            ),
            Err(why) => {
                failed.push(i + 1);
                format!("criterion {:>2} {name}: FAIL ({why}; {elapsed:.1?})", i + 1)
            }
        };
        // straight to the handle so the line shows even when output is captured
        let _ = writeln!(std::io::stderr(), "{line}");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
