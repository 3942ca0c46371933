//! Shared fixtures and a naive reference model used as an oracle.
#![allow(dead_code)]

use shishu::model::{LayerView, MlpWeights};
use shishu::{ModelConfig, ModelWeights, RngState, Tensor};

/// Small configuration with grouped-query attention (4 query heads over 2
/// key/value heads).
pub fn micro_config(layers: &str) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(layers.parse().expect("valid schedule"));
    cfg.hidden_size = 16;
    cfg.intermediate_size = 24;
    cfg.num_attention_heads = 4;
    cfg.num_kv_heads = 2;
    cfg.vocab_size = 37;
    cfg.max_seq_len = 64;
    cfg
}

/// f64 weights with projections scaled by `scale` and norm scales jittered
/// around 1, so every parameter carries a non-trivial gradient.
pub fn jittered_model(cfg: &ModelConfig, seed: u64, scale: f64) -> ModelWeights<f64> {
    let mut m = ModelWeights::<f64>::build(cfg, seed).unwrap();
    let mut rng = RngState::new(seed ^ 0x5eed);
    for t in m.params_mut() {
        if t.ndim() == 1 {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = 1.0 + rng.normal(0.0, 0.1));
        } else {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    m
}

pub fn random_tokens(rng: &mut RngState, n: usize, vocab: usize) -> Vec<u32> {
    (0..n).map(|_| rng.below(vocab) as u32).collect()
}

fn vec_mat(x: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), rows);
    let mut out = vec![0.0; cols];
    for (i, xi) in x.iter().enumerate() {
        for j in 0..cols {
            out[j] += xi * w.data()[i * cols + j];
        }
    }
    out
}

fn rms(x: &[f64], w: &Tensor<f64>, eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    x.iter().zip(w.data()).map(|(v, g)| v * inv * g).collect()
}

fn mlp(h: &[f64], w: &MlpWeights<f64>) -> Vec<f64> {
    let gate = vec_mat(h, &w.gate_proj);
    let up = vec_mat(h, &w.up_proj);
    let act: Vec<f64> = gate
        .iter()
        .zip(&up)
        .map(|(g, u)| g / (1.0 + (-g).exp()) * u)
        .collect();
    vec_mat(&act, &w.down_proj)
}

/// Rotates each adjacent channel pair `(a, b)` as the complex number
/// `a + ib` multiplied by `exp(i·pos·theta^(-2k/head_dim))`.
fn rotate(v: &mut [f64], pos: usize, theta: f64) {
    let hd = v.len();
    for k in 0..hd / 2 {
        let angle = pos as f64 / theta.powf(2.0 * k as f64 / hd as f64);
        let (re, im) = (v[2 * k], v[2 * k + 1]);
        v[2 * k] = re * angle.cos() - im * angle.sin();
        v[2 * k + 1] = re * angle.sin() + im * angle.cos();
    }
}

/// Logits `[T][V]` of one sequence, computed position by position with
/// explicit loops.
pub fn reference_logits(m: &ModelWeights<f64>, tokens: &[u32]) -> Vec<Vec<f64>> {
    let cfg = &m.config;
    let (d, heads, kv_heads) = (cfg.hidden_size, cfg.num_attention_heads, cfg.num_kv_heads);
    let hd = d / heads;
    let eps = cfg.rms_norm_eps;
    let mut h: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| m.embedding.data()[t as usize * d..(t as usize + 1) * d].to_vec())
        .collect();
    for layer in 0..cfg.num_layers() {
        match m.layer(layer) {
            LayerView::Decoder(w) => {
                let normed: Vec<Vec<f64>> = h.iter().map(|x| rms(x, &w.input_norm, eps)).collect();
                let mut q: Vec<Vec<f64>> =
                    normed.iter().map(|x| vec_mat(x, &w.attn.q_proj)).collect();
                let mut k: Vec<Vec<f64>> =
                    normed.iter().map(|x| vec_mat(x, &w.attn.k_proj)).collect();
                let v: Vec<Vec<f64>> = normed.iter().map(|x| vec_mat(x, &w.attn.v_proj)).collect();
                for (pos, (qt, kt)) in q.iter_mut().zip(k.iter_mut()).enumerate() {
                    qt.chunks_mut(hd)
                        .for_each(|c| rotate(c, pos, cfg.rope_theta));
                    kt.chunks_mut(hd)
                        .for_each(|c| rotate(c, pos, cfg.rope_theta));
                }
                for t in 0..h.len() {
                    let mut ctx = vec![0.0; d];
                    for head in 0..heads {
                        let g = head * kv_heads / heads;
                        let qh = &q[t][head * hd..(head + 1) * hd];
                        let scores: Vec<f64> = (0..=t)
                            .map(|j| {
                                let kh = &k[j][g * hd..(g + 1) * hd];
                                qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>()
                                    / (hd as f64).sqrt()
                            })
                            .collect();
                        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                        let total: f64 = exps.iter().sum();
                        for (j, e) in exps.iter().enumerate() {
                            for c in 0..hd {
                                ctx[head * hd + c] += e / total * v[j][g * hd + c];
                            }
                        }
                    }
                    let out = vec_mat(&ctx, &w.attn.o_proj);
                    h[t].iter_mut().zip(out).for_each(|(a, b)| *a += b);
                    let ff = mlp(&rms(&h[t], &w.post_attn_norm, eps), &w.mlp);
                    h[t].iter_mut().zip(ff).for_each(|(a, b)| *a += b);
                }
            }
            LayerView::Shishu(w) => {
                for x in h.iter_mut() {
                    let ff = mlp(&rms(x, &w.norm, eps), &w.mlp);
                    x.iter_mut().zip(ff).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    h.iter()
        .map(|x| {
            let n = rms(x, &m.final_norm, eps);
            match &m.lm_head {
                Some(head) => vec_mat(&n, head),
                None => (0..cfg.vocab_size)
                    .map(|tok| {
                        n.iter()
                            .zip(&m.embedding.data()[tok * d..(tok + 1) * d])
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Largest absolute difference between two equal-length slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
