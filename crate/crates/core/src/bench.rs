//! Latency measurement and analytic memory accounting.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{count_parameters, KvCache, ModelConfig, ModelWeights};
use crate::tensor::RngState;

/// Sequence lengths of the default sweep.
pub const DEFAULT_LENGTHS: [usize; 7] = [64, 128, 256, 512, 1024, 2048, 4096];
pub const DEFAULT_WARMUP: usize = 3;
pub const DEFAULT_REPS: usize = 10;

/// Bytes per stored element (single precision).
const ELEM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    /// Forward pass only.
    Inference,
    /// Forward and backward pass.
    Training,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Inference => "inference",
            BenchMode::Training => "training",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub batch: usize,
    pub warmup: usize,
    pub reps: usize,
    pub mode: BenchMode,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: DEFAULT_LENGTHS.to_vec(),
            batch: 1,
            warmup: DEFAULT_WARMUP,
            reps: DEFAULT_REPS,
            mode: BenchMode::Inference,
            seed: 0,
        }
    }
}

/// Wall-clock statistics of one sequence length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timing {
    pub length: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub median_ms: f64,
    pub reps: usize,
}

fn stats(length: usize, samples: &mut [f64]) -> Timing {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let mid = samples.len() / 2;
    let median = if samples.len().is_multiple_of(2) {
        (samples[mid - 1] + samples[mid]) / 2.0
    } else {
        samples[mid]
    };
    Timing {
        length,
        mean_ms: mean,
        std_ms: var.sqrt(),
        median_ms: median,
        reps: samples.len(),
    }
}

/// Times one step per repetition on seeded random tokens, after `warmup`
/// untimed repetitions.
pub fn time_model(model: &ModelWeights<f32>, cfg: &BenchConfig) -> Result<Vec<Timing>> {
    if cfg.reps == 0 || cfg.batch == 0 {
        return Err(Error::Config(
            "benchmark needs at least one repetition and one row".into(),
        ));
    }
    if let Some(&too_long) = cfg.lengths.iter().find(|&&t| t > model.config.max_seq_len) {
        return Err(Error::OutOfRange {
            what: "benchmark length",
            value: too_long,
            limit: model.config.max_seq_len,
        });
    }
    let mut work = model.clone();
    let mut rng = RngState::new(cfg.seed);
    let v = model.config.vocab_size;
    let mut out = Vec::with_capacity(cfg.lengths.len());
    for &t in &cfg.lengths {
        let n = cfg.batch * t;
        let tokens: Vec<u32> = (0..n).map(|_| rng.below(v) as u32).collect();
        let targets: Vec<u32> = (0..n).map(|_| rng.below(v) as u32).collect();
        let run = |work: &mut ModelWeights<f32>| -> Result<()> {
            match cfg.mode {
                BenchMode::Inference => {
                    let mut cache = KvCache::new(&work.config, cfg.batch);
                    work.forward(&tokens, cfg.batch, Some(&mut cache))?;
                }
                BenchMode::Training => {
                    work.zero_grad();
                    work.loss_and_backward(&tokens, &targets, cfg.batch, 1.0)?;
                }
            }
            Ok(())
        };
        for _ in 0..cfg.warmup {
            run(&mut work)?;
        }
        let mut samples = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            let start = Instant::now();
            run(&mut work)?;
            samples.push(start.elapsed().as_secs_f64() * 1e3);
        }
        out.push(stats(t, &mut samples));
    }
    Ok(out)
}

/// Whether attention probabilities are held as full `T × T` matrices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreStorage {
    #[default]
    Materialized,
    /// Fused kernels that never store the score matrix.
    Streaming,
}

/// Byte-level memory breakdown.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MemoryModel {
    pub parameter_bytes: usize,
    pub gradient_bytes: usize,
    pub optimizer_bytes: usize,
    pub activation_bytes: usize,
    pub kv_cache_bytes: usize,
}

impl MemoryModel {
    pub fn total(&self) -> usize {
        self.parameter_bytes
            + self.gradient_bytes
            + self.optimizer_bytes
            + self.activation_bytes
            + self.kv_cache_bytes
    }
}

/// Elements of one decoder layer's activations for `rows` tokens.
fn decoder_activations(cfg: &ModelConfig, batch: usize, seq: usize, scores: ScoreStorage) -> usize {
    let rows = batch * seq;
    let (d, kv, inter) = (cfg.hidden_size, cfg.kv_dim(), cfg.intermediate_size);
    // x, norm(x), q, k, v, context, y, norm(y), gate, up, gated product
    let dense = rows * (6 * d + 2 * kv + 3 * inter);
    let probs = match scores {
        ScoreStorage::Materialized => batch * cfg.num_attention_heads * seq * seq,
        ScoreStorage::Streaming => 0,
    };
    dense + probs
}

/// Elements of one MLP-only layer's activations.
fn shishu_activations(cfg: &ModelConfig, batch: usize, seq: usize) -> usize {
    // x, norm(x), gate, up, gated product
    batch * seq * (2 * cfg.hidden_size + 3 * cfg.intermediate_size)
}

/// Closed-form memory use at batch `batch` and length `seq`.
///
/// Training keeps every layer's activations for the reverse pass plus
/// gradients and two AdamW moments; inference keeps the largest single
/// layer's transient activations and the KV cache of every decoder layer. Both include
/// the final hidden state and the logits.
pub fn memory_estimate(
    cfg: &ModelConfig,
    batch: usize,
    seq: usize,
    mode: BenchMode,
    scores: ScoreStorage,
) -> MemoryModel {
    let params = count_parameters(cfg);
    let n_dec = cfg.schedule.num_decoders();
    let n_mlp = cfg.schedule.num_shishu_layers();
    let dec = decoder_activations(cfg, batch, seq, scores);
    let mlp = shishu_activations(cfg, batch, seq);
    let head = batch * seq * (cfg.hidden_size + cfg.vocab_size);
    let kv_cache = n_dec * 2 * batch * cfg.num_kv_heads * seq * cfg.head_dim();
    match mode {
        BenchMode::Training => MemoryModel {
            parameter_bytes: params * ELEM,
            gradient_bytes: params * ELEM,
            optimizer_bytes: 2 * params * ELEM,
            activation_bytes: (n_dec * dec + n_mlp * mlp + head) * ELEM,
            kv_cache_bytes: 0,
        },
        BenchMode::Inference => {
            // the current layer's keys and values already live in the cache
            let dec_transient = dec - batch * seq * 2 * cfg.kv_dim();
            let widest =
                if n_dec > 0 { dec_transient } else { 0 }.max(if n_mlp > 0 { mlp } else { 0 });
            MemoryModel {
                parameter_bytes: params * ELEM,
                gradient_bytes: 0,
                optimizer_bytes: 0,
                activation_bytes: (widest + head) * ELEM,
                kv_cache_bytes: kv_cache * ELEM,
            }
        }
    }
}

/// `100 · (parent − shishu) / parent` per cell.
pub fn reduction_table(parent: &[f64], shishu: &[f64]) -> Result<Vec<f64>> {
    if parent.len() != shishu.len() {
        return Err(Error::Shape(format!(
            "{} parent cells vs {} shishu cells",
            parent.len(),
            shishu.len()
        )));
    }
    parent
        .iter()
        .zip(shishu)
        .map(|(&p, &s)| {
            if p == 0.0 {
                Err(Error::Config(
                    "parent value is zero; reduction undefined".into(),
                ))
            } else {
                Ok(100.0 * (p - s) / p)
            }
        })
        .collect()
}

/// Latency comparison row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyRow {
    pub mode: BenchMode,
    pub length: usize,
    pub parent_ms: f64,
    pub shishu_ms: f64,
    pub pct_reduction: f64,
}

/// Memory comparison row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryRow {
    pub mode: BenchMode,
    pub length: usize,
    pub parent_bytes: usize,
    pub shishu_bytes: usize,
    pub parent_gb: f64,
    pub shishu_gb: f64,
    pub pct_reduction: f64,
}

/// Pairs parent and ShishuLM median latencies by length.
pub fn latency_rows(
    mode: BenchMode,
    parent: &[Timing],
    shishu: &[Timing],
) -> Result<Vec<LatencyRow>> {
    if parent
        .iter()
        .map(|t| t.length)
        .ne(shishu.iter().map(|t| t.length))
    {
        return Err(Error::Shape(
            "parent and shishu timings cover different lengths".into(),
        ));
    }
    let p: Vec<f64> = parent.iter().map(|t| t.median_ms).collect();
    let s: Vec<f64> = shishu.iter().map(|t| t.median_ms).collect();
    let pct = reduction_table(&p, &s)?;
    Ok((0..p.len())
        .map(|i| LatencyRow {
            mode,
            length: parent[i].length,
            parent_ms: p[i],
            shishu_ms: s[i],
            pct_reduction: pct[i],
        })
        .collect())
}

/// Analytic memory comparison at each length (batch as given).
pub fn memory_rows(
    mode: BenchMode,
    parent: &ModelConfig,
    shishu: &ModelConfig,
    batch: usize,
    lengths: &[usize],
    scores: ScoreStorage,
) -> Result<Vec<MemoryRow>> {
    lengths
        .iter()
        .map(|&t| {
            let p = memory_estimate(parent, batch, t, mode, scores).total();
            let s = memory_estimate(shishu, batch, t, mode, scores).total();
            let pct = reduction_table(&[p as f64], &[s as f64])?[0];
            Ok(MemoryRow {
                mode,
                length: t,
                parent_bytes: p,
                shishu_bytes: s,
                parent_gb: p as f64 / 1e9,
                shishu_gb: s as f64 / 1e9,
                pct_reduction: pct,
            })
        })
        .collect()
}
