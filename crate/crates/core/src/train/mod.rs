//! Pre-training loop: AdamW with linear warmup and cosine decay, gradient
//! accumulation over micro-batches, byte-level corpus blocks and validation
//! perplexity.

pub mod data;
pub mod optim;
pub mod schedule;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::tensor::ops::cross_entropy;
use crate::tensor::Float;

pub use data::{
    byte_tokens, detokenize, synthetic_corpus, Batch, BlockSampler, CorpusDataset, BYTE_VOCAB,
};
pub use optim::{clip_grad_norm, grad_norm, AdamW, OptimizerState};
pub use schedule::{lr_at, warmup_steps};

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub adam_eps: f64,
    pub total_steps: usize,
    /// Examples per optimizer step.
    pub batch_size: usize,
    /// Examples per forward/backward pass; `batch_size / micro_batch`
    /// passes are accumulated per step.
    pub micro_batch: usize,
    /// Tokens per example.
    pub block_size: usize,
    pub seed: u64,
    /// Validate every this many steps and after the last step; 0 disables
    /// periodic validation.
    pub eval_interval: usize,
    /// Blocks held out at the end of the corpus.
    pub val_blocks: usize,
    /// Maximum global gradient norm; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Save a checkpoint every this many steps (the caller decides where).
    pub checkpoint_interval: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 5e-3,
            warmup_ratio: 0.05,
            adam_eps: 1e-8,
            total_steps: 1000,
            batch_size: 32,
            micro_batch: 8,
            block_size: 256,
            seed: 0,
            eval_interval: 100,
            val_blocks: 16,
            grad_clip: None,
            checkpoint_interval: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.micro_batch == 0
            || self.batch_size == 0
            || !self.batch_size.is_multiple_of(self.micro_batch)
        {
            return fail(format!(
                "batch size {} must be a positive multiple of micro batch {}",
                self.batch_size, self.micro_batch
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return fail(format!("warmup ratio {} outside [0, 1)", self.warmup_ratio));
        }
        if self.total_steps == 0 || self.block_size == 0 {
            return fail("total steps and block size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {}", self.learning_rate));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return fail(format!("gradient clip {c} must be positive"));
            }
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn accumulation_steps(&self) -> usize {
        self.batch_size / self.micro_batch
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_at(
            step,
            self.learning_rate,
            self.warmup_ratio,
            self.total_steps,
        )
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }
}

/// Tokens consumed by one optimizer step.
pub fn tokens_per_step(batch_size: usize, block_size: usize) -> usize {
    batch_size * block_size
}

/// One optimizer step's record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_ppl: Option<f64>,
    pub tokens_seen: usize,
    pub wall_ms: Option<f64>,
}

/// Outcome of [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub first_train_loss: f64,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
    pub tokens_seen: usize,
}

/// Mean next-token loss over `examples`, evaluated `micro_batch` rows at a
/// time without touching gradients.
pub fn eval_loss<'a, F: Float>(
    model: &ModelWeights<F>,
    examples: impl IntoIterator<Item = &'a [u32]>,
    micro_batch: usize,
) -> Result<f64> {
    let examples: Vec<&[u32]> = examples.into_iter().collect();
    if examples.is_empty() {
        return Err(Error::Empty("no evaluation examples".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(micro_batch.max(1)) {
        let batch = Batch::from_examples(chunk.iter().copied());
        let logits = model.forward(&batch.inputs, batch.rows, None)?;
        let ce = cross_entropy(&logits, &batch.targets)?;
        total += ce.loss * ce.count as f64;
        count += ce.count;
    }
    Ok(total / count as f64)
}

/// `exp(mean token NLL)` over `examples`.
pub fn eval_perplexity<'a, F: Float>(
    model: &ModelWeights<F>,
    examples: impl IntoIterator<Item = &'a [u32]>,
    micro_batch: usize,
) -> Result<f64> {
    Ok(eval_loss(model, examples, micro_batch)?.exp())
}

/// Forward/backward over `batch` in micro-batches, accumulating gradients
/// scaled so the total equals the gradient of the full-batch mean loss.
/// Returns the mean loss. Gradients are not cleared first.
pub fn accumulate_gradients<F: Float>(
    model: &mut ModelWeights<F>,
    batch: &Batch,
    micro_batch: usize,
) -> Result<f64> {
    let passes = batch.rows / micro_batch;
    let scale = 1.0 / passes as f64;
    let mut loss = 0.0;
    for p in 0..passes {
        let mb = batch.slice_rows(p * micro_batch, micro_batch);
        loss += model.loss_and_backward(&mb.inputs, &mb.targets, mb.rows, scale)? * scale;
    }
    Ok(loss)
}

/// Runs `cfg.total_steps` optimizer steps on `data`, calling `on_step` after
/// each one.
pub fn train<F: Float>(
    model: &mut ModelWeights<F>,
    data: &CorpusDataset,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepMetrics, &ModelWeights<F>) -> Result<()>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if data.block_size() != cfg.block_size {
        return Err(Error::Config(format!(
            "dataset blocks hold {} tokens, config expects {}",
            data.block_size(),
            cfg.block_size
        )));
    }
    if cfg.block_size > model.config.max_seq_len {
        return Err(Error::Config(format!(
            "block size {} exceeds max_seq_len {}",
            cfg.block_size, model.config.max_seq_len
        )));
    }
    if data.num_train_blocks() < cfg.batch_size {
        return Err(Error::Empty(format!(
            "{} training blocks cannot fill one step of {} examples",
            data.num_train_blocks(),
            cfg.batch_size
        )));
    }
    let opt = cfg.optimizer();
    let mut state = OptimizerState::new(model.params().into_iter().map(|(_, t)| t));
    let mut sampler = data.sampler(cfg.seed);
    let per_step = tokens_per_step(cfg.batch_size, cfg.block_size);
    let mut first_loss = None;
    let mut last = None;
    let start = Instant::now();
    for step in 0..cfg.total_steps {
        let lr = cfg.lr_at(step);
        let batch = sampler.next_batch(data, cfg.batch_size);
        model.zero_grad();
        let loss =
            accumulate_gradients(model, &batch, cfg.micro_batch).map_err(|e| Error::Training {
                step: step + 1,
                reason: e.to_string(),
            })?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step: step + 1,
                reason: format!("loss is {loss}"),
            });
        }
        let mut params = model.params_mut();
        if let Some(clip) = cfg.grad_clip {
            clip_grad_norm(&mut params, clip);
        }
        opt.step(&mut params, &mut state, lr)
            .map_err(|e| Error::Training {
                step: step + 1,
                reason: e.to_string(),
            })?;
        let done = step + 1;
        let is_eval = data.num_val_blocks() > 0
            && (done == cfg.total_steps
                || (cfg.eval_interval > 0 && done % cfg.eval_interval == 0));
        let val_loss = if is_eval {
            Some(eval_loss(model, data.val_examples(), cfg.micro_batch)?)
        } else {
            None
        };
        let metrics = StepMetrics {
            step: done,
            lr,
            train_loss: loss,
            val_loss,
            val_ppl: val_loss.map(f64::exp),
            tokens_seen: done * per_step,
            wall_ms: Some(start.elapsed().as_secs_f64() * 1e3),
        };
        first_loss.get_or_insert(loss);
        on_step(&metrics, model)?;
        last = Some(metrics);
    }
    let last = last.expect("at least one step");
    let final_val_loss = last.val_loss;
    Ok(TrainSummary {
        steps: cfg.total_steps,
        first_train_loss: first_loss.expect("at least one step"),
        final_train_loss: last.train_loss,
        final_val_loss,
        tokens_seen: last.tokens_seen,
    })
}
