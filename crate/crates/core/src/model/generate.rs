//! Autoregressive decoding.

use crate::error::{Error, Result};
use crate::tensor::{Float, RngState};

use super::cache::KvCache;
use super::weights::ModelWeights;

/// Token selection rule. `temperature == 0` is greedy argmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampling {
    pub temperature: f64,
    /// Restrict sampling to the `k` most likely tokens.
    pub top_k: Option<usize>,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self::greedy()
    }
}

impl Sampling {
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            top_k: None,
            seed: 0,
        }
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0 || self.top_k == Some(1)
    }

    fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature {} must be finite and >= 0",
                self.temperature
            )));
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<F: Float>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn pick<F: Float>(row: &[F], sampling: &Sampling, rng: &mut RngState) -> u32 {
    if sampling.is_greedy() {
        return argmax(row) as u32;
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let keep = sampling.top_k.unwrap_or(row.len()).min(row.len());
    let order = &order[..keep];
    let top = row[order[0]].as_f64();
    let weights: Vec<f64> = order
        .iter()
        .map(|&i| ((row[i].as_f64() - top) / sampling.temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform() * total;
    for (&i, &w) in order.iter().zip(&weights) {
        if u < w {
            return i as u32;
        }
        u -= w;
    }
    order[keep - 1] as u32
}

/// Prefills `prompt` and produces `n` new tokens.
pub fn generate<F: Float>(
    model: &ModelWeights<F>,
    prompt: &[u32],
    n: usize,
    sampling: &Sampling,
) -> Result<Vec<u32>> {
    sampling.validate()?;
    if prompt.is_empty() {
        return Err(Error::Empty(
            "generation needs at least one prompt token".into(),
        ));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let v = model.config.vocab_size;
    let mut rng = RngState::new(sampling.seed);
    let mut cache = KvCache::new(&model.config, 1);
    let logits = model.forward(prompt, 1, Some(&mut cache))?;
    let last = &logits.data()[(prompt.len() - 1) * v..];
    let mut out = vec![pick(last, sampling, &mut rng)];
    while out.len() < n {
        let prev = *out.last().expect("non-empty");
        let logits = model.decode_step(&[prev], &mut cache)?;
        out.push(pick(logits.data(), sampling, &mut rng));
    }
    Ok(out)
}
