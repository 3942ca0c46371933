use crate::error::{Error, Result};
use crate::tensor::Float;

use super::config::ModelConfig;

/// Keys and values of one attention layer, one buffer per
/// `(batch row, kv head)`, each holding `len × head_dim` values.
#[derive(Clone, Debug)]
pub(crate) struct LayerKv<F> {
    pub keys: Vec<Vec<F>>,
    pub values: Vec<Vec<F>>,
}

/// Key/value history for incremental decoding.
///
/// Only decoder layers hold entries; MLP-only layers have nothing to cache.
#[derive(Clone, Debug)]
pub struct KvCache<F: Float = f32> {
    pub(crate) layers: Vec<LayerKv<F>>,
    batch: usize,
    num_kv_heads: usize,
    head_dim: usize,
    capacity: usize,
    len: usize,
}

impl<F: Float> KvCache<F> {
    pub fn new(config: &ModelConfig, batch: usize) -> Self {
        let streams = batch * config.num_kv_heads;
        let layers = (0..config.schedule.num_decoders())
            .map(|_| LayerKv {
                keys: vec![Vec::new(); streams],
                values: vec![Vec::new(); streams],
            })
            .collect();
        Self {
            layers,
            batch,
            num_kv_heads: config.num_kv_heads,
            head_dim: config.head_dim(),
            capacity: config.max_seq_len,
            len: 0,
        }
    }

    /// Positions processed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of attention layers with cached state.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Elements currently stored across all layers (keys and values).
    pub fn stored_elements(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.keys.iter().chain(&l.values).map(Vec::len).sum::<usize>())
            .sum()
    }

    /// Bytes of cached keys and values:
    /// `Σ_layers 2 · batch · kv_heads · len · head_dim · sizeof(F)`.
    pub fn bytes(&self) -> usize {
        self.layers.len()
            * 2
            * self.batch
            * self.num_kv_heads
            * self.len
            * self.head_dim
            * F::DTYPE.size_of()
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.keys
                .iter_mut()
                .chain(l.values.iter_mut())
                .for_each(Vec::clear);
        }
        self.len = 0;
    }

    pub(crate) fn check_room(&self, extra: usize) -> Result<()> {
        if self.len + extra > self.capacity {
            return Err(Error::CacheOverflow {
                requested: self.len + extra,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    pub(crate) fn advance(&mut self, steps: usize) {
        self.len += steps;
    }
}
