use crate::error::Result;
use crate::tensor::ops::normal_init;
use crate::tensor::{Float, RngState, Tensor};

use super::config::ModelConfig;
use super::schedule::LayerKind;

/// Standard deviation of the normal initializer for projection and embedding
/// matrices. Norm scales start at one.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<F: Float> {
    /// `[d × d]`
    pub q_proj: Tensor<F>,
    /// `[d × kv_dim]`
    pub k_proj: Tensor<F>,
    /// `[d × kv_dim]`
    pub v_proj: Tensor<F>,
    /// `[d × d]`
    pub o_proj: Tensor<F>,
}

/// Gated MLP: `down(silu(h·gate) ⊙ h·up)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights<F: Float> {
    /// `[d × inter]`
    pub gate_proj: Tensor<F>,
    /// `[d × inter]`
    pub up_proj: Tensor<F>,
    /// `[inter × d]`
    pub down_proj: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights<F: Float> {
    pub input_norm: Tensor<F>,
    pub attn: AttentionWeights<F>,
    pub post_attn_norm: Tensor<F>,
    pub mlp: MlpWeights<F>,
}

/// Weights of one share group of attention-free blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ShishuWeights<F: Float> {
    pub norm: Tensor<F>,
    pub mlp: MlpWeights<F>,
}

/// All parameters of a model.
///
/// Decoder layers own their weights; MLP-only layers index into
/// `shishu_groups`, so every layer of a share group reads the same storage.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<F: Float = f32> {
    pub config: ModelConfig,
    /// `[V × d]`; also the output head when embeddings are tied.
    pub embedding: Tensor<F>,
    pub decoders: Vec<DecoderWeights<F>>,
    pub shishu_groups: Vec<ShishuWeights<F>>,
    pub final_norm: Tensor<F>,
    /// `[d × V]`, present only with untied embeddings.
    pub lm_head: Option<Tensor<F>>,
}

/// Borrowed weights of one layer slot.
#[derive(Clone, Copy, Debug)]
pub enum LayerView<'a, F: Float> {
    Decoder(&'a DecoderWeights<F>),
    Shishu(&'a ShishuWeights<F>),
}

impl<'a, F: Float> LayerView<'a, F> {
    pub fn mlp(self) -> &'a MlpWeights<F> {
        match self {
            LayerView::Decoder(w) => &w.mlp,
            LayerView::Shishu(w) => &w.mlp,
        }
    }
}

fn ones<F: Float>(d: usize) -> Tensor<F> {
    Tensor::full(&[d], F::one())
}

impl<F: Float> ModelWeights<F> {
    /// Deterministic initialization from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = RngState::new(seed);
        Self::with_init(config, |shape| normal_init(shape, 0.0, INIT_STD, &mut rng))
    }

    /// All-zero matrices with unit norm scales; storage for a checkpoint load.
    pub(crate) fn zeroed(config: &ModelConfig) -> Result<Self> {
        Self::with_init(config, Tensor::zeros)
    }

    /// Matrices are drawn from `init` in a fixed order: embedding, then per
    /// decoder q, k, v, o, gate, up, down, then per share group gate, up,
    /// down, then the untied head.
    fn with_init(
        config: &ModelConfig,
        mut init: impl FnMut(&[usize]) -> Tensor<F>,
    ) -> Result<Self> {
        config.validate()?;
        let (d, kv, v, i) = (
            config.hidden_size,
            config.kv_dim(),
            config.vocab_size,
            config.intermediate_size,
        );
        let mlp = |init: &mut dyn FnMut(&[usize]) -> Tensor<F>| MlpWeights {
            gate_proj: init(&[d, i]),
            up_proj: init(&[d, i]),
            down_proj: init(&[i, d]),
        };
        let embedding = init(&[v, d]);
        let decoders = (0..config.schedule.num_decoders())
            .map(|_| DecoderWeights {
                input_norm: ones(d),
                attn: AttentionWeights {
                    q_proj: init(&[d, d]),
                    k_proj: init(&[d, kv]),
                    v_proj: init(&[d, kv]),
                    o_proj: init(&[d, d]),
                },
                post_attn_norm: ones(d),
                mlp: mlp(&mut init),
            })
            .collect();
        let shishu_groups = (0..config.schedule.num_groups())
            .map(|_| ShishuWeights {
                norm: ones(d),
                mlp: mlp(&mut init),
            })
            .collect();
        let lm_head = (!config.tie_embeddings).then(|| init(&[d, v]));
        Ok(Self {
            config: config.clone(),
            embedding,
            decoders,
            shishu_groups,
            final_norm: ones(d),
            lm_head,
        })
    }

    /// Weights seen by layer slot `layer`.
    pub fn layer(&self, layer: usize) -> LayerView<'_, F> {
        match self.config.schedule.kind(layer) {
            LayerKind::Decoder => {
                let slot = self.config.schedule.kinds()[..layer]
                    .iter()
                    .filter(|k| k.is_decoder())
                    .count();
                LayerView::Decoder(&self.decoders[slot])
            }
            LayerKind::ShishuMlp { group } => LayerView::Shishu(&self.shishu_groups[group]),
        }
    }

    /// Every unique parameter exactly once, in a fixed order, with its name.
    pub fn params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = vec![("embed_tokens".to_string(), &self.embedding)];
        let slots = self.config.schedule.decoder_slots();
        for (layer, slot) in slots.iter().enumerate() {
            if let Some(j) = slot {
                let w = &self.decoders[*j];
                let p = format!("layers.{layer}");
                out.push((format!("{p}.input_layernorm"), &w.input_norm));
                out.push((format!("{p}.self_attn.q_proj"), &w.attn.q_proj));
                out.push((format!("{p}.self_attn.k_proj"), &w.attn.k_proj));
                out.push((format!("{p}.self_attn.v_proj"), &w.attn.v_proj));
                out.push((format!("{p}.self_attn.o_proj"), &w.attn.o_proj));
                out.push((format!("{p}.post_attention_layernorm"), &w.post_attn_norm));
                out.push((format!("{p}.mlp.gate_proj"), &w.mlp.gate_proj));
                out.push((format!("{p}.mlp.up_proj"), &w.mlp.up_proj));
                out.push((format!("{p}.mlp.down_proj"), &w.mlp.down_proj));
            }
        }
        for (g, w) in self.shishu_groups.iter().enumerate() {
            let p = format!("shishu_groups.{g}");
            out.push((format!("{p}.norm"), &w.norm));
            out.push((format!("{p}.mlp.gate_proj"), &w.mlp.gate_proj));
            out.push((format!("{p}.mlp.up_proj"), &w.mlp.up_proj));
            out.push((format!("{p}.mlp.down_proj"), &w.mlp.down_proj));
        }
        out.push(("norm".to_string(), &self.final_norm));
        if let Some(h) = &self.lm_head {
            out.push(("lm_head".to_string(), h));
        }
        out
    }

    /// Mutable counterpart of [`ModelWeights::params`], same order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = vec![&mut self.embedding];
        for w in &mut self.decoders {
            out.push(&mut w.input_norm);
            out.push(&mut w.attn.q_proj);
            out.push(&mut w.attn.k_proj);
            out.push(&mut w.attn.v_proj);
            out.push(&mut w.attn.o_proj);
            out.push(&mut w.post_attn_norm);
            out.push(&mut w.mlp.gate_proj);
            out.push(&mut w.mlp.up_proj);
            out.push(&mut w.mlp.down_proj);
        }
        for w in &mut self.shishu_groups {
            out.push(&mut w.norm);
            out.push(&mut w.mlp.gate_proj);
            out.push(&mut w.mlp.up_proj);
            out.push(&mut w.mlp.down_proj);
        }
        out.push(&mut self.final_norm);
        if let Some(h) = &mut self.lm_head {
            out.push(h);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Precision conversion of every parameter.
    pub fn cast<G: Float>(&self) -> ModelWeights<G> {
        let mlp = |m: &MlpWeights<F>| MlpWeights {
            gate_proj: m.gate_proj.cast(),
            up_proj: m.up_proj.cast(),
            down_proj: m.down_proj.cast(),
        };
        ModelWeights {
            config: self.config.clone(),
            embedding: self.embedding.cast(),
            decoders: self
                .decoders
                .iter()
                .map(|w| DecoderWeights {
                    input_norm: w.input_norm.cast(),
                    attn: AttentionWeights {
                        q_proj: w.attn.q_proj.cast(),
                        k_proj: w.attn.k_proj.cast(),
                        v_proj: w.attn.v_proj.cast(),
                        o_proj: w.attn.o_proj.cast(),
                    },
                    post_attn_norm: w.post_attn_norm.cast(),
                    mlp: mlp(&w.mlp),
                })
                .collect(),
            shishu_groups: self
                .shishu_groups
                .iter()
                .map(|w| ShishuWeights {
                    norm: w.norm.cast(),
                    mlp: mlp(&w.mlp),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
            lm_head: self.lm_head.as_ref().map(Tensor::cast),
        }
    }

    /// Copy in which every MLP-only layer owns a private copy of its group's
    /// weights (no sharing).
    pub fn unshared(&self) -> Self {
        let mut config = self.config.clone();
        config.schedule = self.config.schedule.unshared();
        let shishu_groups = self
            .config
            .schedule
            .kinds()
            .iter()
            .filter_map(|k| match k {
                LayerKind::ShishuMlp { group } => Some(self.shishu_groups[*group].clone()),
                LayerKind::Decoder => None,
            })
            .collect();
        Self {
            config,
            embedding: self.embedding.clone(),
            decoders: self.decoders.clone(),
            shishu_groups,
            final_norm: self.final_norm.clone(),
            lm_head: self.lm_head.clone(),
        }
    }
}

/// Deterministic initialization: projection and embedding matrices from
/// `N(0, 0.02²)`, norm scales at one.
pub fn build_model<F: Float>(config: &ModelConfig, seed: u64) -> Result<ModelWeights<F>> {
    ModelWeights::build(config, seed)
}
