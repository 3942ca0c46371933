//! Forward and reverse passes of the full model.
//!
//! Activations are kept as flat row-major `[batch·seq × width]` buffers. The
//! training path records a [`ForwardTrace`] which [`ModelWeights::backward`]
//! consumes; the inference path optionally reads and extends a [`KvCache`].

use crate::error::{shape_err, Error, Result};
use crate::tensor::ops::{
    cross_entropy, rmsnorm_rows, rmsnorm_rows_backward, rope_frequencies, rope_vector,
    silu_grad_scalar, silu_scalar, softmax_backward_in_place, softmax_in_place,
};
use crate::tensor::{gemm, Float, MatView, Tensor};

use super::cache::{KvCache, LayerKv};
use super::config::ModelConfig;
use super::schedule::LayerKind;
use super::weights::{AttentionWeights, DecoderWeights, MlpWeights, ModelWeights, ShishuWeights};

/// Receives, for every decoder layer, the block input `x`, the output `z` of
/// input-norm + self-attention (before the residual add) and `y = x + z`.
/// Each slice holds `rows × hidden_size` values.
pub trait AttentionObserver<F: Float> {
    fn observe(&mut self, layer: usize, x: &[F], z: &[F], y: &[F]);
}

#[derive(Clone, Debug)]
struct AttnTrace<F> {
    /// `[N × d]`, after rotary embedding
    q: Vec<F>,
    /// `[N × kv_dim]`, after rotary embedding
    k: Vec<F>,
    v: Vec<F>,
    /// `[batch × heads × seq × seq]`
    probs: Vec<F>,
    /// `[N × d]`, input of the output projection
    ctx: Vec<F>,
}

#[derive(Clone, Debug)]
struct MlpTrace<F> {
    h: Vec<F>,
    gate: Vec<F>,
    up: Vec<F>,
    act: Vec<F>,
}

#[derive(Clone, Debug)]
struct DecoderTrace<F> {
    x: Vec<F>,
    inv1: Vec<F>,
    h1: Vec<F>,
    attn: AttnTrace<F>,
    y: Vec<F>,
    inv2: Vec<F>,
    mlp: MlpTrace<F>,
}

#[derive(Clone, Debug)]
struct ShishuTrace<F> {
    x: Vec<F>,
    inv: Vec<F>,
    mlp: MlpTrace<F>,
}

#[derive(Clone, Debug)]
enum LayerTrace<F> {
    Decoder(DecoderTrace<F>),
    Shishu(ShishuTrace<F>),
}

/// Activations recorded by [`ModelWeights::forward_train`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<F: Float> {
    tokens: Vec<u32>,
    batch: usize,
    seq: usize,
    layers: Vec<LayerTrace<F>>,
    x_final: Vec<F>,
    inv_final: Vec<F>,
    h_final: Vec<F>,
}

impl<F: Float> ForwardTrace<F> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq(&self) -> usize {
        self.seq
    }
}

struct Shape {
    batch: usize,
    seq: usize,
    /// Absolute position of the first row of each sequence.
    start: usize,
}

impl Shape {
    fn rows(&self) -> usize {
        self.batch * self.seq
    }
}

fn linear<F: Float>(x: &[F], rows: usize, w: &Tensor<F>) -> Vec<F> {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![F::zero(); rows * n_out];
    gemm(
        F::one(),
        MatView::new(x, rows, n_in),
        MatView::new(w.data(), n_in, n_out),
        F::zero(),
        &mut out,
        n_out,
    );
    out
}

/// Accumulates `xᵀ·dy` into the weight gradient and `dy·wᵀ` into `dx`.
fn linear_backward<F: Float>(x: &[F], rows: usize, w: &mut Tensor<F>, dy: &[F], dx: &mut [F]) {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    let (wd, wg) = w.data_and_grad_mut();
    gemm(
        F::one(),
        MatView::new(x, rows, n_in).t(),
        MatView::new(dy, rows, n_out),
        F::one(),
        wg,
        n_out,
    );
    gemm(
        F::one(),
        MatView::new(dy, rows, n_out),
        MatView::new(&*wd, n_in, n_out).t(),
        F::one(),
        dx,
        n_in,
    );
}

fn add_into<F: Float>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
}

fn rmsnorm_fwd<F: Float>(x: &[F], w: &Tensor<F>, eps: f64) -> (Vec<F>, Vec<F>) {
    let d = w.numel();
    let mut out = vec![F::zero(); x.len()];
    let mut inv = vec![F::zero(); x.len() / d];
    rmsnorm_rows(x, w.data(), eps, &mut out, &mut inv);
    (out, inv)
}

fn rmsnorm_bwd<F: Float>(x: &[F], w: &mut Tensor<F>, inv: &[F], dy: &[F], dx: &mut [F]) {
    let (wd, wg) = w.data_and_grad_mut();
    rmsnorm_rows_backward(x, wd, inv, dy, dx, wg);
}

fn mlp_forward<F: Float>(
    w: &MlpWeights<F>,
    h: Vec<F>,
    rows: usize,
    trace: bool,
) -> (Vec<F>, Option<MlpTrace<F>>) {
    let gate = linear(&h, rows, &w.gate_proj);
    let up = linear(&h, rows, &w.up_proj);
    let act: Vec<F> = gate
        .iter()
        .zip(&up)
        .map(|(&g, &u)| silu_scalar(g) * u)
        .collect();
    let out = linear(&act, rows, &w.down_proj);
    let t = trace.then_some(MlpTrace { h, gate, up, act });
    (out, t)
}

/// Returns the gradient with respect to the MLP input `h`.
fn mlp_backward<F: Float>(
    w: &mut MlpWeights<F>,
    t: &MlpTrace<F>,
    dout: &[F],
    rows: usize,
) -> Vec<F> {
    let mut dact = vec![F::zero(); t.act.len()];
    linear_backward(&t.act, rows, &mut w.down_proj, dout, &mut dact);
    let mut dgate = vec![F::zero(); t.gate.len()];
    let mut dup = vec![F::zero(); t.up.len()];
    for i in 0..dact.len() {
        let g = t.gate[i];
        dup[i] = dact[i] * silu_scalar(g);
        dgate[i] = dact[i] * t.up[i] * silu_grad_scalar(g);
    }
    let mut dh = vec![F::zero(); t.h.len()];
    linear_backward(&t.h, rows, &mut w.gate_proj, &dgate, &mut dh);
    linear_backward(&t.h, rows, &mut w.up_proj, &dup, &mut dh);
    dh
}

struct AttnIo<'a> {
    cfg: &'a ModelConfig,
    freqs: &'a [f64],
}

impl AttnIo<'_> {
    /// Causal grouped-query attention over the normalized input `h`.
    fn forward<F: Float>(
        &self,
        w: &AttentionWeights<F>,
        h: &[F],
        shape: &Shape,
        mut kv: Option<&mut LayerKv<F>>,
        trace: bool,
    ) -> (Vec<F>, Option<AttnTrace<F>>) {
        let cfg = self.cfg;
        let (d, hd, kvd) = (cfg.hidden_size, cfg.head_dim(), cfg.kv_dim());
        let (heads, kv_heads, group) = (
            cfg.num_attention_heads,
            cfg.num_kv_heads,
            cfg.kv_group_size(),
        );
        let (batch, seq, start) = (shape.batch, shape.seq, shape.start);
        let rows = shape.rows();
        let scale = F::from_f64_lossy(1.0 / (hd as f64).sqrt());

        let mut q = linear(h, rows, &w.q_proj);
        let mut k = linear(h, rows, &w.k_proj);
        let v = linear(h, rows, &w.v_proj);
        for r in 0..rows {
            let pos = start + r % seq;
            for hh in 0..heads {
                rope_vector(
                    &mut q[r * d + hh * hd..r * d + (hh + 1) * hd],
                    pos,
                    self.freqs,
                    false,
                );
            }
            for g in 0..kv_heads {
                rope_vector(
                    &mut k[r * kvd + g * hd..r * kvd + (g + 1) * hd],
                    pos,
                    self.freqs,
                    false,
                );
            }
        }
        if let Some(cache) = kv.as_deref_mut() {
            for b in 0..batch {
                for g in 0..kv_heads {
                    let s = b * kv_heads + g;
                    for t in 0..seq {
                        let off = (b * seq + t) * kvd + g * hd;
                        cache.keys[s].extend_from_slice(&k[off..off + hd]);
                        cache.values[s].extend_from_slice(&v[off..off + hd]);
                    }
                }
            }
        }
        let total = start + seq;
        let mut ctx = vec![F::zero(); rows * d];
        let mut probs = if trace {
            vec![F::zero(); batch * heads * seq * total]
        } else {
            Vec::new()
        };
        let mut scores = vec![F::zero(); seq * total];
        for b in 0..batch {
            for hh in 0..heads {
                let g = hh / group;
                let (keys, values) = match kv.as_deref() {
                    Some(cache) => {
                        let s = b * kv_heads + g;
                        (
                            MatView::new(&cache.keys[s][..], total, hd),
                            MatView::new(&cache.values[s][..], total, hd),
                        )
                    }
                    None => {
                        let off = b * seq * kvd + g * hd;
                        (
                            MatView::strided(&k[off..], seq, hd, kvd),
                            MatView::strided(&v[off..], seq, hd, kvd),
                        )
                    }
                };
                let q_off = b * seq * d + hh * hd;
                gemm(
                    scale,
                    MatView::strided(&q[q_off..], seq, hd, d),
                    keys.t(),
                    F::zero(),
                    &mut scores,
                    total,
                );
                for t in 0..seq {
                    let row = &mut scores[t * total..(t + 1) * total];
                    let visible = start + t + 1;
                    softmax_in_place(&mut row[..visible]);
                    row[visible..].iter_mut().for_each(|p| *p = F::zero());
                }
                gemm(
                    F::one(),
                    MatView::new(&scores, seq, total),
                    values,
                    F::zero(),
                    &mut ctx[q_off..],
                    d,
                );
                if trace {
                    let p_off = (b * heads + hh) * seq * total;
                    probs[p_off..p_off + seq * total].copy_from_slice(&scores);
                }
            }
        }
        let out = linear(&ctx, rows, &w.o_proj);
        let t = trace.then_some(AttnTrace {
            q,
            k,
            v,
            probs,
            ctx,
        });
        (out, t)
    }

    /// Reverse pass for a cache-free forward starting at position 0. Adds the
    /// gradient with respect to `h` into `dh`.
    fn backward<F: Float>(
        &self,
        w: &mut AttentionWeights<F>,
        h: &[F],
        t: &AttnTrace<F>,
        dout: &[F],
        shape: &Shape,
        dh: &mut [F],
    ) {
        let cfg = self.cfg;
        let (d, hd, kvd) = (cfg.hidden_size, cfg.head_dim(), cfg.kv_dim());
        let (heads, kv_heads, group) = (
            cfg.num_attention_heads,
            cfg.num_kv_heads,
            cfg.kv_group_size(),
        );
        let (batch, seq) = (shape.batch, shape.seq);
        let rows = shape.rows();
        let scale = F::from_f64_lossy(1.0 / (hd as f64).sqrt());

        let mut dctx = vec![F::zero(); rows * d];
        linear_backward(&t.ctx, rows, &mut w.o_proj, dout, &mut dctx);

        let mut dq = vec![F::zero(); rows * d];
        let mut dk = vec![F::zero(); rows * kvd];
        let mut dv = vec![F::zero(); rows * kvd];
        let mut ds = vec![F::zero(); seq * seq];
        for b in 0..batch {
            for hh in 0..heads {
                let g = hh / group;
                let q_off = b * seq * d + hh * hd;
                let kv_off = b * seq * kvd + g * hd;
                let p_off = (b * heads + hh) * seq * seq;
                let p = &t.probs[p_off..p_off + seq * seq];
                let dctx_v = MatView::strided(&dctx[q_off..], seq, hd, d);
                gemm(
                    F::one(),
                    dctx_v,
                    MatView::strided(&t.v[kv_off..], seq, hd, kvd).t(),
                    F::zero(),
                    &mut ds,
                    seq,
                );
                gemm(
                    F::one(),
                    MatView::new(p, seq, seq).t(),
                    dctx_v,
                    F::one(),
                    &mut dv[kv_off..],
                    kvd,
                );
                for r in 0..seq {
                    softmax_backward_in_place(
                        &p[r * seq..(r + 1) * seq],
                        &mut ds[r * seq..(r + 1) * seq],
                    );
                }
                gemm(
                    scale,
                    MatView::new(&ds, seq, seq),
                    MatView::strided(&t.k[kv_off..], seq, hd, kvd),
                    F::one(),
                    &mut dq[q_off..],
                    d,
                );
                gemm(
                    scale,
                    MatView::new(&ds, seq, seq).t(),
                    MatView::strided(&t.q[q_off..], seq, hd, d),
                    F::one(),
                    &mut dk[kv_off..],
                    kvd,
                );
            }
        }
        for r in 0..rows {
            let pos = r % seq;
            for hh in 0..heads {
                rope_vector(
                    &mut dq[r * d + hh * hd..r * d + (hh + 1) * hd],
                    pos,
                    self.freqs,
                    true,
                );
            }
            for g in 0..kv_heads {
                rope_vector(
                    &mut dk[r * kvd + g * hd..r * kvd + (g + 1) * hd],
                    pos,
                    self.freqs,
                    true,
                );
            }
        }
        linear_backward(h, rows, &mut w.q_proj, &dq, dh);
        linear_backward(h, rows, &mut w.k_proj, &dk, dh);
        linear_backward(h, rows, &mut w.v_proj, &dv, dh);
    }
}

fn decoder_forward<F: Float>(
    io: &AttnIo<'_>,
    w: &DecoderWeights<F>,
    x: Vec<F>,
    shape: &Shape,
    kv: Option<&mut LayerKv<F>>,
    observer: Option<(usize, &mut dyn AttentionObserver<F>)>,
    trace: bool,
) -> (Vec<F>, Option<DecoderTrace<F>>) {
    let eps = io.cfg.rms_norm_eps;
    let rows = shape.rows();
    let (h1, inv1) = rmsnorm_fwd(&x, &w.input_norm, eps);
    let (z, attn) = io.forward(&w.attn, &h1, shape, kv, trace);
    let mut y = x.clone();
    add_into(&mut y, &z);
    if let Some((layer, obs)) = observer {
        obs.observe(layer, &x, &z, &y);
    }
    let (h2, inv2) = rmsnorm_fwd(&y, &w.post_attn_norm, eps);
    let (m, mlp) = mlp_forward(&w.mlp, h2, rows, trace);
    let mut out = y.clone();
    add_into(&mut out, &m);
    let t = trace.then(|| DecoderTrace {
        x,
        inv1,
        h1,
        attn: attn.expect("traced"),
        y,
        inv2,
        mlp: mlp.expect("traced"),
    });
    (out, t)
}

fn decoder_backward<F: Float>(
    io: &AttnIo<'_>,
    w: &mut DecoderWeights<F>,
    t: &DecoderTrace<F>,
    dout: Vec<F>,
    shape: &Shape,
) -> Vec<F> {
    let rows = shape.rows();
    let dh2 = mlp_backward(&mut w.mlp, &t.mlp, &dout, rows);
    let mut dy = dout;
    rmsnorm_bwd(&t.y, &mut w.post_attn_norm, &t.inv2, &dh2, &mut dy);
    let mut dh1 = vec![F::zero(); t.h1.len()];
    io.backward(&mut w.attn, &t.h1, &t.attn, &dy, shape, &mut dh1);
    let mut dx = dy;
    rmsnorm_bwd(&t.x, &mut w.input_norm, &t.inv1, &dh1, &mut dx);
    dx
}

fn shishu_forward<F: Float>(
    cfg: &ModelConfig,
    w: &ShishuWeights<F>,
    x: Vec<F>,
    rows: usize,
    trace: bool,
) -> (Vec<F>, Option<ShishuTrace<F>>) {
    let (h, inv) = rmsnorm_fwd(&x, &w.norm, cfg.rms_norm_eps);
    let (m, mlp) = mlp_forward(&w.mlp, h, rows, trace);
    let mut out = x.clone();
    add_into(&mut out, &m);
    let t = trace.then(|| ShishuTrace {
        x,
        inv,
        mlp: mlp.expect("traced"),
    });
    (out, t)
}

fn shishu_backward<F: Float>(
    w: &mut ShishuWeights<F>,
    t: &ShishuTrace<F>,
    dout: Vec<F>,
    rows: usize,
) -> Vec<F> {
    let dh = mlp_backward(&mut w.mlp, &t.mlp, &dout, rows);
    let mut dx = dout;
    rmsnorm_bwd(&t.x, &mut w.norm, &t.inv, &dh, &mut dx);
    dx
}

/// Output of one decoder block on `x[rows × d]` (no cache, positions from 0):
/// `y = x + attn(norm(x))`, `out = y + mlp(norm(y))`.
pub fn decoder_block_forward<F: Float>(
    cfg: &ModelConfig,
    w: &DecoderWeights<F>,
    x: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (batch, seq) = block_dims(cfg, x)?;
    let freqs = rope_frequencies(cfg.head_dim(), cfg.rope_theta);
    let io = AttnIo { cfg, freqs: &freqs };
    let shape = Shape {
        batch,
        seq,
        start: 0,
    };
    let (out, _) = decoder_forward(&io, w, x.data().to_vec(), &shape, None, None, false);
    Tensor::from_vec(x.shape(), out)
}

/// Output of one MLP-only block: `x + mlp(norm(x))`.
pub fn shishu_mlp_block_forward<F: Float>(
    cfg: &ModelConfig,
    w: &ShishuWeights<F>,
    x: &Tensor<F>,
) -> Result<Tensor<F>> {
    if x.last_dim() != cfg.hidden_size {
        return shape_err(format!(
            "block input width {} != {}",
            x.last_dim(),
            cfg.hidden_size
        ));
    }
    let rows = x.numel() / cfg.hidden_size;
    let (out, _) = shishu_forward(cfg, w, x.data().to_vec(), rows, false);
    Tensor::from_vec(x.shape(), out)
}

/// Causal self-attention sub-block alone on `x[B×T×d]` (no input norm).
pub fn attention_forward<F: Float>(
    cfg: &ModelConfig,
    w: &AttentionWeights<F>,
    x: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (batch, seq) = block_dims(cfg, x)?;
    let freqs = rope_frequencies(cfg.head_dim(), cfg.rope_theta);
    let io = AttnIo { cfg, freqs: &freqs };
    let (out, _) = io.forward(
        w,
        x.data(),
        &Shape {
            batch,
            seq,
            start: 0,
        },
        None,
        false,
    );
    Tensor::from_vec(x.shape(), out)
}

fn block_dims<F: Float>(cfg: &ModelConfig, x: &Tensor<F>) -> Result<(usize, usize)> {
    match x.shape() {
        [b, t, d] if *d == cfg.hidden_size => Ok((*b, *t)),
        s => shape_err(format!("expected [B×T×{}], got {s:?}", cfg.hidden_size)),
    }
}

impl<F: Float> ModelWeights<F> {
    fn check_tokens(&self, tokens: &[u32], batch: usize) -> Result<usize> {
        if batch == 0 || tokens.is_empty() || !tokens.len().is_multiple_of(batch) {
            return shape_err(format!(
                "{} tokens cannot form {batch} equal rows",
                tokens.len()
            ));
        }
        let v = self.config.vocab_size;
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= v) {
            return Err(Error::OutOfRange {
                what: "token id",
                value: bad as usize,
                limit: v,
            });
        }
        Ok(tokens.len() / batch)
    }

    fn embed(&self, tokens: &[u32]) -> Vec<F> {
        let d = self.config.hidden_size;
        let mut x = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            let t = t as usize;
            x.extend_from_slice(&self.embedding.data()[t * d..(t + 1) * d]);
        }
        x
    }

    fn head(&self, h: &[F], rows: usize) -> Vec<F> {
        let (d, v) = (self.config.hidden_size, self.config.vocab_size);
        match &self.lm_head {
            Some(w) => linear(h, rows, w),
            None => {
                let mut logits = vec![F::zero(); rows * v];
                gemm(
                    F::one(),
                    MatView::new(h, rows, d),
                    MatView::new(self.embedding.data(), v, d).t(),
                    F::zero(),
                    &mut logits,
                    v,
                );
                logits
            }
        }
    }

    fn run(
        &self,
        tokens: &[u32],
        batch: usize,
        mut cache: Option<&mut KvCache<F>>,
        mut observer: Option<&mut dyn AttentionObserver<F>>,
        trace: bool,
    ) -> Result<(Vec<F>, Option<ForwardTrace<F>>)> {
        let seq = self.check_tokens(tokens, batch)?;
        let cfg = &self.config;
        let start = match cache.as_deref() {
            Some(c) => {
                if c.batch() != batch {
                    return shape_err(format!("cache holds {} rows, input has {batch}", c.batch()));
                }
                if c.num_layers() != cfg.schedule.num_decoders() {
                    return shape_err("cache was built for a different layer schedule");
                }
                c.check_room(seq)?;
                c.len()
            }
            None => {
                if seq > cfg.max_seq_len {
                    return Err(Error::CacheOverflow {
                        requested: seq,
                        capacity: cfg.max_seq_len,
                    });
                }
                0
            }
        };
        let shape = Shape { batch, seq, start };
        let rows = shape.rows();
        let freqs = rope_frequencies(cfg.head_dim(), cfg.rope_theta);
        let io = AttnIo { cfg, freqs: &freqs };

        let mut x = self.embed(tokens);
        let mut traces = Vec::new();
        let mut dec_slot = 0;
        for (layer, kind) in cfg.schedule.kinds().iter().enumerate() {
            match *kind {
                LayerKind::Decoder => {
                    let kv = cache.as_deref_mut().map(|c| &mut c.layers[dec_slot]);
                    let obs = observer
                        .as_deref_mut()
                        .map(|o| (layer, o as &mut dyn AttentionObserver<F>));
                    let (out, t) =
                        decoder_forward(&io, &self.decoders[dec_slot], x, &shape, kv, obs, trace);
                    x = out;
                    if let Some(t) = t {
                        traces.push(LayerTrace::Decoder(t));
                    }
                    dec_slot += 1;
                }
                LayerKind::ShishuMlp { group } => {
                    let (out, t) = shishu_forward(cfg, &self.shishu_groups[group], x, rows, trace);
                    x = out;
                    if let Some(t) = t {
                        traces.push(LayerTrace::Shishu(t));
                    }
                }
            }
        }
        if let Some(c) = cache {
            c.advance(seq);
        }
        let (h, inv) = rmsnorm_fwd(&x, &self.final_norm, cfg.rms_norm_eps);
        let logits = self.head(&h, rows);
        let t = trace.then(|| ForwardTrace {
            tokens: tokens.to_vec(),
            batch,
            seq,
            layers: traces,
            x_final: x,
            inv_final: inv,
            h_final: h,
        });
        Ok((logits, t))
    }

    /// Logits `[B×T×V]` for `tokens` laid out as `batch` rows. With a cache,
    /// positions continue from the cached length and new keys/values are
    /// appended.
    pub fn forward(
        &self,
        tokens: &[u32],
        batch: usize,
        cache: Option<&mut KvCache<F>>,
    ) -> Result<Tensor<F>> {
        let (logits, _) = self.run(tokens, batch, cache, None, false)?;
        let seq = tokens.len() / batch;
        Tensor::from_vec(&[batch, seq, self.config.vocab_size], logits)
    }

    /// [`ModelWeights::forward`] that also reports every decoder layer's
    /// attention input/output to `observer`.
    pub fn forward_observed(
        &self,
        tokens: &[u32],
        batch: usize,
        cache: Option<&mut KvCache<F>>,
        observer: &mut dyn AttentionObserver<F>,
    ) -> Result<Tensor<F>> {
        let (logits, _) = self.run(tokens, batch, cache, Some(observer), false)?;
        let seq = tokens.len() / batch;
        Tensor::from_vec(&[batch, seq, self.config.vocab_size], logits)
    }

    /// One token per batch row against a prefilled cache; logits `[B×V]`.
    pub fn decode_step(&self, tokens: &[u32], cache: &mut KvCache<F>) -> Result<Tensor<F>> {
        if cache.is_empty() {
            return Err(Error::Empty(
                "decode_step needs a cache filled by a prefill pass".into(),
            ));
        }
        let batch = cache.batch();
        if tokens.len() != batch {
            return shape_err(format!(
                "decode_step expects {batch} tokens, got {}",
                tokens.len()
            ));
        }
        let (logits, _) = self.run(tokens, batch, Some(cache), None, false)?;
        Tensor::from_vec(&[batch, self.config.vocab_size], logits)
    }

    /// Cache-free forward that records what the reverse pass needs.
    pub fn forward_train(
        &self,
        tokens: &[u32],
        batch: usize,
    ) -> Result<(Tensor<F>, ForwardTrace<F>)> {
        let (logits, trace) = self.run(tokens, batch, None, None, true)?;
        let seq = tokens.len() / batch;
        let logits = Tensor::from_vec(&[batch, seq, self.config.vocab_size], logits)?;
        Ok((logits, trace.expect("traced")))
    }

    /// Accumulates parameter gradients for upstream logits gradient `dlogits`.
    pub fn backward(&mut self, trace: &ForwardTrace<F>, dlogits: &Tensor<F>) -> Result<()> {
        let shape = Shape {
            batch: trace.batch,
            seq: trace.seq,
            start: 0,
        };
        let rows = shape.rows();
        let (d, v) = (self.config.hidden_size, self.config.vocab_size);
        if dlogits.numel() != rows * v {
            return shape_err("dlogits does not match the traced batch");
        }
        let dl = dlogits.data();
        let mut dh = vec![F::zero(); rows * d];
        match &mut self.lm_head {
            Some(w) => linear_backward(&trace.h_final, rows, w, dl, &mut dh),
            None => {
                let (ed, eg) = self.embedding.data_and_grad_mut();
                gemm(
                    F::one(),
                    MatView::new(dl, rows, v).t(),
                    MatView::new(&trace.h_final, rows, d),
                    F::one(),
                    eg,
                    d,
                );
                gemm(
                    F::one(),
                    MatView::new(dl, rows, v),
                    MatView::new(&*ed, v, d),
                    F::zero(),
                    &mut dh,
                    d,
                );
            }
        }
        let mut dx = vec![F::zero(); rows * d];
        rmsnorm_bwd(
            &trace.x_final,
            &mut self.final_norm,
            &trace.inv_final,
            &dh,
            &mut dx,
        );

        let freqs = rope_frequencies(self.config.head_dim(), self.config.rope_theta);
        let cfg = self.config.clone();
        let io = AttnIo {
            cfg: &cfg,
            freqs: &freqs,
        };
        let mut dec_slot = self.decoders.len();
        for (kind, t) in cfg.schedule.kinds().iter().zip(&trace.layers).rev() {
            dx = match (*kind, t) {
                (LayerKind::Decoder, LayerTrace::Decoder(t)) => {
                    dec_slot -= 1;
                    decoder_backward(&io, &mut self.decoders[dec_slot], t, dx, &shape)
                }
                (LayerKind::ShishuMlp { group }, LayerTrace::Shishu(t)) => {
                    shishu_backward(&mut self.shishu_groups[group], t, dx, rows)
                }
                _ => return shape_err("trace does not match the layer schedule"),
            };
        }
        let eg = self.embedding.grad_mut();
        for (r, &tok) in trace.tokens.iter().enumerate() {
            let t = tok as usize;
            add_into(&mut eg[t * d..(t + 1) * d], &dx[r * d..(r + 1) * d]);
        }
        Ok(())
    }

    /// Mean next-token loss of `inputs → targets` without touching gradients.
    pub fn loss(&self, inputs: &[u32], targets: &[u32], batch: usize) -> Result<f64> {
        let logits = self.forward(inputs, batch, None)?;
        Ok(cross_entropy(&logits, targets)?.loss)
    }

    /// Forward, loss and reverse pass in one call; gradients are scaled by
    /// `grad_scale` and added to each parameter's gradient buffer.
    pub fn loss_and_backward(
        &mut self,
        inputs: &[u32],
        targets: &[u32],
        batch: usize,
        grad_scale: f64,
    ) -> Result<f64> {
        let (logits, trace) = self.forward_train(inputs, batch)?;
        let mut ce = cross_entropy(&logits, targets)?;
        if !ce.loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        if grad_scale != 1.0 {
            let s = F::from_f64_lossy(grad_scale);
            ce.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
        self.backward(&trace, &ce.grad)?;
        Ok(ce.loss)
    }
}
