//! Linearity probe around the attention sub-block.
//!
//! For every decoder layer the probe records the block input `x` and the
//! output `z` of input-norm + self-attention while a prompt is prefilled and
//! a few tokens are generated greedily. It then fits `z ≈ W·x` by least
//! squares, measures how close the residual output `x + z` stays to `x` in
//! direction, and fits the nearest scalar multiple of the identity to
//! `W' = W + I`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::generate::argmax;
use crate::model::{AttentionObserver, KvCache, ModelWeights};
use crate::tensor::linalg::lstsq;
use crate::tensor::ops::rmsnorm;
use crate::tensor::{Float, Tensor};

/// Rows recorded for one decoder layer, stored in double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCapture {
    /// Layer slot in the full stack.
    pub layer: usize,
    /// `[rows × d]` block inputs.
    pub x: Tensor<f64>,
    /// `[rows × d]` attention sub-block outputs before the residual add.
    pub z: Tensor<f64>,
    /// `[rows × d]` post-residual activations `x + z` as computed by the model.
    pub y: Tensor<f64>,
}

/// Per-layer input/output pairs for a prompt of `prompt_len` tokens followed
/// by `generated` decode steps. Rows `0..prompt_len` come from the prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct IoCapture {
    pub layers: Vec<LayerCapture>,
    pub prompt_len: usize,
    pub generated: usize,
    pub generated_tokens: Vec<u32>,
}

impl IoCapture {
    pub fn rows(&self) -> usize {
        self.prompt_len + self.generated
    }

    /// Builds a capture from explicit matrices (`y` is set to `x + z`).
    pub fn from_pairs(pairs: Vec<(Tensor<f64>, Tensor<f64>)>, prompt_len: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(pairs.len());
        for (layer, (x, z)) in pairs.into_iter().enumerate() {
            if x.shape() != z.shape() || x.ndim() != 2 || x.shape()[0] < prompt_len {
                return Err(Error::Shape(format!(
                    "capture pair {layer}: x {:?}, z {:?}, prompt {prompt_len}",
                    x.shape(),
                    z.shape()
                )));
            }
            let y = Tensor::from_vec(
                x.shape(),
                x.data().iter().zip(z.data()).map(|(a, b)| a + b).collect(),
            )?;
            layers.push(LayerCapture { layer, x, z, y });
        }
        let rows = layers.first().map_or(prompt_len, |l| l.x.shape()[0]);
        Ok(Self {
            layers,
            prompt_len,
            generated: rows - prompt_len,
            generated_tokens: Vec::new(),
        })
    }
}

struct Recorder {
    layers: Vec<(usize, Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl<F: Float> AttentionObserver<F> for Recorder {
    fn observe(&mut self, layer: usize, x: &[F], z: &[F], y: &[F]) {
        let slot = match self.layers.iter().position(|l| l.0 == layer) {
            Some(s) => s,
            None => {
                self.layers
                    .push((layer, Vec::new(), Vec::new(), Vec::new()));
                self.layers.len() - 1
            }
        };
        let entry = &mut self.layers[slot];
        entry.1.extend(x.iter().map(|v| v.as_f64()));
        entry.2.extend(z.iter().map(|v| v.as_f64()));
        entry.3.extend(y.iter().map(|v| v.as_f64()));
    }
}

/// Prefills `prompt` (batch 1) and runs `generate` greedy decode steps,
/// feeding each generated token back so that every generated token
/// contributes a row. MLP-only layers are not recorded; a model without
/// decoder layers yields an empty capture.
pub fn collect_io_pairs<F: Float>(
    model: &ModelWeights<F>,
    prompt: &[u32],
    generate: usize,
) -> Result<IoCapture> {
    if prompt.is_empty() {
        return Err(Error::Empty("probe prompt has no tokens".into()));
    }
    let total = prompt.len() + generate;
    if total > model.config.max_seq_len {
        return Err(Error::CacheOverflow {
            requested: total,
            capacity: model.config.max_seq_len,
        });
    }
    let v = model.config.vocab_size;
    let d = model.config.hidden_size;
    let mut rec = Recorder { layers: Vec::new() };
    let mut cache = KvCache::new(&model.config, 1);
    let logits = model.forward_observed(prompt, 1, Some(&mut cache), &mut rec)?;
    let mut next = argmax(&logits.data()[(prompt.len() - 1) * v..]) as u32;
    let mut generated_tokens = Vec::with_capacity(generate);
    for _ in 0..generate {
        generated_tokens.push(next);
        let logits = model.forward_observed(&[next], 1, Some(&mut cache), &mut rec)?;
        next = argmax(logits.data()) as u32;
    }
    let layers = rec
        .layers
        .into_iter()
        .map(|(layer, x, z, y)| {
            Ok(LayerCapture {
                layer,
                x: Tensor::from_vec(&[total, d], x)?,
                z: Tensor::from_vec(&[total, d], z)?,
                y: Tensor::from_vec(&[total, d], y)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IoCapture {
        layers,
        prompt_len: prompt.len(),
        generated: generate,
        generated_tokens,
    })
}

/// Which captured rows an analysis uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowWindow {
    Prompt,
    Generated,
    All,
}

impl RowWindow {
    fn range(self, cap: &IoCapture) -> std::ops::Range<usize> {
        match self {
            RowWindow::Prompt => 0..cap.prompt_len,
            RowWindow::Generated => cap.prompt_len..cap.rows(),
            RowWindow::All => 0..cap.rows(),
        }
    }
}

fn select_rows(t: &Tensor<f64>, rows: std::ops::Range<usize>) -> Result<Tensor<f64>> {
    let d = t.last_dim();
    Tensor::from_vec(
        &[rows.len(), d],
        t.data()[rows.start * d..rows.end * d].to_vec(),
    )
}

/// Least-squares map `z ≈ W·x` for one captured layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    /// `[d × d]`
    pub w: Tensor<f64>,
    /// Mean squared residual over all fitted entries.
    pub mse: f64,
    pub rows: usize,
    /// Ridge regularization was needed (rank-deficient inputs).
    pub degenerate: bool,
}

/// Fits `W` over the prompt rows, plus the generated rows when
/// `include_generated` is set.
pub fn fit_linear(cap: &IoCapture, layer: usize, include_generated: bool) -> Result<LinearFit> {
    let lc = cap.layers.get(layer).ok_or_else(|| {
        Error::Shape(format!(
            "capture has {} layers, asked for {layer}",
            cap.layers.len()
        ))
    })?;
    let window = if include_generated {
        RowWindow::All
    } else {
        RowWindow::Prompt
    };
    let rows = window.range(cap);
    if rows.is_empty() {
        return Err(Error::Empty("no rows to fit".into()));
    }
    let x = select_rows(&lc.x, rows.clone())?;
    let z = select_rows(&lc.z, rows.clone())?;
    let fit = lstsq(&x, &z)?;
    let degenerate = fit.is_degenerate();
    Ok(LinearFit {
        w: fit.w,
        mse: fit.mse,
        rows: rows.len(),
        degenerate,
    })
}

/// How residual cosine similarity is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineMode {
    /// `cos(x, x + z)` from the captured rows.
    Empirical,
    /// `cos(x, (W + I)·x)` from a fitted map.
    Fitted,
}

impl std::fmt::Display for CosineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CosineMode::Empirical => "empirical",
            CosineMode::Fitted => "fitted",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineStats {
    pub mean: f64,
    pub rows_used: usize,
    /// Rows skipped because a vector had zero norm.
    pub skipped: usize,
    pub mode: CosineMode,
    pub window: RowWindow,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean residual cosine similarity over the generated rows, or over the
/// prompt rows when nothing was generated. With `fitted = Some(W)` the
/// output side is `(W + I)·x`; otherwise the captured `x + z`.
pub fn residual_cosine(
    cap: &IoCapture,
    layer: usize,
    fitted: Option<&Tensor<f64>>,
) -> Result<CosineStats> {
    let lc = cap.layers.get(layer).ok_or_else(|| {
        Error::Shape(format!(
            "capture has {} layers, asked for {layer}",
            cap.layers.len()
        ))
    })?;
    let window = if cap.generated > 0 {
        RowWindow::Generated
    } else {
        RowWindow::Prompt
    };
    let rows = window.range(cap);
    if rows.is_empty() {
        return Err(Error::Empty("no rows for cosine similarity".into()));
    }
    let d = lc.x.last_dim();
    if let Some(w) = fitted {
        if w.shape() != [d, d] {
            return Err(Error::Shape(format!(
                "fitted map {:?}, expected [{d}, {d}]",
                w.shape()
            )));
        }
    }
    let mut sum = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    let mut out = vec![0.0; d];
    for r in rows {
        let x = &lc.x.data()[r * d..(r + 1) * d];
        match fitted {
            Some(w) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &w.data()[i * d..(i + 1) * d];
                    *o = x[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            None => {
                let z = &lc.z.data()[r * d..(r + 1) * d];
                out.iter_mut()
                    .zip(x.iter().zip(z))
                    .for_each(|(o, (a, b))| *o = a + b);
            }
        }
        match cosine(x, &out) {
            Some(c) => {
                sum += c;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    Ok(CosineStats {
        mean: if used > 0 {
            sum / used as f64
        } else {
            f64::NAN
        },
        rows_used: used,
        skipped,
        mode: if fitted.is_some() {
            CosineMode::Fitted
        } else {
            CosineMode::Empirical
        },
        window,
    })
}

/// Nearest `α·I` to a square matrix in Frobenius norm:
/// `α = trace(W')/d`, `mse = ‖αI − W'‖²/d²`.
pub fn fit_scalar_identity(w_prime: &Tensor<f64>) -> Result<(f64, f64)> {
    let d = match w_prime.shape() {
        [r, c] if r == c && *r > 0 => *r,
        s => {
            return Err(Error::Shape(format!(
                "expected a non-empty square matrix, got {s:?}"
            )))
        }
    };
    let trace: f64 = (0..d).map(|i| w_prime.data()[i * d + i]).sum();
    let alpha = trace / d as f64;
    let mut sq = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { alpha } else { 0.0 };
            let diff = target - w_prime.data()[i * d + j];
            sq += diff * diff;
        }
    }
    Ok((alpha, sq / (d * d) as f64))
}

/// `W + I`.
pub fn add_identity(w: &Tensor<f64>) -> Tensor<f64> {
    let d = w.shape()[0];
    let mut out = w.clone();
    for i in 0..d {
        out.data_mut()[i * d + i] += 1.0;
    }
    out
}

/// Largest `‖rmsnorm(α·x) − rmsnorm(x)‖∞` over `alphas`, with unit norm
/// weights.
pub fn scale_invariance_report<F: Float>(x: &Tensor<F>, alphas: &[f64], eps: f64) -> Result<f64> {
    let d = x.last_dim();
    let ones = Tensor::full(&[d], F::one());
    let base = rmsnorm(x, &ones, eps)?;
    let mut worst = 0.0f64;
    for &a in alphas {
        if !(a > 0.0) {
            return Err(Error::Config(format!("scale factor {a} must be positive")));
        }
        let scaled = x.map(|v| v * F::from_f64_lossy(a));
        let y = rmsnorm(&scaled, &ones, eps)?;
        worst = worst.max(y.max_abs_diff(&base).as_f64());
    }
    Ok(worst)
}

/// One CSV row of a probe report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub layer: usize,
    pub rows_fit: usize,
    pub linear_mse: f64,
    pub cosine_mean: f64,
    pub cosine_mode: CosineMode,
    pub alpha: f64,
    pub scalar_mse: f64,
}

/// Probe results for one prompt length.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub prompt_len: usize,
    pub generated: usize,
    pub rows: Vec<ProbeRow>,
}

/// Options of [`probe_report`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeOptions {
    /// Fit `W` on prompt and generated rows instead of prompt rows only.
    pub fit_generated: bool,
    pub cosine_mode: CosineMode,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            fit_generated: false,
            cosine_mode: CosineMode::Empirical,
        }
    }
}

/// Fits and summarizes every layer of a capture.
pub fn probe_report(cap: &IoCapture, options: ProbeOptions) -> Result<ProbeReport> {
    let mut rows = Vec::with_capacity(cap.layers.len());
    for (i, lc) in cap.layers.iter().enumerate() {
        let fit = fit_linear(cap, i, options.fit_generated)?;
        let cos = match options.cosine_mode {
            CosineMode::Empirical => residual_cosine(cap, i, None)?,
            CosineMode::Fitted => residual_cosine(cap, i, Some(&fit.w))?,
        };
        let (alpha, scalar_mse) = fit_scalar_identity(&add_identity(&fit.w))?;
        rows.push(ProbeRow {
            layer: lc.layer,
            rows_fit: fit.rows,
            linear_mse: fit.mse,
            cosine_mean: cos.mean,
            cosine_mode: cos.mode,
            alpha,
            scalar_mse,
        });
    }
    Ok(ProbeReport {
        prompt_len: cap.prompt_len,
        generated: cap.generated,
        rows,
    })
}
