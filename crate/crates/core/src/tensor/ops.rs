//! Forward kernels and their reverse-mode rules.
//!
//! Tensor-level functions validate shapes and allocate; the `*_rows` slice
//! kernels underneath are what the model's hot loops call directly.

use crate::error::{shape_err, Error, Result};

use super::{gemm, Float, MatView, RngState, Tensor};

/// Target value skipped by [`cross_entropy`].
pub const IGNORE_INDEX: u32 = u32::MAX;

fn matrix_dims<F: Float>(t: &Tensor<F>, name: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => shape_err(format!("{name} must be 2-D, got {s:?}")),
    }
}

/// Matrix product `a[m×k] · b[k×n]`.
pub fn matmul<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = matrix_dims(a, "matmul lhs")?;
    let (k2, n) = matrix_dims(b, "matmul rhs")?;
    if k != k2 {
        return shape_err(format!("matmul inner extents {k} vs {k2}"));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        F::one(),
        MatView::new(a.data(), m, k),
        MatView::new(b.data(), k, n),
        F::zero(),
        out.data_mut(),
        n,
    );
    Ok(out)
}

/// Gradients of `a·b` given the upstream gradient `g[m×n]`:
/// `(g·bᵀ, aᵀ·g)`.
pub fn matmul_backward<F: Float>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    g: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (m, k) = matrix_dims(a, "matmul lhs")?;
    let (k2, n) = matrix_dims(b, "matmul rhs")?;
    if k != k2 || g.shape() != [m, n] {
        return shape_err(format!(
            "matmul_backward shapes {:?} {:?} {:?}",
            a.shape(),
            b.shape(),
            g.shape()
        ));
    }
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    gemm(
        F::one(),
        MatView::new(g.data(), m, n),
        MatView::new(b.data(), k, n).t(),
        F::zero(),
        da.data_mut(),
        k,
    );
    gemm(
        F::one(),
        MatView::new(a.data(), m, k).t(),
        MatView::new(g.data(), m, n),
        F::zero(),
        db.data_mut(),
        n,
    );
    Ok((da, db))
}

#[inline]
pub(crate) fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub(crate) fn silu_scalar<F: Float>(x: F) -> F {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad_scalar<F: Float>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

/// Elementwise `x·sigmoid(x)`.
pub fn silu<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    x.map(silu_scalar)
}

pub fn silu_backward<F: Float>(x: &Tensor<F>, g: &Tensor<F>) -> Result<Tensor<F>> {
    if x.shape() != g.shape() {
        return shape_err("silu_backward: gradient shape differs from input");
    }
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &gv)| gv * silu_grad_scalar(v))
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Normalizes each `d`-length row of `x` into `out`, recording the inverse RMS
/// of every row. Sums are accumulated in f64 regardless of `F`.
pub(crate) fn rmsnorm_rows<F: Float>(
    x: &[F],
    weight: &[F],
    eps: f64,
    out: &mut [F],
    inv_rms: &mut [F],
) {
    let d = weight.len();
    for ((row, dst), r) in x
        .chunks_exact(d)
        .zip(out.chunks_exact_mut(d))
        .zip(inv_rms.iter_mut())
    {
        let ms = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / d as f64;
        let inv = 1.0 / (ms + eps).sqrt();
        *r = F::from_f64_lossy(inv);
        for ((o, &xv), &w) in dst.iter_mut().zip(row).zip(weight) {
            *o = F::from_f64_lossy(xv.as_f64() * inv) * w;
        }
    }
}

/// Reverse pass of [`rmsnorm_rows`]: accumulates into `dx` and `dweight`.
pub(crate) fn rmsnorm_rows_backward<F: Float>(
    x: &[F],
    weight: &[F],
    inv_rms: &[F],
    dy: &[F],
    dx: &mut [F],
    dweight: &mut [F],
) {
    let d = weight.len();
    let inv_d = F::one() / F::from_usize(d).unwrap();
    for (((row, g), dst), &r) in x
        .chunks_exact(d)
        .zip(dy.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .zip(inv_rms)
    {
        let mut dot = F::zero();
        for j in 0..d {
            dot += g[j] * weight[j] * row[j];
            dweight[j] += g[j] * row[j] * r;
        }
        let coef = dot * r * r * r * inv_d;
        for j in 0..d {
            dst[j] += r * weight[j] * g[j] - coef * row[j];
        }
    }
}

/// Root-mean-square normalization over the last axis:
/// `y = weight ⊙ x / sqrt(mean(x²) + eps)`.
pub fn rmsnorm<F: Float>(x: &Tensor<F>, weight: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
    let d = weight.numel();
    if d == 0 {
        return shape_err("rmsnorm over an empty axis");
    }
    if x.last_dim() != d || x.ndim() == 0 {
        return shape_err(format!(
            "rmsnorm: last extent {} does not match weight length {d}",
            x.last_dim()
        ));
    }
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::Config(format!(
            "rmsnorm eps must be >= 0, got {eps}"
        )));
    }
    let mut out = Tensor::zeros(x.shape());
    let mut inv = vec![F::zero(); x.numel() / d];
    rmsnorm_rows(x.data(), weight.data(), eps, out.data_mut(), &mut inv);
    Ok(out)
}

/// Gradients `(dx, dweight)` of [`rmsnorm`].
pub fn rmsnorm_backward<F: Float>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    eps: f64,
    g: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let d = weight.numel();
    if d == 0 || x.last_dim() != d || g.shape() != x.shape() {
        return shape_err("rmsnorm_backward shapes");
    }
    let mut scratch = vec![F::zero(); x.numel()];
    let mut inv = vec![F::zero(); x.numel() / d];
    rmsnorm_rows(x.data(), weight.data(), eps, &mut scratch, &mut inv);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    rmsnorm_rows_backward(
        x.data(),
        weight.data(),
        &inv,
        g.data(),
        dx.data_mut(),
        dw.data_mut(),
    );
    Ok((dx, dw))
}

/// In-place max-subtracted softmax of one row.
pub(crate) fn softmax_in_place<F: Float>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = F::one() / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// `dx = p ⊙ (dp − Σ dp⊙p)` for one row, written into `dp`.
pub(crate) fn softmax_backward_in_place<F: Float>(p: &[F], dp: &mut [F]) {
    let dot: F = p.iter().zip(dp.iter()).map(|(&a, &b)| a * b).sum();
    for (g, &pv) in dp.iter_mut().zip(p) {
        *g = pv * (*g - dot);
    }
}

/// Softmax over the last axis.
pub fn softmax_rows<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    out.clear_grad();
    let n = x.last_dim().max(1);
    out.data_mut()
        .chunks_exact_mut(n)
        .for_each(softmax_in_place);
    out
}

/// Gradient of [`softmax_rows`] given its output `p` and upstream `g`.
pub fn softmax_rows_backward<F: Float>(p: &Tensor<F>, g: &Tensor<F>) -> Result<Tensor<F>> {
    if p.shape() != g.shape() {
        return shape_err("softmax_rows_backward shapes");
    }
    let mut out = g.clone();
    out.clear_grad();
    let n = p.last_dim().max(1);
    for (pr, gr) in p
        .data()
        .chunks_exact(n)
        .zip(out.data_mut().chunks_exact_mut(n))
    {
        softmax_backward_in_place(pr, gr);
    }
    Ok(out)
}

/// Per-pair inverse frequencies `theta^(−2i/head_dim)`.
pub(crate) fn rope_frequencies(head_dim: usize, theta: f64) -> Vec<f64> {
    (0..head_dim / 2)
        .map(|i| theta.powf(-2.0 * i as f64 / head_dim as f64))
        .collect()
}

/// Rotates the channel pairs `(2i, 2i+1)` of one head vector by
/// `pos·freq[i]`; `inverse` rotates by the negative angle (the adjoint).
pub(crate) fn rope_vector<F: Float>(v: &mut [F], pos: usize, freqs: &[f64], inverse: bool) {
    let sign = if inverse { -1.0 } else { 1.0 };
    for (i, &f) in freqs.iter().enumerate() {
        let angle = pos as f64 * f;
        let (s, c) = angle.sin_cos();
        let (s, c) = (F::from_f64_lossy(sign * s), F::from_f64_lossy(c));
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        v[2 * i] = a * c - b * s;
        v[2 * i + 1] = a * s + b * c;
    }
}

fn rope_impl<F: Float>(
    x: &Tensor<F>,
    positions: &[usize],
    theta: f64,
    inverse: bool,
) -> Result<Tensor<F>> {
    let [heads, t, hd] = match x.shape() {
        [h, t, d] => [*h, *t, *d],
        s => return shape_err(format!("rope expects [heads×T×head_dim], got {s:?}")),
    };
    if hd % 2 != 0 {
        return shape_err(format!("rope needs an even head_dim, got {hd}"));
    }
    if positions.len() != t {
        return shape_err(format!("{} positions for {t} tokens", positions.len()));
    }
    let freqs = rope_frequencies(hd, theta);
    let mut out = x.clone();
    out.clear_grad();
    for h in 0..heads {
        for (ti, &pos) in positions.iter().enumerate() {
            let off = (h * t + ti) * hd;
            rope_vector(&mut out.data_mut()[off..off + hd], pos, &freqs, inverse);
        }
    }
    Ok(out)
}

/// Rotary position embedding on `x[heads×T×head_dim]`.
pub fn rope_apply<F: Float>(x: &Tensor<F>, positions: &[usize], theta: f64) -> Result<Tensor<F>> {
    rope_impl(x, positions, theta, false)
}

/// Gradient of [`rope_apply`]; the rotation is orthogonal so this is the
/// inverse rotation applied to `g`.
pub fn rope_backward<F: Float>(
    g: &Tensor<F>,
    positions: &[usize],
    theta: f64,
) -> Result<Tensor<F>> {
    rope_impl(g, positions, theta, true)
}

/// Result of [`cross_entropy`].
#[derive(Clone, Debug)]
pub struct CrossEntropy<F: Float> {
    /// Mean negative log-likelihood over counted positions.
    pub loss: f64,
    /// `(softmax − onehot) / count`, zero rows at ignored positions.
    pub grad: Tensor<F>,
    pub count: usize,
}

/// Mean token negative log-likelihood of `logits[..×V]` against `targets`.
pub fn cross_entropy<F: Float>(logits: &Tensor<F>, targets: &[u32]) -> Result<CrossEntropy<F>> {
    let v = logits.last_dim();
    let rows = if v == 0 { 0 } else { logits.numel() / v };
    if rows != targets.len() {
        return shape_err(format!("{} targets for {rows} logit rows", targets.len()));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut count = 0usize;
    let mut total = 0.0f64;
    for ((row, g), &t) in logits
        .data()
        .chunks_exact(v)
        .zip(grad.data_mut().chunks_exact_mut(v))
        .zip(targets)
    {
        if t == IGNORE_INDEX {
            continue;
        }
        let t = t as usize;
        if t >= v {
            return Err(Error::OutOfRange {
                what: "target id",
                value: t,
                limit: v,
            });
        }
        g.copy_from_slice(row);
        softmax_in_place(g);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max).as_f64();
        let lse = max
            + row
                .iter()
                .map(|&x| (x.as_f64() - max).exp())
                .sum::<f64>()
                .ln();
        total += lse - row[t].as_f64();
        g[t] -= F::one();
        count += 1;
    }
    if count > 0 {
        let inv = F::one() / F::from_usize(count).unwrap();
        grad.data_mut().iter_mut().for_each(|g| *g *= inv);
    }
    let loss = if count > 0 { total / count as f64 } else { 0.0 };
    Ok(CrossEntropy { loss, grad, count })
}

/// Tensor of independent `N(mean, std²)` draws.
pub fn normal_init<F: Float>(
    shape: &[usize],
    mean: f64,
    std: f64,
    rng: &mut RngState,
) -> Tensor<F> {
    assert!(std >= 0.0 && std.is_finite(), "std must be finite and >= 0");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::from_f64_lossy(rng.normal(mean, std)))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
