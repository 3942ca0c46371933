//! Central-difference gradient oracle.

use super::Tensor;

/// Smallest perturbation used regardless of the element's magnitude.
pub const MIN_STEP: f64 = 1e-5;

/// Default relative step for [`finite_diff_grad`].
pub const DEFAULT_REL_STEP: f64 = 1e-5;

/// Central differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every element,
/// with `hᵢ = max(rel_step·|xᵢ|, MIN_STEP)`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    rel_step: f64,
) -> Tensor<f64> {
    let mut probe = x.clone();
    probe.clear_grad();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        let h = (rel_step * orig.abs()).max(MIN_STEP);
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// `max|a − b| / max(max|a|, max|b|, floor)`: the error relative to the
/// larger gradient's scale.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error lengths");
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a
        .iter()
        .chain(b)
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    diff / scale
}
