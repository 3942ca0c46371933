//! Least squares through the normal equations, with a ridge fallback for
//! rank-deficient designs.

use crate::error::{shape_err, Result};

use super::Tensor;

/// Condition-number estimate above which the ridge term is added.
pub const MAX_CONDITION: f64 = 1e12;

/// Ridge strength, relative to the mean diagonal of the Gram matrix.
pub const RIDGE_LAMBDA: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct LstsqFit {
    /// `W[e×d]` minimizing `Σⱼ ||W·xⱼ − zⱼ||²`.
    pub w: Tensor<f64>,
    /// Mean squared residual over all `N·e` entries.
    pub mse: f64,
    /// Absolute ridge strength when the fallback was taken.
    pub ridge: Option<f64>,
    /// Columns of `X` that are identically zero.
    pub zero_columns: Vec<usize>,
}

impl LstsqFit {
    pub fn is_degenerate(&self) -> bool {
        self.ridge.is_some()
    }
}

/// In-place Cholesky factorization of a symmetric `n×n` matrix; returns
/// `None` when a pivot is not strictly positive.
fn cholesky(a: &mut [f64], n: usize) -> Option<()> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let l_jj = diag.sqrt();
        a[j * n + j] = l_jj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l_jj;
        }
        for i in 0..j {
            a[i * n + j] = 0.0;
        }
    }
    Some(())
}

/// Solves `L·Lᵀ·b = rhs` in place for each of `m` right-hand-side columns
/// stored row-major in `rhs[n×m]`.
fn cholesky_solve(l: &[f64], n: usize, rhs: &mut [f64], m: usize) {
    for c in 0..m {
        for i in 0..n {
            let mut s = rhs[i * m + c];
            for k in 0..i {
                s -= l[i * n + k] * rhs[k * m + c];
            }
            rhs[i * m + c] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i * m + c];
            for k in i + 1..n {
                s -= l[k * n + i] * rhs[k * m + c];
            }
            rhs[i * m + c] = s / l[i * n + i];
        }
    }
}

/// Fits `W` with `X·Wᵀ ≈ Z` for row-sample matrices `X[N×d]`, `Z[N×e]`.
pub fn lstsq(x: &Tensor<f64>, z: &Tensor<f64>) -> Result<LstsqFit> {
    let (n, d) = match x.shape() {
        [n, d] => (*n, *d),
        s => return shape_err(format!("lstsq: X must be 2-D, got {s:?}")),
    };
    let e = match z.shape() {
        [nz, e] if *nz == n => *e,
        s => return shape_err(format!("lstsq: Z shape {s:?} does not match {n} rows")),
    };
    if d == 0 {
        return shape_err("lstsq: X has no columns");
    }
    let xs = x.data();
    let zs = z.data();

    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d * e];
    for r in 0..n {
        let xr = &xs[r * d..(r + 1) * d];
        let zr = &zs[r * e..(r + 1) * e];
        for i in 0..d {
            let xi = xr[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..d {
                gram[i * d + j] += xi * xr[j];
            }
            for c in 0..e {
                rhs[i * e + c] += xi * zr[c];
            }
        }
    }
    let zero_columns: Vec<usize> = (0..d).filter(|&i| gram[i * d + i] == 0.0).collect();

    let mut factor = gram.clone();
    let well_posed = cholesky(&mut factor, d).is_some() && {
        let diag = (0..d).map(|i| factor[i * d + i]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        (hi / lo).powi(2) <= MAX_CONDITION
    };
    let ridge = if well_posed {
        None
    } else {
        let mean_diag = (0..d).map(|i| gram[i * d + i]).sum::<f64>() / d as f64;
        let lambda = RIDGE_LAMBDA * if mean_diag > 0.0 { mean_diag } else { 1.0 };
        factor.copy_from_slice(&gram);
        for i in 0..d {
            factor[i * d + i] += lambda;
        }
        cholesky(&mut factor, d).expect("ridge-regularized Gram matrix is positive definite");
        Some(lambda)
    };
    cholesky_solve(&factor, d, &mut rhs, e);

    // rhs now holds B = Wᵀ [d×e]
    let mut w = Tensor::zeros(&[e, d]);
    for i in 0..d {
        for c in 0..e {
            w.data_mut()[c * d + i] = rhs[i * e + c];
        }
    }
    let mut sse = 0.0;
    for r in 0..n {
        let xr = &xs[r * d..(r + 1) * d];
        for c in 0..e {
            let pred: f64 = (0..d).map(|i| rhs[i * e + c] * xr[i]).sum();
            let res = pred - zs[r * e + c];
            sse += res * res;
        }
    }
    let mse = if n * e == 0 {
        0.0
    } else {
        sse / (n * e) as f64
    };
    Ok(LstsqFit {
        w,
        mse,
        ridge,
        zero_columns,
    })
}
