//! Chebyshev spectral graph convolution composed from tape primitives.

use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

const POWER_ITERATIONS: usize = 200;
const SPECTRUM_TOL: f64 = 1e-6;

/// Rescaled Laplacian `L̃ = (2/λ_max)·L − I` with `λ_max = 2`, i.e. `L − I`,
/// for one shared graph `[N, N]` or one graph per sample `[B, N, N]`.
#[derive(Debug, Clone)]
pub struct RescaledLaplacian(Arc<Tensor>);

/// Largest-magnitude eigenvalue estimate of a symmetric matrix by power
/// iteration from a fixed non-degenerate start.
pub fn spectral_norm_estimate(a: &[f64], n: usize) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sqrt().fract()).collect();
    let mut est = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in &mut v {
            *x /= norm;
        }
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum()).collect();
        est = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w;
    }
    est
}

impl RescaledLaplacian {
    /// Wraps an already rescaled operator after checking its shape, symmetry
    /// and that its spectral norm does not exceed 1.
    pub fn new(l: Tensor) -> Result<Self> {
        let (count, n) = match l.shape() {
            [a, b] if a == b => (1, *a),
            [c, a, b] if a == b => (*c, *a),
            other => return Err(shape_err("rescaled_laplacian", &[0, 0], other)),
        };
        for k in 0..count {
            let block = &l.data()[k * n * n..(k + 1) * n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    if (block[i * n + j] - block[j * n + i]).abs() > 1e-10 {
                        return Err(Error::InvalidArgument(format!(
                            "rescaled Laplacian {k} is not symmetric at ({i}, {j})"
                        )));
                    }
                }
            }
            let norm = spectral_norm_estimate(block, n);
            if norm > 1.0 + SPECTRUM_TOL {
                return Err(Error::SpectrumOutOfRange { norm });
            }
        }
        Ok(Self(Arc::new(l)))
    }

    /// `L − I` from normalized Laplacians (shape `[N, N]` or `[B, N, N]`).
    pub fn from_normalized(l: &Tensor) -> Result<Self> {
        let n = *l.shape().last().unwrap_or(&0);
        let mut t = l.clone();
        for (k, v) in t.data_mut().iter_mut().enumerate() {
            let r = k % (n * n);
            if r / n == r % n {
                *v -= 1.0;
            }
        }
        Self::new(t)
    }

    /// Stacks per-sample operators into one `[B, N, N]` operator.
    pub fn stack(parts: &[&RescaledLaplacian]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("empty Laplacian stack".into()))?;
        let n = first.nodes();
        let mut data = Vec::with_capacity(parts.len() * n * n);
        for p in parts {
            if p.0.shape() != [n, n] {
                return Err(shape_err("stack", &[n, n], p.0.shape()));
            }
            data.extend_from_slice(p.0.data());
        }
        Ok(Self(Arc::new(Tensor::new(&[parts.len(), n, n], data)?)))
    }

    pub fn nodes(&self) -> usize {
        *self.0.shape().last().unwrap()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub(crate) fn shared(&self) -> &Arc<Tensor> {
        &self.0
    }
}

/// `Σ_{m=0}^{M} T_m(L̃)·X·θ_m (+ bias)` for `x[B, N, d_in]` and
/// `thetas[m]` of shape `[d_in, d_out]`, with `T_0 = X`, `T_1 = L̃X`,
/// `T_m = 2L̃T_{m−1} − T_{m−2}`.
pub fn chebconv(g: &mut Graph, x: Var, l: &RescaledLaplacian, thetas: &[Var], bias: Option<Var>) -> Result<Var> {
    if thetas.is_empty() {
        return Err(Error::InvalidArgument("chebconv needs at least one coefficient matrix".into()));
    }
    let mut out = g.matmul(x, thetas[0])?;
    let mut prev = x;
    let mut cur = x;
    for (m, &theta) in thetas.iter().enumerate().skip(1) {
        let lx = g.left_matmul_const(l.shared(), cur)?;
        let next = if m == 1 { lx } else { g.lincomb(lx, prev, 2.0, -1.0)? };
        prev = cur;
        cur = next;
        let term = g.matmul(cur, theta)?;
        out = g.add(out, term)?;
    }
    match bias {
        Some(b) => g.add_bias(out, b),
        None => Ok(out),
    }
}
