//! Dense symmetric eigensolver and the normalized graph Laplacian.

use crate::error::{Error, Result};
use crate::matrix::ConnectivityMatrix;

/// Square row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: values.len(),
            });
        }
        Ok(Self { n, values })
    }

    pub fn identity(n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self { n, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl From<&ConnectivityMatrix> for SquareMatrix {
    fn from(m: &ConnectivityMatrix) -> Self {
        Self {
            n: m.n(),
            values: m.values().to_vec(),
        }
    }
}

/// Eigenvalues in ascending order; `eigenvectors` column `k` pairs with
/// `eigenvalues[k]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: SquareMatrix,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the largest off-diagonal magnitude drops to
/// `1e-12·‖A‖_F` (or below the smallest normal number for the zero matrix).
pub fn symmetric_eigen(a: &SquareMatrix) -> Result<EigenDecomposition> {
    let n = a.n;
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-10 * scale.max(1.0) {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
        }
    }
    let mut m = a.clone();
    // Work on the exactly symmetrized input.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    let mut v = SquareMatrix::identity(n);
    let tol = (1e-12 * a.frobenius_norm()).max(f64::MIN_POSITIVE);
    let off_max = |m: &SquareMatrix| {
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.max(m.get(i, j).abs());
            }
        }
        best
    };
    let mut sweeps = 0;
    while off_max(&m) > tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m.get(x, x).total_cmp(&m.get(y, y)));
    let eigenvalues = order.iter().map(|&k| m.get(k, k)).collect();
    let mut vectors = SquareMatrix::identity(n);
    for (dst, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, dst, v.get(row, src));
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: vectors,
    })
}

/// Ascending eigenvalues only.
pub fn symmetric_eigenvalues(a: &SquareMatrix) -> Result<Vec<f64>> {
    symmetric_eigen(a).map(|e| e.eigenvalues)
}

/// `L = I − D^{-1/2} A D^{-1/2}` with `D_uu = Σ_v A_uv`.
///
/// Isolated nodes get the identity row/column, which keeps `L` symmetric
/// positive semi-definite with spectrum inside `[0, 2]`.
pub fn normalized_laplacian(m: &ConnectivityMatrix) -> SquareMatrix {
    let n = m.n();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|u| {
            let d: f64 = m.row(u).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = SquareMatrix::identity(n);
    for u in 0..n {
        for v in 0..n {
            if u != v {
                l.set(u, v, -m.get(u, v) * inv_sqrt[u] * inv_sqrt[v]);
            }
        }
    }
    l
}
