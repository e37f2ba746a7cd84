//! Connectivity matrices and their upper-triangle edge vectors.
//!
//! Edges are always enumerated row-major over the strict upper triangle:
//! `(0,1), (0,2), …, (0,n-1), (1,2), …`. Every consumer (linear model,
//! autoencoders, evaluation) relies on this single ordering.

use crate::error::{Error, Result};

/// Number of undirected edges of an `n`-node graph, `(n² − n) / 2`.
pub fn edge_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Recovers `n` from an edge count, if the count is triangular.
pub fn node_count_for_edges(d: usize) -> Option<usize> {
    let n = ((1.0 + (1.0 + 8.0 * d as f64).sqrt()) / 2.0).round() as usize;
    (edge_count(n) == d).then_some(n)
}

/// Iterates `(i, j)` pairs of the strict upper triangle in canonical order.
pub fn upper_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

/// Checks a dense row-major `n × n` array against the connectivity invariants.
///
/// Violations are reported at the first offending index in row-major order,
/// checking entry-level problems before symmetry.
pub fn validate_matrix(n: usize, values: &[f64]) -> Result<()> {
    if values.len() != n * n {
        return Err(Error::LengthMismatch {
            expected: n * n,
            actual: values.len(),
        });
    }
    for i in 0..n {
        for j in 0..n {
            let v = values[i * n + j];
            if !v.is_finite() || v.fract() != 0.0 {
                return Err(Error::NonIntegerEntry { row: i, col: j });
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry { row: i, col: j });
            }
        }
    }
    for i in 0..n {
        if values[i * n + i] != 0.0 {
            return Err(Error::NonzeroDiagonal { index: i });
        }
    }
    for (i, j) in upper_pairs(n) {
        if values[i * n + j] != values[j * n + i] {
            return Err(Error::AsymmetricMatrix { row: i, col: j });
        }
    }
    Ok(())
}

/// Symmetric, zero-diagonal, nonnegative integer streamline-count matrix.
///
/// Counts are stored as `f64` (exact for all realistic fiber counts) so the
/// metric code can work on the values directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl ConnectivityMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        validate_matrix(n, &values)?;
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    /// Builds from nested rows, mostly for tests and small literals.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(n, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn max_weight(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Relabels nodes: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        assert_eq!(perm.len(), n, "permutation length");
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        Self { n, values }
    }

    /// Post-processes an arbitrary real square matrix into a valid
    /// connectivity matrix: symmetrize as `(S + Sᵀ)/2`, zero the diagonal,
    /// clamp negatives to zero and round half away from zero.
    pub fn from_real_postprocessed(n: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: raw.len(),
            });
        }
        let mut values = vec![0.0; n * n];
        for (i, j) in upper_pairs(n) {
            let v = quantize_count(0.5 * (raw[i * n + j] + raw[j * n + i]));
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
        Self::new(n, values)
    }
}

/// Clamp at zero then round half away from zero. Non-finite input maps to 0.
pub fn quantize_count(v: f64) -> f64 {
    if !v.is_finite() {
        return 0.0;
    }
    v.max(0.0).round()
}

/// Upper-triangle vector of length `(n² − n)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeVector {
    n: usize,
    values: Vec<f64>,
}

impl EdgeVector {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        let expected = edge_count(n);
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn vectorize_upper(m: &ConnectivityMatrix) -> EdgeVector {
    let values = upper_pairs(m.n).map(|(i, j)| m.get(i, j)).collect();
    EdgeVector { n: m.n, values }
}

/// Mirrors an edge vector into a symmetric zero-diagonal matrix.
///
/// Entries must already be valid counts (nonnegative integers).
pub fn devectorize(v: &[f64], n: usize) -> Result<ConnectivityMatrix> {
    let expected = edge_count(n);
    if v.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: v.len(),
        });
    }
    let mut values = vec![0.0; n * n];
    for ((i, j), &x) in upper_pairs(n).zip(v) {
        values[i * n + j] = x;
        values[j * n + i] = x;
    }
    ConnectivityMatrix::new(n, values)
}
