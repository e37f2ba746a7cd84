//! Per-edge OLS harmonization on `[1, X_r, X_b, X_r·X_b]`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::write_lines;
use crate::matrix::{edge_count, node_count_for_edges, quantize_count, EdgeVector};
use crate::site::SiteDescriptor;

const RANK_TOL: f64 = 1e-10;
pub const N_COEFFICIENTS: usize = 4;

/// Numerical column rank of a 4-column design, by greedy Gram–Schmidt with
/// a tolerance relative to each column's norm.
pub fn design_rank(rows: &[[f64; N_COEFFICIENTS]]) -> usize {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..N_COEFFICIENTS {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut res = col;
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = q.iter().zip(&res).map(|(a, b)| a * b).sum();
                for (r, qv) in res.iter_mut().zip(q) {
                    *r -= dot * qv;
                }
            }
        }
        let rn = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn / norm > RANK_TOL {
            basis.push(res.into_iter().map(|v| v / rn).collect());
        }
    }
    basis.len()
}

/// Householder QR of a column-equilibrated `n×4` design.
struct DesignQr {
    n: usize,
    /// Reflector vectors, each of length `n - k` for column `k`.
    reflectors: Vec<Vec<f64>>,
    /// Upper-triangular `R` in row-major 4×4.
    r: [[f64; N_COEFFICIENTS]; N_COEFFICIENTS],
    col_scale: [f64; N_COEFFICIENTS],
}

impl DesignQr {
    fn new(rows: &[[f64; N_COEFFICIENTS]]) -> Self {
        let n = rows.len();
        let mut col_scale = [1.0; N_COEFFICIENTS];
        for (j, s) in col_scale.iter_mut().enumerate() {
            let norm = rows.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
            if norm > 0.0 {
                *s = norm;
            }
        }
        // Column-major working copy.
        let mut a: Vec<Vec<f64>> = (0..N_COEFFICIENTS)
            .map(|j| rows.iter().map(|r| r[j] / col_scale[j]).collect())
            .collect();
        let mut reflectors = Vec::with_capacity(N_COEFFICIENTS);
        let mut r = [[0.0; N_COEFFICIENTS]; N_COEFFICIENTS];
        for k in 0..N_COEFFICIENTS {
            let x = &a[k][k..];
            let alpha = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if x[0] > 0.0 { -alpha } else { alpha };
            let mut v: Vec<f64> = x.to_vec();
            v[0] -= alpha;
            let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if vn > 0.0 {
                for t in &mut v {
                    *t /= vn;
                }
            }
            for col in a.iter_mut().skip(k) {
                apply_reflector(&v, &mut col[k..]);
            }
            for (j, col) in a.iter().enumerate().skip(k) {
                r[k][j] = col[k];
            }
            reflectors.push(v);
        }
        Self {
            n,
            reflectors,
            r,
            col_scale,
        }
    }

    /// Coefficients and residual sum of squares for one response vector.
    fn solve(&self, y: &mut [f64]) -> ([f64; N_COEFFICIENTS], f64) {
        debug_assert_eq!(y.len(), self.n);
        for (k, v) in self.reflectors.iter().enumerate() {
            apply_reflector(v, &mut y[k..]);
        }
        let mut beta = [0.0; N_COEFFICIENTS];
        for k in (0..N_COEFFICIENTS).rev() {
            let mut acc = y[k];
            for j in (k + 1)..N_COEFFICIENTS {
                acc -= self.r[k][j] * beta[j];
            }
            beta[k] = acc / self.r[k][k];
        }
        for (b, s) in beta.iter_mut().zip(&self.col_scale) {
            *b /= s;
        }
        let rss = y[N_COEFFICIENTS..].iter().map(|v| v * v).sum();
        (beta, rss)
    }
}

fn apply_reflector(v: &[f64], x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= 2.0 * dot * vi;
    }
}

/// Fitted per-edge coefficients `[β̂0, β̂1, β̂2, β̂3]` and residual variances.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEdgeModel {
    pub n_nodes: usize,
    pub coefficients: Vec<[f64; N_COEFFICIENTS]>,
    pub residual_variance: Vec<f64>,
}

/// Fits one OLS model per edge over all `(edge vector, site)` observations.
pub fn fit_lr(observations: &[(EdgeVector, SiteDescriptor)]) -> Result<LinearEdgeModel> {
    if observations.len() < N_COEFFICIENTS {
        return Err(Error::TooFewObservations {
            required: N_COEFFICIENTS,
            actual: observations.len(),
        });
    }
    let n_nodes = observations[0].0.n();
    let d = edge_count(n_nodes);
    for (v, _) in observations {
        if v.n() != n_nodes {
            return Err(Error::DimensionMismatch {
                expected: n_nodes,
                actual: v.n(),
            });
        }
    }
    let rows: Vec<[f64; N_COEFFICIENTS]> = observations.iter().map(|(_, s)| s.design_row()).collect();
    let rank = design_rank(&rows);
    if rank < N_COEFFICIENTS {
        return Err(Error::RankDeficientDesign { rank });
    }
    let qr = DesignQr::new(&rows);
    let dof = observations.len() - N_COEFFICIENTS;
    let fits: Vec<([f64; N_COEFFICIENTS], f64)> = (0..d)
        .into_par_iter()
        .map(|e| {
            let mut y: Vec<f64> = observations.iter().map(|(v, _)| v.values()[e]).collect();
            let (beta, rss) = qr.solve(&mut y);
            let var = if dof == 0 { 0.0 } else { rss / dof as f64 };
            (beta, var)
        })
        .collect();
    let (coefficients, residual_variance) = fits.into_iter().unzip();
    let model = LinearEdgeModel {
        n_nodes,
        coefficients,
        residual_variance,
    };
    if model.coefficients.iter().flatten().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("non-finite OLS coefficients".into()));
    }
    Ok(model)
}

impl LinearEdgeModel {
    pub fn edge_count(&self) -> usize {
        self.coefficients.len()
    }

    /// Additive per-edge correction moving an observation from `source` to
    /// `target`; independent of the edge value.
    pub fn adjustment(&self, source: &SiteDescriptor, target: &SiteDescriptor) -> Vec<f64> {
        let xs = source.design_row();
        let xt = target.design_row();
        self.coefficients
            .iter()
            .map(|b| (1..N_COEFFICIENTS).map(|j| b[j] * (xt[j] - xs[j])).sum())
            .collect()
    }

    /// Adjusted values before clamping and rounding.
    pub fn harmonize_raw(&self, v: &EdgeVector, source: &SiteDescriptor, target: &SiteDescriptor) -> Result<Vec<f64>> {
        if v.len() != self.edge_count() {
            return Err(Error::DimensionMismatch {
                expected: self.edge_count(),
                actual: v.len(),
            });
        }
        Ok(v
            .values()
            .iter()
            .zip(self.adjustment(source, target))
            .map(|(s, a)| s + a)
            .collect())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.coefficients.iter().zip(&self.residual_variance).enumerate().map(|(e, (b, v))| {
            format!("{e},{:e},{:e},{:e},{:e},{:e}", b[0], b[1], b[2], b[3], v)
        });
        write_lines(path, "edge_index,beta0,beta1,beta2,beta3,residual_variance", rows)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut coefficients = Vec::new();
        let mut residual_variance = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(parse_err(i + 1, format!("expected 6 fields, found {}", fields.len())));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(i + 1, format!("invalid edge index '{}'", fields[0])))?;
            if idx != coefficients.len() {
                return Err(parse_err(i + 1, format!("edge index {idx} out of order")));
            }
            let mut nums = [0.0; 5];
            for (k, slot) in nums.iter_mut().enumerate() {
                let v: f64 = fields[k + 1]
                    .parse()
                    .map_err(|_| parse_err(i + 1, format!("invalid number '{}'", fields[k + 1])))?;
                if !v.is_finite() {
                    return Err(parse_err(i + 1, "non-finite value".into()));
                }
                *slot = v;
            }
            coefficients.push([nums[0], nums[1], nums[2], nums[3]]);
            residual_variance.push(nums[4]);
        }
        let n_nodes = node_count_for_edges(coefficients.len()).ok_or_else(|| {
            parse_err(0, format!("{} edges is not a triangular number", coefficients.len()))
        })?;
        Ok(Self {
            n_nodes,
            coefficients,
            residual_variance,
        })
    }
}

/// Moves `v` from `source` to `target`, then clamps at zero and rounds.
pub fn lr_harmonize(
    v: &EdgeVector,
    source: &SiteDescriptor,
    target: &SiteDescriptor,
    model: &LinearEdgeModel,
) -> Result<EdgeVector> {
    let raw = model.harmonize_raw(v, source, target)?;
    EdgeVector::new(v.n(), raw.into_iter().map(quantize_count).collect())
}
