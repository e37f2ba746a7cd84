//! Tape of recorded operations and the reverse sweep.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order; `backward` walks it once from the loss to the front.

use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::gemm::gemm;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch-norm statistics source.
pub enum BatchNormMode<'a> {
    /// Normalize with batch statistics and fold them into the running
    /// estimates (`running ← (1 − momentum)·running + momentum·batch`).
    Train {
        running_mean: &'a mut Tensor,
        running_var: &'a mut Tensor,
        momentum: f64,
    },
    /// Normalize with the running estimates.
    Eval {
        running_mean: &'a Tensor,
        running_var: &'a Tensor,
    },
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    AddBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Lincomb { a: Var, b: Var, ca: f64, cb: f64 },
    Relu { x: Var },
    Norm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, kind: NormKind },
    Concat { a: Var, b: Var, fa: usize, fb: usize },
    GradReversal { x: Var, lambda: f64 },
    AdaIn { x: Var, scale: Var, shift: Var, centered: Vec<f64>, q: Vec<f64>, sigma: Vec<f64> },
    LeftMatMul { l: Arc<Tensor>, x: Var },
    MeanPool { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Symmetrize { x: Var },
    UpperTriangle { x: Var },
    Reshape { x: Var },
    WeightedSum { x: Var, w: Tensor },
    WeightedMae { pred: Var, target: Tensor, weights: Vec<f64> },
    SoftmaxCe { logits: Var, probs: Vec<f64>, labels: Tensor },
    SigmoidBce { logits: Var, targets: Tensor },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NormKind {
    BatchTrain,
    BatchEval,
    Layer,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single forward/backward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: Vec<(Var, ParamId)>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, &value)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf holding a copy of a trainable parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.params.push((v, id));
        v
    }

    /// `a[.., K] · b[K, N]`; leading axes of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            return Err(shape_err("matmul", &sb, &sa));
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).len() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        self.push_checked("matmul", Tensor::new(&shape, out)?, Op::MatMul { a, b }, &[a, b])
    }

    /// Adds `b[F]` to every row of `x[.., F]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let f = self.value(x).last_dim();
        if self.shape(b) != [f] {
            return Err(shape_err("add_bias", &[f], self.shape(b)));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(f) {
            for (o, bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        self.push_checked("add_bias", out, Op::AddBias { x, b }, &[x, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push_checked("add", out, Op::Add { a, b }, &[a, b])
    }

    /// `ca·a + cb·b`.
    pub fn lincomb(&mut self, a: Var, b: Var, ca: f64, cb: f64) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("lincomb", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| ca * x + cb * y)
            .collect();
        let out = Tensor::new(self.shape(a), data)?;
        self.push_checked("lincomb", out, Op::Lincomb { a, b, ca, cb }, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.lincomb(a, a, c, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&t| t.max(0.0)).collect())?;
        self.push_checked("relu", out, Op::Relu { x }, &[x])
    }

    /// Per-feature batch normalization of `x[B, F]` with affine `gamma`, `beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: BatchNormMode<'_>, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(shape_err("batch_norm", &[0, 0], &shape));
        }
        let (b, f) = (shape[0], shape[1]);
        if self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return Err(shape_err("batch_norm", &[f], self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let (mean, var, kind) = match mode {
            BatchNormMode::Train {
                running_mean,
                running_var,
                momentum,
            } => {
                if running_mean.shape() != [f] || running_var.shape() != [f] {
                    return Err(shape_err("batch_norm", &[f], running_mean.shape()));
                }
                let mut mean = vec![0.0; f];
                let mut var = vec![0.0; f];
                for row in xv.chunks(f) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= b as f64;
                }
                for row in xv.chunks(f) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                for s in &mut var {
                    *s /= b as f64;
                }
                let unbias = if b > 1 { b as f64 / (b - 1) as f64 } else { 1.0 };
                for k in 0..f {
                    let rm = &mut running_mean.data_mut()[k];
                    *rm = (1.0 - momentum) * *rm + momentum * mean[k];
                    let rv = &mut running_var.data_mut()[k];
                    *rv = (1.0 - momentum) * *rv + momentum * var[k] * unbias;
                }
                (mean, var, NormKind::BatchTrain)
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.shape() != [f] || running_var.shape() != [f] {
                    return Err(shape_err("batch_norm", &[f], running_mean.shape()));
                }
                (running_mean.data().to_vec(), running_var.data().to_vec(), NormKind::BatchEval)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; b * f];
        for (i, row) in xv.chunks(f).enumerate() {
            for k in 0..f {
                xhat[i * f + k] = (row[k] - mean[k]) * inv_std[k];
            }
        }
        let out = self.affine_out(&xhat, f, gamma, beta, &shape)?;
        let op = Op::Norm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            kind,
        };
        self.push_checked("batch_norm", out, op, &[x, gamma, beta])
    }

    /// Normalizes each row of `x[.., F]` over its features, then applies
    /// the affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let f = self.value(x).last_dim();
        if self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return Err(shape_err("layer_norm", &[f], self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let rows = xv.len() / f.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for (r, row) in xv.chunks(f).enumerate() {
            let mean = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (k, v) in row.iter().enumerate() {
                xhat[r * f + k] = (v - mean) * is;
            }
        }
        let out = self.affine_out(&xhat, f, gamma, beta, &shape)?;
        let op = Op::Norm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            kind: NormKind::Layer,
        };
        self.push_checked("layer_norm", out, op, &[x, gamma, beta])
    }

    fn affine_out(&self, xhat: &[f64], f: usize, gamma: Var, beta: Var, shape: &[usize]) -> Result<Tensor> {
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat.iter().enumerate().map(|(i, v)| g[i % f] * v + b[i % f]).collect();
        Tensor::new(shape, data)
    }

    /// Concatenates along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat", &sa, &sb));
        }
        let (fa, fb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let rows = va.len() / fa.max(1);
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for r in 0..rows {
            data.extend_from_slice(&va[r * fa..(r + 1) * fa]);
            data.extend_from_slice(&vb[r * fb..(r + 1) * fb]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = fa + fb;
        self.push_checked("concat", Tensor::new(&shape, data)?, Op::Concat { a, b, fa, fb }, &[a, b])
    }

    /// Identity forward; multiplies the incoming gradient by `−lambda`.
    pub fn grad_reversal(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("gradient reversal needs lambda >= 0, got {lambda}")));
        }
        let out = self.value(x).clone();
        self.push_checked("grad_reversal", out, Op::GradReversal { x, lambda }, &[x])
    }

    /// Adaptive instance normalization of `x[B, N, K]`: each `(b, k)`
    /// column is standardized over the `N` axis with its population
    /// deviation, then scaled by `scale[b, k]` and shifted by `shift[b, k]`.
    pub fn adain(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(shape_err("adain", &[0, 0, 0], &sx));
        }
        let (bn, n, k) = (sx[0], sx[1], sx[2]);
        if self.shape(scale) != [bn, k] || self.shape(shift) != [bn, k] {
            return Err(shape_err("adain", &[bn, k], self.shape(scale)));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("adain eps must be > 0, got {eps}")));
        }
        let xv = self.value(x).data();
        let (sv, tv) = (self.value(scale).data(), self.value(shift).data());
        let mut centered = vec![0.0; xv.len()];
        let mut q = vec![0.0; bn * k];
        let mut sigma = vec![0.0; bn * k];
        let mut out = vec![0.0; xv.len()];
        for b in 0..bn {
            for c in 0..k {
                let idx = |i: usize| (b * n + i) * k + c;
                let mean = (0..n).map(|i| xv[idx(i)]).sum::<f64>() / n as f64;
                let mut ss = 0.0;
                for i in 0..n {
                    let d = xv[idx(i)] - mean;
                    centered[idx(i)] = d;
                    ss += d * d;
                }
                let s = (ss / n as f64).sqrt();
                sigma[b * k + c] = s;
                q[b * k + c] = s + eps;
                for i in 0..n {
                    out[idx(i)] = sv[b * k + c] * centered[idx(i)] / (s + eps) + tv[b * k + c];
                }
            }
        }
        let op = Op::AdaIn {
            x,
            scale,
            shift,
            centered,
            q,
            sigma,
        };
        self.push_checked("adain", Tensor::new(&sx, out)?, op, &[x, scale, shift])
    }

    /// `L · x_b` for every sample of `x[B, N, F]`; `l` is `[N, N]` (shared)
    /// or `[B, N, N]` (per sample) and is treated as a constant.
    pub fn left_matmul_const(&mut self, l: &Arc<Tensor>, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(shape_err("left_matmul", &[0, 0, 0], &sx));
        }
        let (bn, n, f) = (sx[0], sx[1], sx[2]);
        let per_sample = match l.shape() {
            [a, c] if *a == n && *c == n => false,
            [b, a, c] if *b == bn && *a == n && *c == n => true,
            other => return Err(shape_err("left_matmul", &[bn, n, n], other)),
        };
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for b in 0..bn {
            let lb = if per_sample { &l.data()[b * n * n..(b + 1) * n * n] } else { l.data() };
            gemm(n, n, f, lb, false, &xv[b * n * f..(b + 1) * n * f], false, &mut out[b * n * f..(b + 1) * n * f], 0.0);
        }
        let op = Op::LeftMatMul { l: Arc::clone(l), x };
        self.push_checked("left_matmul", Tensor::new(&sx, out)?, op, &[x])
    }

    fn pool_dims(&self, x: Var, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape(x) {
            [b, n, k] if *n > 0 => Ok((*b, *n, *k)),
            other => Err(shape_err(op, &[0, 1, 0], other)),
        }
    }

    /// Mean over the node axis of `x[B, N, K]`.
    pub fn mean_pool_nodes(&mut self, x: Var) -> Result<Var> {
        let (bn, n, k) = self.pool_dims(x, "mean_pool")?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; bn * k];
        for b in 0..bn {
            for i in 0..n {
                for c in 0..k {
                    out[b * k + c] += xv[(b * n + i) * k + c] / n as f64;
                }
            }
        }
        self.push_checked("mean_pool", Tensor::new(&[bn, k], out)?, Op::MeanPool { x }, &[x])
    }

    /// Max over the node axis of `x[B, N, K]`; gradient goes to the first
    /// maximizing node.
    pub fn max_pool_nodes(&mut self, x: Var) -> Result<Var> {
        let (bn, n, k) = self.pool_dims(x, "max_pool")?;
        let xv = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; bn * k];
        let mut argmax = vec![0usize; bn * k];
        for b in 0..bn {
            for i in 0..n {
                for c in 0..k {
                    let v = xv[(b * n + i) * k + c];
                    if v > out[b * k + c] {
                        out[b * k + c] = v;
                        argmax[b * k + c] = i;
                    }
                }
            }
        }
        self.push_checked("max_pool", Tensor::new(&[bn, k], out)?, Op::MaxPool { x, argmax }, &[x])
    }

    fn square_batch(&self, x: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(x) {
            [b, n, m] if n == m => Ok((*b, *n)),
            other => Err(shape_err(op, &[0, 0, 0], other)),
        }
    }

    /// `(X + Xᵀ)/2` per sample of `x[B, N, N]`.
    pub fn symmetrize(&mut self, x: Var) -> Result<Var> {
        let (bn, n) = self.square_batch(x, "symmetrize")?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for b in 0..bn {
            let o = b * n * n;
            for i in 0..n {
                for j in 0..n {
                    out[o + i * n + j] = 0.5 * (xv[o + i * n + j] + xv[o + j * n + i]);
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push_checked("symmetrize", Tensor::new(&shape, out)?, Op::Symmetrize { x }, &[x])
    }

    /// Row-major strict upper triangle of each sample: `[B, N, N] → [B, D]`.
    pub fn upper_triangle(&mut self, x: Var) -> Result<Var> {
        let (bn, n) = self.square_batch(x, "upper_triangle")?;
        let d = n * n.saturating_sub(1) / 2;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(bn * d);
        for b in 0..bn {
            for i in 0..n {
                for j in (i + 1)..n {
                    out.push(xv[b * n * n + i * n + j]);
                }
            }
        }
        self.push_checked("upper_triangle", Tensor::new(&[bn, d], out)?, Op::UpperTriangle { x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push_checked("reshape", out, Op::Reshape { x }, &[x])
    }

    /// `Σ x·w` with constant `w`; a convenient scalar probe.
    pub fn weighted_sum(&mut self, x: Var, w: &Tensor) -> Result<Var> {
        if self.shape(x) != w.shape() {
            return Err(shape_err("weighted_sum", self.shape(x), w.shape()));
        }
        let s: f64 = self.value(x).data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        self.push_checked("weighted_sum", Tensor::scalar(s), Op::WeightedSum { x, w: w.clone() }, &[x])
    }

    /// `mean(w ⊙ |pred − target|)` with `w = edge_weight` where `target > 0`
    /// and 1 elsewhere; divides by the element count.
    pub fn weighted_mae(&mut self, pred: Var, target: &Tensor, edge_weight: f64) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err("weighted_mae", target.shape(), self.shape(pred)));
        }
        if !(edge_weight >= 1.0) {
            return Err(Error::InvalidArgument(format!("edge weight must be >= 1, got {edge_weight}")));
        }
        let weights: Vec<f64> = target.data().iter().map(|&t| if t > 0.0 { edge_weight } else { 1.0 }).collect();
        let count = target.len().max(1) as f64;
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .zip(&weights)
            .map(|((p, t), w)| w * (p - t).abs())
            .sum::<f64>()
            / count;
        let op = Op::WeightedMae {
            pred,
            target: target.clone(),
            weights,
        };
        self.push_checked("weighted_mae", Tensor::scalar(loss), op, &[pred])
    }

    /// Mean over rows of `−Σ_c y_c log softmax(z)_c` for `logits[B, C]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &Tensor) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || labels.shape() != s.as_slice() {
            return Err(shape_err("softmax_cross_entropy", &s, labels.shape()));
        }
        let (b, c) = (s[0], s[1]);
        let zv = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for r in 0..b {
            let row = &zv[r * c..(r + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            for k in 0..c {
                probs[r * c + k] = (row[k] - lse).exp();
                let y = labels.data()[r * c + k];
                if y != 0.0 {
                    loss -= y * (row[k] - lse);
                }
            }
        }
        loss /= b.max(1) as f64;
        let op = Op::SoftmaxCe {
            logits,
            probs,
            labels: labels.clone(),
        };
        self.push_checked("softmax_cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        if self.shape(logits) != targets.shape() {
            return Err(shape_err("sigmoid_bce", targets.shape(), self.shape(logits)));
        }
        let count = targets.len().max(1) as f64;
        let loss = self
            .value(logits)
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / count;
        let op = Op::SigmoidBce {
            logits,
            targets: targets.clone(),
        };
        self.push_checked("sigmoid_bce", Tensor::scalar(loss), op, &[logits])
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", &[], self.shape(loss)));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].clone() else {
                continue;
            };
            for (target, contribution) in self.input_grads(i, &g)? {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                match &mut self.grads[target.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients per parameter id, summed over every leaf that copied it.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = (0..store.len()).map(|_| None).collect();
        for &(v, id) in &self.params {
            if let Some(g) = self.grad(v) {
                match &mut out[id.index()] {
                    Some(acc) => acc.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }

    fn input_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let gd = g.data();
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.shape(v), data);
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.len() / k.max(1);
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, gd, false, bv.data(), true, &mut da, 0.0);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, gd, false, &mut db, 0.0);
                vec![(*a, like(*a, da)?), (*b, like(*b, db)?)]
            }
            Op::AddBias { x, b } => {
                let f = self.value(*b).len();
                let mut db = vec![0.0; f];
                for row in gd.chunks(f) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![(*x, g.clone()), (*b, like(*b, db)?)]
            }
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Lincomb { a, b, ca, cb } => vec![
                (*a, like(*a, gd.iter().map(|v| ca * v).collect())?),
                (*b, like(*b, gd.iter().map(|v| cb * v).collect())?),
            ],
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                let d = gd.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                vec![(*x, like(*x, d)?)]
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                kind,
            } => {
                let f = self.value(*gamma).len();
                let gam = self.value(*gamma).data();
                let rows = gd.len() / f.max(1);
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for r in 0..rows {
                    for k in 0..f {
                        dgamma[k] += gd[r * f + k] * xhat[r * f + k];
                        dbeta[k] += gd[r * f + k];
                    }
                }
                let dxhat: Vec<f64> = gd.iter().enumerate().map(|(i, v)| v * gam[i % f]).collect();
                let mut dx = vec![0.0; gd.len()];
                match kind {
                    NormKind::BatchTrain => {
                        let bsz = rows as f64;
                        for k in 0..f {
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for r in 0..rows {
                                s1 += dxhat[r * f + k];
                                s2 += dxhat[r * f + k] * xhat[r * f + k];
                            }
                            for r in 0..rows {
                                let idx = r * f + k;
                                dx[idx] = inv_std[k] / bsz * (bsz * dxhat[idx] - s1 - xhat[idx] * s2);
                            }
                        }
                    }
                    NormKind::BatchEval => {
                        for (i, d) in dx.iter_mut().enumerate() {
                            *d = dxhat[i] * inv_std[i % f];
                        }
                    }
                    NormKind::Layer => {
                        let ff = f as f64;
                        for r in 0..rows {
                            let sl = r * f..(r + 1) * f;
                            let s1: f64 = dxhat[sl.clone()].iter().sum();
                            let s2: f64 = dxhat[sl.clone()].iter().zip(&xhat[sl]).map(|(a, b)| a * b).sum();
                            for k in 0..f {
                                let idx = r * f + k;
                                dx[idx] = inv_std[r] / ff * (ff * dxhat[idx] - s1 - xhat[idx] * s2);
                            }
                        }
                    }
                }
                vec![(*x, like(*x, dx)?), (*gamma, like(*gamma, dgamma)?), (*beta, like(*beta, dbeta)?)]
            }
            Op::Concat { a, b, fa, fb } => {
                let rows = gd.len() / (fa + fb).max(1);
                let mut da = Vec::with_capacity(rows * fa);
                let mut db = Vec::with_capacity(rows * fb);
                for row in gd.chunks(fa + fb) {
                    da.extend_from_slice(&row[..*fa]);
                    db.extend_from_slice(&row[*fa..]);
                }
                vec![(*a, like(*a, da)?), (*b, like(*b, db)?)]
            }
            Op::GradReversal { x, lambda } => vec![(*x, like(*x, gd.iter().map(|v| -lambda * v).collect())?)],
            Op::AdaIn {
                x,
                scale,
                shift,
                centered,
                q,
                sigma,
            } => {
                let s = self.shape(*x);
                let (bn, n, k) = (s[0], s[1], s[2]);
                let sv = self.value(*scale).data();
                let mut dx = vec![0.0; gd.len()];
                let mut dscale = vec![0.0; bn * k];
                let mut dshift = vec![0.0; bn * k];
                let mut gc = vec![0.0; n];
                for b in 0..bn {
                    for c in 0..k {
                        let j = b * k + c;
                        let idx = |i: usize| (b * n + i) * k + c;
                        let (qj, sj) = (q[j], sigma[j]);
                        let mut gsum_c = 0.0;
                        for i in 0..n {
                            dshift[j] += gd[idx(i)];
                            dscale[j] += gd[idx(i)] * centered[idx(i)] / qj;
                            gsum_c += gd[idx(i)] * centered[idx(i)];
                        }
                        for (i, gci) in gc.iter_mut().enumerate() {
                            let mut v = sv[j] * gd[idx(i)] / qj;
                            if sj > 0.0 {
                                v -= sv[j] * centered[idx(i)] * gsum_c / (qj * qj * n as f64 * sj);
                            }
                            *gci = v;
                        }
                        let mean = gc.iter().sum::<f64>() / n as f64;
                        for i in 0..n {
                            dx[idx(i)] = gc[i] - mean;
                        }
                    }
                }
                vec![
                    (*x, like(*x, dx)?),
                    (*scale, like(*scale, dscale)?),
                    (*shift, like(*shift, dshift)?),
                ]
            }
            Op::LeftMatMul { l, x } => {
                let s = self.shape(*x);
                let (bn, n, f) = (s[0], s[1], s[2]);
                let per_sample = l.shape().len() == 3;
                let mut dx = vec![0.0; gd.len()];
                for b in 0..bn {
                    let lb = if per_sample { &l.data()[b * n * n..(b + 1) * n * n] } else { l.data() };
                    let r = b * n * f..(b + 1) * n * f;
                    gemm(n, n, f, lb, true, &gd[r.clone()], false, &mut dx[r], 0.0);
                }
                vec![(*x, like(*x, dx)?)]
            }
            Op::MeanPool { x } => {
                let s = self.shape(*x);
                let (bn, n, k) = (s[0], s[1], s[2]);
                let mut dx = vec![0.0; bn * n * k];
                for b in 0..bn {
                    for i in 0..n {
                        for c in 0..k {
                            dx[(b * n + i) * k + c] = gd[b * k + c] / n as f64;
                        }
                    }
                }
                vec![(*x, like(*x, dx)?)]
            }
            Op::MaxPool { x, argmax } => {
                let s = self.shape(*x);
                let (bn, n, k) = (s[0], s[1], s[2]);
                let mut dx = vec![0.0; bn * n * k];
                for b in 0..bn {
                    for c in 0..k {
                        dx[(b * n + argmax[b * k + c]) * k + c] += gd[b * k + c];
                    }
                }
                vec![(*x, like(*x, dx)?)]
            }
            Op::Symmetrize { x } => {
                let s = self.shape(*x);
                let (bn, n) = (s[0], s[1]);
                let mut dx = vec![0.0; gd.len()];
                for b in 0..bn {
                    let o = b * n * n;
                    for i in 0..n {
                        for j in 0..n {
                            dx[o + i * n + j] = 0.5 * (gd[o + i * n + j] + gd[o + j * n + i]);
                        }
                    }
                }
                vec![(*x, like(*x, dx)?)]
            }
            Op::UpperTriangle { x } => {
                let s = self.shape(*x);
                let (bn, n) = (s[0], s[1]);
                let mut dx = vec![0.0; bn * n * n];
                let mut e = 0;
                for b in 0..bn {
                    for i in 0..n {
                        for j in (i + 1)..n {
                            dx[b * n * n + i * n + j] = gd[e];
                            e += 1;
                        }
                    }
                }
                vec![(*x, like(*x, dx)?)]
            }
            Op::Reshape { x } => vec![(*x, like(*x, gd.to_vec())?)],
            Op::WeightedSum { x, w } => {
                let s = gd[0];
                vec![(*x, like(*x, w.data().iter().map(|v| s * v).collect())?)]
            }
            Op::WeightedMae { pred, target, weights } => {
                let s = gd[0] / target.len().max(1) as f64;
                let pv = self.value(*pred).data();
                let d = pv
                    .iter()
                    .zip(target.data())
                    .zip(weights)
                    .map(|((p, t), w)| s * w * sign(p - t))
                    .collect();
                vec![(*pred, like(*pred, d)?)]
            }
            Op::SoftmaxCe { logits, probs, labels } => {
                let c = labels.last_dim();
                let b = labels.len() / c.max(1);
                let s = gd[0] / b.max(1) as f64;
                let mut d = vec![0.0; probs.len()];
                for r in 0..b {
                    let ysum: f64 = labels.data()[r * c..(r + 1) * c].iter().sum();
                    for k in 0..c {
                        d[r * c + k] = s * (probs[r * c + k] * ysum - labels.data()[r * c + k]);
                    }
                }
                vec![(*logits, like(*logits, d)?)]
            }
            Op::SigmoidBce { logits, targets } => {
                let s = gd[0] / targets.len().max(1) as f64;
                let zv = self.value(*logits).data();
                let d = zv
                    .iter()
                    .zip(targets.data())
                    .map(|(&z, &t)| s * (sigmoid(z) - t))
                    .collect();
                vec![(*logits, like(*logits, d)?)]
            }
        };
        Ok(out)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
