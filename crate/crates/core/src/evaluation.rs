//! Harmonization quality metrics: edge accuracy, topology preservation,
//! subject identifiability, bounds and the normalized comparison table.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::augmentation::mean_and_std;
use crate::error::{Error, Result};
use crate::io::write_lines;
use crate::linalg::{symmetric_eigenvalues, SquareMatrix};
use crate::matrix::{vectorize_upper, ConnectivityMatrix};
use crate::metrics::all_nodal_profiles;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_and_std(xs);
        Self { mean, std }
    }

    fn scalar(v: f64) -> Self {
        Self { mean: v, std: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportMetric {
    MAE,
    BMAE,
    PC,
    NS,
    CC,
    CLC,
    LE,
    EV,
    FA,
    ID,
}

impl ReportMetric {
    pub const ALL: [ReportMetric; 10] = [
        ReportMetric::MAE,
        ReportMetric::BMAE,
        ReportMetric::PC,
        ReportMetric::NS,
        ReportMetric::CC,
        ReportMetric::CLC,
        ReportMetric::LE,
        ReportMetric::EV,
        ReportMetric::FA,
        ReportMetric::ID,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportMetric::MAE => "MAE",
            ReportMetric::BMAE => "BMAE",
            ReportMetric::PC => "PC",
            ReportMetric::NS => "NS",
            ReportMetric::CC => "CC",
            ReportMetric::CLC => "CLC",
            ReportMetric::LE => "LE",
            ReportMetric::EV => "EV",
            ReportMetric::FA => "FA",
            ReportMetric::ID => "ID",
        }
    }

    /// Error-type metrics where lower is better.
    pub fn is_inverted(self) -> bool {
        !matches!(self, ReportMetric::PC | ReportMetric::FA | ReportMetric::ID)
    }
}

impl fmt::Display for ReportMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReportMetric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown report metric '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeMetrics {
    pub mae: MeanStd,
    pub bmae: MeanStd,
    pub pc: MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyMetrics {
    pub ns: MeanStd,
    pub cc: MeanStd,
    pub clc: MeanStd,
    pub le: MeanStd,
    pub ev: MeanStd,
}

fn check_aligned(pred: &[ConnectivityMatrix], target: &[ConnectivityMatrix]) -> Result<()> {
    if pred.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: pred.len(),
        });
    }
    let n = target[0].n();
    if let Some(bad) = pred.iter().chain(target).find(|m| m.n() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: bad.n(),
        });
    }
    Ok(())
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Pearson correlation; 0 when either vector is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        log::warn!("Pearson correlation of a constant vector; reporting 0");
        return 0.0;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// Per-subject `(MAE, BMAE, PC)` on upper-triangle vectors.
pub fn subject_edge_metrics(pred: &ConnectivityMatrix, target: &ConnectivityMatrix) -> (f64, f64, f64) {
    let p = vectorize_upper(pred);
    let t = vectorize_upper(target);
    let (p, t) = (p.values(), t.values());
    let mae = mean_abs_diff(p, t);
    let flips = p.iter().zip(t).filter(|(x, y)| (**x > 0.0) != (**y > 0.0)).count();
    let bmae = if p.is_empty() { 0.0 } else { flips as f64 / p.len() as f64 };
    (mae, bmae, pearson(p, t))
}

pub fn edge_metrics(pred: &[ConnectivityMatrix], target: &[ConnectivityMatrix]) -> Result<EdgeMetrics> {
    check_aligned(pred, target)?;
    let per: Vec<(f64, f64, f64)> = pred
        .par_iter()
        .zip(target.par_iter())
        .map(|(p, t)| subject_edge_metrics(p, t))
        .collect();
    let col = |k: usize| -> Vec<f64> { per.iter().map(|r| [r.0, r.1, r.2][k]).collect() };
    Ok(EdgeMetrics {
        mae: MeanStd::of(&col(0)),
        bmae: MeanStd::of(&col(1)),
        pc: MeanStd::of(&col(2)),
    })
}

fn sorted_spectrum(m: &ConnectivityMatrix) -> Result<Vec<f64>> {
    symmetric_eigenvalues(&SquareMatrix::from(m))
}

/// Per-subject `[NS, CC, CLC, LE, EV]` absolute errors.
pub fn subject_topology_errors(pred: &ConnectivityMatrix, target: &ConnectivityMatrix) -> Result<[f64; 5]> {
    let pp = all_nodal_profiles(pred);
    let tp = all_nodal_profiles(target);
    let mut out = [0.0; 5];
    for k in 0..4 {
        out[k] = mean_abs_diff(&pp[k].values, &tp[k].values);
    }
    out[4] = mean_abs_diff(&sorted_spectrum(pred)?, &sorted_spectrum(target)?);
    Ok(out)
}

pub fn topology_metrics(pred: &[ConnectivityMatrix], target: &[ConnectivityMatrix]) -> Result<TopologyMetrics> {
    check_aligned(pred, target)?;
    let per: Vec<[f64; 5]> = pred
        .par_iter()
        .zip(target.par_iter())
        .map(|(p, t)| subject_topology_errors(p, t))
        .collect::<Result<_>>()?;
    let col = |k: usize| MeanStd::of(&per.iter().map(|r| r[k]).collect::<Vec<_>>());
    Ok(TopologyMetrics {
        ns: col(0),
        cc: col(1),
        clc: col(2),
        le: col(3),
        ev: col(4),
    })
}

/// `P[i][j]` = MAE between harmonized subject `i` and target subject `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDistanceMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl PairwiseDistanceMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: values.len(),
            });
        }
        Ok(Self { n, values })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

pub fn pairwise_distances(pred: &[ConnectivityMatrix], target: &[ConnectivityMatrix]) -> Result<PairwiseDistanceMatrix> {
    check_aligned(pred, target)?;
    let pv: Vec<Vec<f64>> = pred.iter().map(|m| vectorize_upper(m).into_values()).collect();
    let tv: Vec<Vec<f64>> = target.iter().map(|m| vectorize_upper(m).into_values()).collect();
    let values: Vec<f64> = pv
        .par_iter()
        .flat_map_iter(|p| tv.iter().map(move |t| mean_abs_diff(p, t)))
        .collect();
    PairwiseDistanceMatrix::new(pred.len(), values)
}

/// Fraction of rows whose diagonal entry is the strict row minimum.
pub fn fingerprint_accuracy(p: &PairwiseDistanceMatrix) -> f64 {
    if p.n == 0 {
        return 0.0;
    }
    let hits = (0..p.n)
        .filter(|&i| {
            let d = p.get(i, i);
            (0..p.n).all(|j| j == i || p.get(i, j) > d)
        })
        .count();
    hits as f64 / p.n as f64
}

/// Mean off-diagonal distance minus mean diagonal distance.
pub fn identifiability_difference(p: &PairwiseDistanceMatrix) -> f64 {
    let n = p.n;
    if n == 0 {
        return 0.0;
    }
    let diag: f64 = (0..n).map(|i| p.get(i, i)).sum::<f64>() / n as f64;
    if n == 1 {
        return -diag;
    }
    let total: f64 = p.values.iter().sum();
    let off = (total - diag * n as f64) / (n * (n - 1)) as f64;
    off - diag
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub label: String,
    pub edge: EdgeMetrics,
    pub topology: TopologyMetrics,
    pub fa: f64,
    pub id: f64,
}

impl MetricReport {
    pub fn get(&self, metric: ReportMetric) -> MeanStd {
        match metric {
            ReportMetric::MAE => self.edge.mae,
            ReportMetric::BMAE => self.edge.bmae,
            ReportMetric::PC => self.edge.pc,
            ReportMetric::NS => self.topology.ns,
            ReportMetric::CC => self.topology.cc,
            ReportMetric::CLC => self.topology.clc,
            ReportMetric::LE => self.topology.le,
            ReportMetric::EV => self.topology.ev,
            ReportMetric::FA => MeanStd::scalar(self.fa),
            ReportMetric::ID => MeanStd::scalar(self.id),
        }
    }
}

/// Full metric battery of `pred` against aligned `target`.
pub fn evaluate(label: impl Into<String>, pred: &[ConnectivityMatrix], target: &[ConnectivityMatrix]) -> Result<MetricReport> {
    let edge = edge_metrics(pred, target)?;
    let topology = topology_metrics(pred, target)?;
    let p = pairwise_distances(pred, target)?;
    Ok(MetricReport {
        label: label.into(),
        edge,
        topology,
        fa: fingerprint_accuracy(&p),
        id: identifiability_difference(&p),
    })
}

pub const LOWER_BOUND_LABEL: &str = "lower_bound";
pub const UPPER_BOUND_LABEL: &str = "upper_bound";

/// Lower bound: unharmonized lowest-site scans against the highest site.
/// Upper bound: highest-site test scans against their retest scans.
pub fn compute_bounds(
    lowest_raw: &[ConnectivityMatrix],
    highest: &[ConnectivityMatrix],
    retest: Option<(&[ConnectivityMatrix], &[ConnectivityMatrix])>,
) -> Result<(MetricReport, Option<MetricReport>)> {
    let lower = evaluate(LOWER_BOUND_LABEL, lowest_raw, highest)?;
    let upper = match retest {
        Some((test, re)) => Some(evaluate(UPPER_BOUND_LABEL, test, re)?),
        None => None,
    };
    Ok((lower, upper))
}

pub fn write_report_csv(reports: &[MetricReport], path: impl AsRef<Path>) -> Result<()> {
    let mut header = vec!["method".to_string()];
    for m in ReportMetric::ALL {
        match m {
            ReportMetric::FA | ReportMetric::ID => header.push(m.name().to_string()),
            _ => {
                header.push(format!("{m}_mean"));
                header.push(format!("{m}_std"));
            }
        }
    }
    let rows = reports.iter().map(|r| {
        let mut fields = vec![r.label.clone()];
        for m in ReportMetric::ALL {
            let v = r.get(m);
            fields.push(v.mean.to_string());
            if !matches!(m, ReportMetric::FA | ReportMetric::ID) {
                fields.push(v.std.to_string());
            }
        }
        fields.join(",")
    });
    write_lines(path, &header.join(","), rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedEntry {
    pub metric: ReportMetric,
    pub method: String,
    pub value: f64,
    pub degenerate: bool,
}

/// Min-max normalizes each metric's mean across rows; error-type metrics
/// are inverted so that 1 is always best. A metric with no spread gets 0.5
/// everywhere and is flagged degenerate.
pub fn normalized_report(reports: &[MetricReport]) -> Result<Vec<NormalizedEntry>> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "normalization needs at least 2 rows, got {}",
            reports.len()
        )));
    }
    let mut out = Vec::with_capacity(reports.len() * ReportMetric::ALL.len());
    for metric in ReportMetric::ALL {
        let vals: Vec<f64> = reports.iter().map(|r| r.get(metric).mean).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let degenerate = hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0);
        if degenerate {
            log::warn!("metric {metric} has no spread across methods; emitting 0.5");
        }
        for (r, v) in reports.iter().zip(&vals) {
            let value = if degenerate {
                0.5
            } else {
                let x = (v - lo) / (hi - lo);
                if metric.is_inverted() {
                    1.0 - x
                } else {
                    x
                }
            };
            out.push(NormalizedEntry {
                metric,
                method: r.label.clone(),
                value,
                degenerate,
            });
        }
    }
    Ok(out)
}

pub fn write_normalized_csv(entries: &[NormalizedEntry], path: impl AsRef<Path>) -> Result<()> {
    let rows = entries
        .iter()
        .map(|e| format!("{},{},{},{}", e.metric, e.method, e.value, e.degenerate));
    write_lines(path, "metric,method,value,degenerate", rows)
}
