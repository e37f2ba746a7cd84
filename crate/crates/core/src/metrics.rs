//! Weighted brain-network nodal metrics.
//!
//! Conventions follow the weighted definitions of the brain connectivity
//! toolbox lineage: edge length is `1 / weight`, clustering is the
//! max-normalized geometric-mean (Onnela) form, and local efficiency uses
//! cube-root weighted efficiency on each node's neighborhood subgraph.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::matrix::ConnectivityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodalMetric {
    /// Nodal strength.
    NS,
    /// Closeness centrality.
    CC,
    /// Clustering coefficient.
    CLC,
    /// Local efficiency.
    LE,
}

impl NodalMetric {
    pub const ALL: [NodalMetric; 4] = [NodalMetric::NS, NodalMetric::CC, NodalMetric::CLC, NodalMetric::LE];

    pub fn name(self) -> &'static str {
        match self {
            NodalMetric::NS => "NS",
            NodalMetric::CC => "CC",
            NodalMetric::CLC => "CLC",
            NodalMetric::LE => "LE",
        }
    }

    pub fn compute(self, m: &ConnectivityMatrix) -> NodalProfile {
        match self {
            NodalMetric::NS => nodal_strength(m),
            NodalMetric::CC => closeness_centrality(m),
            NodalMetric::CLC => clustering_coefficient(m),
            NodalMetric::LE => local_efficiency(m),
        }
    }
}

impl fmt::Display for NodalMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NodalMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        NodalMetric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown nodal metric '{s}'")))
    }
}

/// Per-node values of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalProfile {
    pub metric: NodalMetric,
    pub values: Vec<f64>,
}

impl NodalProfile {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// All-pairs shortest path lengths; `f64::INFINITY` marks unreachable pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

pub fn nodal_strength(m: &ConnectivityMatrix) -> NodalProfile {
    NodalProfile {
        metric: NodalMetric::NS,
        values: (0..m.n()).map(|i| m.row(i).iter().sum()).collect(),
    }
}

/// Dense single-source Dijkstra over `length(u, v)`; `None` means no edge.
fn dijkstra_dense(n: usize, source: usize, length: impl Fn(usize, usize) -> Option<f64>) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[source] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        let mut best = f64::INFINITY;
        for (k, (&d, &fin)) in dist.iter().zip(&done).enumerate() {
            if !fin && d < best {
                best = d;
                u = k;
            }
        }
        if u == usize::MAX {
            break;
        }
        done[u] = true;
        for v in 0..n {
            if done[v] {
                continue;
            }
            if let Some(len) = length(u, v) {
                let cand = best + len;
                if cand < dist[v] {
                    dist[v] = cand;
                }
            }
        }
    }
    dist
}

/// Weighted shortest paths with edge length `1 / w` for `w > 0`.
pub fn shortest_path_distances(m: &ConnectivityMatrix) -> DistanceMatrix {
    let n = m.n();
    let mut values = Vec::with_capacity(n * n);
    for s in 0..n {
        let row = dijkstra_dense(n, s, |u, v| {
            let w = m.get(u, v);
            (w > 0.0).then(|| 1.0 / w)
        });
        values.extend(row);
    }
    DistanceMatrix { n, values }
}

fn closeness_from_distances(d: &DistanceMatrix) -> Vec<f64> {
    (0..d.n)
        .map(|i| {
            let (count, total) = (0..d.n)
                .filter(|&j| j != i && d.get(i, j).is_finite())
                .fold((0usize, 0.0), |(c, t), j| (c + 1, t + d.get(i, j)));
            if count == 0 || total <= 0.0 {
                0.0
            } else {
                count as f64 / total
            }
        })
        .collect()
}

/// `CC(i) = R_i / Σ_{j reachable} d(i, j)`; zero for isolated nodes.
pub fn closeness_centrality(m: &ConnectivityMatrix) -> NodalProfile {
    NodalProfile {
        metric: NodalMetric::CC,
        values: closeness_from_distances(&shortest_path_distances(m)),
    }
}

fn neighbors(m: &ConnectivityMatrix, i: usize) -> Vec<usize> {
    (0..m.n()).filter(|&j| j != i && m.get(i, j) > 0.0).collect()
}

/// Onnela clustering with weights normalized by the matrix maximum.
pub fn clustering_coefficient(m: &ConnectivityMatrix) -> NodalProfile {
    let n = m.n();
    let max_w = m.max_weight();
    let mut values = vec![0.0; n];
    if max_w > 0.0 {
        let cube = |i: usize, j: usize| (m.get(i, j) / max_w).cbrt();
        for (i, out) in values.iter_mut().enumerate() {
            let nb = neighbors(m, i);
            let k = nb.len();
            if k < 2 {
                continue;
            }
            let mut sum = 0.0;
            for (a, &j) in nb.iter().enumerate() {
                for &h in &nb[a + 1..] {
                    if m.get(j, h) > 0.0 {
                        sum += cube(i, j) * cube(i, h) * cube(j, h);
                    }
                }
            }
            *out = 2.0 * sum / (k * (k - 1)) as f64;
        }
    }
    NodalProfile {
        metric: NodalMetric::CLC,
        values,
    }
}

/// Weighted local efficiency on neighborhood-induced subgraphs.
pub fn local_efficiency(m: &ConnectivityMatrix) -> NodalProfile {
    let n = m.n();
    let max_w = m.max_weight();
    let mut values = vec![0.0; n];
    if max_w > 0.0 {
        for (i, out) in values.iter_mut().enumerate() {
            let nb = neighbors(m, i);
            let k = nb.len();
            if k < 2 {
                continue;
            }
            let mut sum = 0.0;
            for (a, &j) in nb.iter().enumerate() {
                let dist = dijkstra_dense(k, a, |u, v| {
                    let w = m.get(nb[u], nb[v]);
                    (w > 0.0).then(|| max_w / w)
                });
                let wij = m.get(i, j) / max_w;
                for (b, &h) in nb.iter().enumerate() {
                    if b == a || !dist[b].is_finite() {
                        continue;
                    }
                    let wih = m.get(i, h) / max_w;
                    sum += (wij * wih / dist[b]).cbrt();
                }
            }
            *out = sum / (k * (k - 1)) as f64;
        }
    }
    NodalProfile {
        metric: NodalMetric::LE,
        values,
    }
}

/// NS, CC, CLC and LE in that order.
pub fn all_nodal_profiles(m: &ConnectivityMatrix) -> [NodalProfile; 4] {
    [
        nodal_strength(m),
        closeness_centrality(m),
        clustering_coefficient(m),
        local_efficiency(m),
    ]
}
