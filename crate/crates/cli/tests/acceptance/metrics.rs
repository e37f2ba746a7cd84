use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sc_harmon_core::linalg::{normalized_laplacian, symmetric_eigenvalues, SquareMatrix};
use sc_harmon_core::metrics::{closeness_centrality, clustering_coefficient, local_efficiency, nodal_strength};
use sc_harmon_core::ConnectivityMatrix;

use crate::oracles::{char_poly, nodal_oracle, poly_roots};
use crate::Outcome;

fn dense(n: usize, upper: &[f64]) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; n]; n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            w[i][j] = upper[k];
            w[j][i] = upper[k];
            k += 1;
        }
    }
    w
}

fn to_matrix(w: &[Vec<f64>]) -> ConnectivityMatrix {
    ConnectivityMatrix::new(w.len(), w.concat()).unwrap()
}

/// Largest deviation of any metric from the oracle on one graph.
fn metric_error(w: &[Vec<f64>]) -> f64 {
    let m = to_matrix(w);
    let o = nodal_oracle(w);
    let pairs = [
        (nodal_strength(&m).values, o.ns),
        (closeness_centrality(&m).values, o.cc),
        (clustering_coefficient(&m).values, o.clc),
        (local_efficiency(&m).values, o.le),
    ];
    pairs
        .iter()
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn eigen_error(a: &[Vec<f64>]) -> f64 {
    let roots = poly_roots(&char_poly(a));
    let eig = symmetric_eigenvalues(&SquareMatrix::new(a.len(), a.concat()).unwrap()).unwrap();
    eig.iter().zip(&roots).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn oracle_equivalence() -> Outcome {
    // Every graph on 2–4 nodes with integer weights 0..=4, connected or not.
    let mut graphs = 0usize;
    let mut worst = 0.0f64;
    for n in 2..=4 {
        let d = n * (n - 1) / 2;
        for code in 0..5usize.pow(d as u32) {
            let upper: Vec<f64> = (0..d).map(|k| ((code / 5usize.pow(k as u32)) % 5) as f64).collect();
            worst = worst.max(metric_error(&dense(n, &upper)));
            graphs += 1;
        }
    }
    // Random 5- and 6-node graphs, sparse small and dense wide integer weights.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..600 {
        let n = 5 + k % 2;
        let d = n * (n - 1) / 2;
        let upper: Vec<f64> = (0..d)
            .map(|_| {
                if k % 3 == 0 {
                    rng.random_range(1..=60) as f64
                } else {
                    rng.random_range(0..=4) as f64
                }
            })
            .collect();
        worst = worst.max(metric_error(&dense(n, &upper)));
        graphs += 1;
    }

    let mut spectra = 0usize;
    let mut eig_worst = 0.0f64;
    for n in 2..=4 {
        for _ in 0..50 {
            let mut a = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i..n {
                    let x: f64 = rng.random_range(-3.0..3.0);
                    a[i][j] = x;
                    a[j][i] = x;
                }
            }
            eig_worst = eig_worst.max(eigen_error(&a));
            let d = n * (n - 1) / 2;
            let upper: Vec<f64> = (0..d).map(|_| rng.random_range(1..=30) as f64).collect();
            let lap = normalized_laplacian(&to_matrix(&dense(n, &upper)));
            let lap: Vec<Vec<f64>> = lap.values.chunks(n).map(<[f64]>::to_vec).collect();
            eig_worst = eig_worst.max(eigen_error(&lap));
            spectra += 2;
        }
    }
    Outcome::new(
        worst <= 1e-10 && eig_worst <= 1e-8,
        format!("{graphs} graphs, max metric error {worst:.2e}; {spectra} spectra, max eigenvalue error {eig_worst:.2e}"),
    )
}
