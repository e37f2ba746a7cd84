//! Binary-mask mixup of connectivity matrices.

use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::io::write_lines;
use crate::matrix::{devectorize, vectorize_upper, ConnectivityMatrix};
use crate::metrics::{NodalMetric, NodalProfile};
use crate::rng;

/// Takes `a`'s edge where `mask` is true and `b`'s otherwise.
pub fn mixup_with_mask(a: &ConnectivityMatrix, b: &ConnectivityMatrix, mask: &[bool]) -> Result<ConnectivityMatrix> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            actual: b.n(),
        });
    }
    let va = vectorize_upper(a);
    let vb = vectorize_upper(b);
    if mask.len() != va.len() {
        return Err(Error::LengthMismatch {
            expected: va.len(),
            actual: mask.len(),
        });
    }
    let mixed: Vec<f64> = va
        .values()
        .iter()
        .zip(vb.values())
        .zip(mask)
        .map(|((&x, &y), &m)| if m { x } else { y })
        .collect();
    devectorize(&mixed, a.n())
}

fn draw_mask(len: usize, rng: &mut rng::Rng) -> Vec<bool> {
    (0..len).map(|_| rng.random_bool(0.5)).collect()
}

/// Mixes two subjects with a fair Bernoulli mask drawn from `seed`.
pub fn mixup_pair(a: &ConnectivityMatrix, b: &ConnectivityMatrix, seed: u64) -> Result<ConnectivityMatrix> {
    let mut r = rng::substream(seed, "mixup");
    let d = crate::matrix::edge_count(a.n());
    mixup_with_mask(a, b, &draw_mask(d, &mut r))
}

/// Draws `count` mixups, each from a uniformly chosen pair of distinct
/// subjects. Draw `k` uses its own stream derived from `(seed, k)`.
pub fn augment_site(subjects: &[ConnectivityMatrix], count: usize, seed: u64) -> Result<Vec<ConnectivityMatrix>> {
    if subjects.len() < 2 {
        return Err(Error::InsufficientSubjects {
            required: 2,
            actual: subjects.len(),
        });
    }
    if count == 0 {
        return Err(Error::InvalidArgument("augmentation count must be at least 1".into()));
    }
    let n = subjects[0].n();
    if let Some(bad) = subjects.iter().find(|s| s.n() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: bad.n(),
        });
    }
    let d = crate::matrix::edge_count(n);
    (0..count)
        .map(|k| {
            let mut r = rng::indexed_stream(seed, "augment", k as u64);
            let i = r.random_range(0..subjects.len());
            let mut j = r.random_range(0..subjects.len() - 1);
            if j >= i {
                j += 1;
            }
            mixup_with_mask(&subjects[i], &subjects[j], &draw_mask(d, &mut r))
        })
        .collect()
}

/// Mean and population standard deviation of per-subject mean nodal values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub metric: NodalMetric,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationReport {
    pub original: Vec<MetricSummary>,
    pub augmented: Vec<MetricSummary>,
}

impl AugmentationReport {
    pub fn original_summary(&self, metric: NodalMetric) -> Option<&MetricSummary> {
        self.original.iter().find(|s| s.metric == metric)
    }

    pub fn augmented_summary(&self, metric: NodalMetric) -> Option<&MetricSummary> {
        self.augmented.iter().find(|s| s.metric == metric)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = [("original", &self.original), ("augmented", &self.augmented)]
            .into_iter()
            .flat_map(|(pop, list)| {
                list.iter()
                    .map(move |s| format!("{},{pop},{},{}", s.metric, s.mean, s.std))
            });
        write_lines(path, "metric,population,mean,std", rows)
    }
}

fn summarize(population: &[ConnectivityMatrix]) -> Vec<MetricSummary> {
    use rayon::prelude::*;
    let profiles: Vec<[NodalProfile; 4]> = population.par_iter().map(crate::metrics::all_nodal_profiles).collect();
    NodalMetric::ALL
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let means: Vec<f64> = profiles.iter().map(|p| p[k].mean()).collect();
            let (mean, std) = mean_and_std(&means);
            MetricSummary { metric, mean, std }
        })
        .collect()
}

/// Mean and population (divide by `n`) standard deviation.
pub fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn augmentation_report(original: &[ConnectivityMatrix], augmented: &[ConnectivityMatrix]) -> Result<AugmentationReport> {
    if original.is_empty() || augmented.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = original[0].n();
    if let Some(bad) = original.iter().chain(augmented).find(|m| m.n() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: bad.n(),
        });
    }
    Ok(AugmentationReport {
        original: summarize(original),
        augmented: summarize(augmented),
    })
}
