use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sc_harmon_core::augmentation::{augment_site, mixup_pair};
use sc_harmon_core::site::standard_sites;
use sc_harmon_core::synthetic::{generate_synthetic_cohort, SyntheticConfig, SyntheticSiteEffect};
use sc_harmon_core::{vectorize_upper, ConnectivityMatrix};

use crate::Outcome;

fn mean_strength(ms: &[ConnectivityMatrix]) -> f64 {
    // Mean nodal strength is twice the edge total over the node count.
    let total: f64 = ms.iter().map(|m| m.values().iter().sum::<f64>() / m.n() as f64).sum();
    total / ms.len() as f64
}

pub fn fidelity() -> Outcome {
    let cfg = SyntheticConfig::default();
    let cohort = generate_synthetic_cohort(&cfg, &standard_sites(), &SyntheticSiteEffect::default_for(cfg.n_nodes)).unwrap();
    let site: Vec<ConnectivityMatrix> = cohort.records_at(None, 3).into_iter().map(|r| r.matrix.clone()).collect();
    let augmented = augment_site(&site, 2000, 10).unwrap();
    let (orig_ns, aug_ns) = (mean_strength(&site), mean_strength(&augmented));
    let rel = (aug_ns - orig_ns).abs() / orig_ns;

    let parents: Vec<Vec<f64>> = site.iter().map(|m| vectorize_upper(m).into_values()).collect();
    let children: Vec<Vec<f64>> = augmented.iter().map(|m| vectorize_upper(m).into_values()).collect();
    let d = parents[0].len();
    // Each augmented subject must be explained edge-for-edge by one pair of
    // distinct parents; record that pair for the sampled test below.
    let mut pairs = Vec::with_capacity(children.len());
    for child in &children {
        let pair = (0..parents.len()).find_map(|i| {
            (0..parents.len()).find(|&j| {
                i != j && child.iter().enumerate().all(|(e, &x)| x == parents[i][e] || x == parents[j][e])
            })
            .map(|j| (i, j))
        });
        pairs.push(pair);
    }
    let unexplained = pairs.iter().filter(|p| p.is_none()).count();

    // 10⁵ random edges: half from the cohort-level draw, half from direct
    // pairwise mixup with known parents. Values are compared exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut foreign = 0;
    let samples = 100_000;
    for s in 0..samples {
        let e = rng.random_range(0..d);
        if s % 2 == 0 {
            let k = rng.random_range(0..children.len());
            match pairs[k] {
                Some((i, j)) if children[k][e] == parents[i][e] || children[k][e] == parents[j][e] => {}
                _ => foreign += 1,
            }
        } else {
            let (i, j) = (rng.random_range(0..site.len()), rng.random_range(0..site.len()));
            let child = mixup_pair(&site[i], &site[j], rng.random()).unwrap();
            let x = vectorize_upper(&child).values()[e];
            if x != parents[i][e] && x != parents[j][e] {
                foreign += 1;
            }
        }
    }
    Outcome::new(
        rel <= 0.05 && unexplained == 0 && foreign == 0,
        format!(
            "mean NS {orig_ns:.3} -> {aug_ns:.3} ({:.2}%); {unexplained} of {} subjects without a parent pair; \
             {foreign} of {samples} sampled edges outside their parents",
            100.0 * rel,
            children.len()
        ),
    )
}
