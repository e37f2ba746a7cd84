use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sc_harmon_core::cohort::split_cohort;
use sc_harmon_core::evaluation::compute_bounds;
use sc_harmon_core::site::standard_sites;
use sc_harmon_core::synthetic::{generate_synthetic_cohort, synthetic_retest, SyntheticConfig, SyntheticSiteEffect};
use sc_harmon_core::{
    edge_count, fit_lr, lr_harmonize, vectorize_upper, CohortManifest, ConnectivityMatrix, EdgeVector,
    LinearEdgeModel, SiteDescriptor, Split, SplitRatios,
};

use crate::oracles::invert;
use crate::Outcome;

fn latent_means(cohort: &CohortManifest) -> Vec<f64> {
    let ids = cohort.subject_ids(None);
    let d = edge_count(cohort.n_nodes);
    let mut mean = vec![0.0; d];
    for id in &ids {
        let latent = cohort.record(id, 0).unwrap().latent_truth.as_ref().unwrap();
        for (m, v) in mean.iter_mut().zip(vectorize_upper(latent).values()) {
            *m += v / ids.len() as f64;
        }
    }
    mean
}

fn observations(cohort: &CohortManifest) -> Vec<(EdgeVector, SiteDescriptor)> {
    cohort.subjects.iter().map(|r| (vectorize_upper(&r.matrix), r.site)).collect()
}

/// Largest coefficient error against `truth`, where the intercept truth is
/// shifted by the per-edge latent mean (each subject is seen at every site,
/// so the latent matrices load only on the intercept).
fn max_error(model: &LinearEdgeModel, truth: &[[f64; 4]], latent_mean: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for ((b, t), m) in model.coefficients.iter().zip(truth).zip(latent_mean) {
        let want = [t[0] + m, t[1], t[2], t[3]];
        for j in 0..4 {
            worst = worst.max((b[j] - want[j]).abs());
        }
    }
    worst
}

pub fn exact_recovery() -> Outcome {
    let n = 32;
    let d = edge_count(n);
    let sites = standard_sites();
    let cfg = SyntheticConfig {
        n_nodes: n,
        n_subjects: 64,
        seed: 1,
        ..Default::default()
    };

    // Arbitrary real coefficients applied to the latent matrices directly.
    let latents = generate_synthetic_cohort(&cfg, &sites, &SyntheticSiteEffect::uniform(d, 0.0, 0.0, 0.0, 0.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth: Vec<[f64; 4]> = (0..d)
        .map(|_| {
            [
                rng.random_range(-5.0..5.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.004..0.004),
            ]
        })
        .collect();
    let obs: Vec<(EdgeVector, SiteDescriptor)> = latents
        .subjects
        .iter()
        .map(|r| {
            let x = r.site.design_row();
            let l = vectorize_upper(r.latent_truth.as_ref().unwrap());
            let y = l
                .values()
                .iter()
                .zip(&truth)
                .map(|(v, b)| v + (0..4).map(|j| b[j] * x[j]).sum::<f64>())
                .collect();
            (EdgeVector::new(n, y).unwrap(), r.site)
        })
        .collect();
    let start = Instant::now();
    let model = fit_lr(&obs).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let continuous = max_error(&model, &truth, &latent_means(&latents));

    // Through the generator: offsets that are whole fibers at every site
    // survive rounding, so the noiseless cohort is exact too.
    let (b1, b2, b3) = (20.0, 0.001, 0.02);
    let cohort = generate_synthetic_cohort(&cfg, &sites, &SyntheticSiteEffect::uniform(d, b1, b2, b3, 0.0)).unwrap();
    let model = fit_lr(&observations(&cohort)).unwrap();
    let generated = max_error(&model, &vec![[0.0, b1, b2, b3]; d], &latent_means(&cohort));

    let worst = continuous.max(generated);
    Outcome::new(
        worst < 1e-9 && secs < 10.0,
        format!("max |beta_hat - beta| = {continuous:.2e} (real-valued), {generated:.2e} (generated); fit {secs:.3}s"),
    )
}

pub fn noisy_recovery() -> Outcome {
    let n = 32;
    let d = edge_count(n);
    let sites = standard_sites();
    let sigma = 2.0;
    let (b1, b2, b3) = (4.0, 0.002, 0.0);
    let cfg = SyntheticConfig {
        n_nodes: n,
        n_subjects: 400,
        seed: 2,
        ..Default::default()
    };
    // Offsets of at least 7 fibers keep clipping at zero negligible.
    let cohort = generate_synthetic_cohort(&cfg, &sites, &SyntheticSiteEffect::uniform(d, b1, b2, b3, sigma)).unwrap();
    let model = fit_lr(&observations(&cohort)).unwrap();
    let means = latent_means(&cohort);

    // Observations are rounded to whole fibers, adding uniform error of
    // variance 1/12 on top of the Gaussian noise.
    let sigma_eff = (sigma * sigma + 1.0 / 12.0f64).sqrt();
    let mut xtx = vec![vec![0.0; 4]; 4];
    for r in &cohort.subjects {
        let x = r.site.design_row();
        for i in 0..4 {
            for j in 0..4 {
                xtx[i][j] += x[i] * x[j];
            }
        }
    }
    let cov = invert(xtx);
    let mut fractions = [0.0; 4];
    for (j, frac) in fractions.iter_mut().enumerate() {
        let se = sigma_eff * cov[j][j].sqrt();
        let inside = model
            .coefficients
            .iter()
            .zip(&means)
            .filter(|(b, m)| {
                let truth = [**m, b1, b2, b3][j];
                (b[j] - truth).abs() <= 3.0 * se
            })
            .count();
        *frac = inside as f64 / d as f64;
    }
    let worst = fractions.iter().copied().fold(1.0, f64::min);
    Outcome::new(
        worst >= 0.99,
        format!(
            "edges within 3 SE per coefficient: {:.4} {:.4} {:.4} {:.4}",
            fractions[0], fractions[1], fractions[2], fractions[3]
        ),
    )
}

struct LrRun {
    raw: Vec<ConnectivityMatrix>,
    harmonized: Vec<ConnectivityMatrix>,
    target: Vec<ConnectivityMatrix>,
    retest: Vec<ConnectivityMatrix>,
    offset_over_sigma: f64,
}

/// The generator defaults (32 nodes, 64 subjects, seed 0), LR fitted on the
/// training split and applied lowest→highest on the test split.
fn default_lr_run() -> LrRun {
    let cfg = SyntheticConfig::default();
    let sites = standard_sites();
    let effect = SyntheticSiteEffect::default_for(cfg.n_nodes);
    let cohort = generate_synthetic_cohort(&cfg, &sites, &effect).unwrap();
    let cohort = split_cohort(&cohort, SplitRatios::DEFAULT, cfg.seed).unwrap();
    let (low, high) = (sites[0], sites[3]);
    let train: Vec<_> = cohort
        .subjects
        .iter()
        .filter(|r| cohort.split_of(&r.subject_id) == Some(Split::Train))
        .map(|r| (vectorize_upper(&r.matrix), r.site))
        .collect();
    let model = fit_lr(&train).unwrap();
    let raw: Vec<ConnectivityMatrix> =
        cohort.records_at(Some(Split::Test), low.site_index).into_iter().map(|r| r.matrix.clone()).collect();
    let target: Vec<ConnectivityMatrix> =
        cohort.records_at(Some(Split::Test), high.site_index).into_iter().map(|r| r.matrix.clone()).collect();
    let harmonized = raw
        .iter()
        .map(|m| {
            let v = lr_harmonize(&vectorize_upper(m), &low, &high, &model).unwrap();
            sc_harmon_core::devectorize(v.values(), m.n()).unwrap()
        })
        .collect();
    let retest = synthetic_retest(&cohort, &effect, high.site_index, Split::Test, cfg.seed).unwrap();
    let retest = retest.subjects.iter().map(|r| r.matrix.clone()).collect();
    let gap = effect.site_offsets(&low)[0] - effect.site_offsets(&high)[0];
    LrRun {
        raw,
        harmonized,
        target,
        retest,
        offset_over_sigma: gap.abs() / effect.noise_sigma,
    }
}

fn mae(a: &[ConnectivityMatrix], b: &[ConnectivityMatrix]) -> f64 {
    let per: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let (x, y) = (vectorize_upper(x), vectorize_upper(y));
            x.values().iter().zip(y.values()).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.values().len() as f64
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

pub fn harmonization_effect() -> Outcome {
    let run = default_lr_run();
    let raw = mae(&run.raw, &run.target);
    let lr = mae(&run.harmonized, &run.target);
    Outcome::new(
        run.offset_over_sigma >= 5.0 && lr <= 0.5 * raw,
        format!(
            "test MAE raw {raw:.3} -> LR {lr:.3} (ratio {:.3}); injected offset {:.1} sigma",
            lr / raw,
            run.offset_over_sigma
        ),
    )
}

pub fn bounds_ordering() -> Outcome {
    let run = default_lr_run();
    let (lower, upper) = compute_bounds(&run.raw, &run.target, Some((&run.target, &run.retest))).unwrap();
    let lr = sc_harmon_core::evaluation::evaluate("lr", &run.harmonized, &run.target).unwrap();
    let (lo, mid, up) = (lower.edge.mae.mean, lr.edge.mae.mean, upper.unwrap().edge.mae.mean);
    Outcome::new(lo > mid && mid > up, format!("MAE lower {lo:.3} > LR {mid:.3} > upper {up:.3}"))
}
