use sc_harmon_core::cohort::split_cohort;
use sc_harmon_core::evaluation::evaluate;
use sc_harmon_core::site::standard_sites;
use sc_harmon_core::synthetic::{generate_synthetic_cohort, SyntheticConfig, SyntheticSiteEffect};
use sc_harmon_core::{ConnectivityMatrix, Split, SplitRatios};
use sc_harmon_deep::{train, ArchKind, ArchitectureConfig, HarmonizerModel, TrainingConfig};

use crate::Outcome;

const SEED: u64 = 7;
const EPOCHS: usize = 200;

/// 640 subjects so that the 10% test split holds 64 subjects (chance
/// fingerprinting accuracy 1/64), each seen at all four sites.
fn cohort() -> sc_harmon_core::CohortManifest {
    let cfg = SyntheticConfig {
        n_nodes: 32,
        n_subjects: 640,
        seed: SEED,
        ..Default::default()
    };
    let c = generate_synthetic_cohort(&cfg, &standard_sites(), &SyntheticSiteEffect::default_for(cfg.n_nodes)).unwrap();
    split_cohort(&c, SplitRatios::DEFAULT, SEED).unwrap()
}

fn edge_mae(a: &[ConnectivityMatrix], b: &[ConnectivityMatrix]) -> f64 {
    evaluate("mae", a, b).unwrap().edge.mae.mean
}

fn run(kind: ArchKind, c: &sc_harmon_core::CohortManifest) -> (bool, String) {
    let sites = standard_sites();
    let (low, high) = (&sites[0], &sites[3]);
    let arch = ArchitectureConfig::default_for(kind, c.n_nodes, sites.len());
    let hyper = TrainingConfig {
        epochs: EPOCHS,
        seed: SEED,
        ..Default::default()
    };
    let model = HarmonizerModel::new(arch, SEED).unwrap();
    let (model, history) = train(model, c, &hyper).unwrap();
    let first = &history.records[0];
    let last = history.records.last().unwrap();
    let loss_ratio = last.total_loss / first.total_loss;
    let recon = |r: &sc_harmon_deep::EpochRecord| r.mae_loss + r.bce_loss;
    let recon_ratio = recon(last) / recon(first);

    let raw: Vec<ConnectivityMatrix> =
        c.records_at(Some(Split::Test), low.site_index).into_iter().map(|r| r.matrix.clone()).collect();
    let target: Vec<ConnectivityMatrix> =
        c.records_at(Some(Split::Test), high.site_index).into_iter().map(|r| r.matrix.clone()).collect();
    let harmonized = model.harmonize_batch(&raw.iter().collect::<Vec<_>>(), high).unwrap();
    let before = edge_mae(&raw, &target);
    let report = evaluate(kind.to_string(), &harmonized, &target).unwrap();
    let after = report.edge.mae.mean;
    let chance = 1.0 / target.len() as f64;

    let a = loss_ratio < 0.5;
    let b = after <= 0.75 * before;
    let fa = report.fa >= 5.0 * chance;
    let id = kind != ArchKind::Gae || report.id > 0.0;
    let detail = format!(
        "{kind}: (a) loss {:.4} -> {:.4} ratio {loss_ratio:.3} [{}] (reconstruction ratio {recon_ratio:.3}); \
         (b) test MAE {before:.3} -> {after:.3} ratio {:.3} [{}]; (c) FA {:.3} vs chance {chance:.4} [{}]; \
         ID {:.3}{}; kept epoch {}",
        first.total_loss,
        last.total_loss,
        ok(a),
        after / before,
        ok(b),
        report.fa,
        ok(fa),
        report.id,
        if kind == ArchKind::Gae { format!(" [{}]", ok(id)) } else { String::new() },
        history.selected_epoch.map_or("last".into(), |e| e.to_string()),
    );
    (a && b && fa && id, detail)
}

fn ok(x: bool) -> &'static str {
    if x {
        "ok"
    } else {
        "miss"
    }
}

pub fn end_to_end() -> Outcome {
    let c = cohort();
    let (fae_ok, fae) = run(ArchKind::Fae, &c);
    let (gae_ok, gae) = run(ArchKind::Gae, &c);
    Outcome::new(fae_ok && gae_ok, format!("{fae} | {gae}"))
}
