use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use sc_harmon_core::augmentation::{augment_site, augmentation_report};
use sc_harmon_core::cohort::split_cohort;
use sc_harmon_core::evaluation::{
    compute_bounds, evaluate as evaluate_report, normalized_report, write_normalized_csv, write_report_csv,
};
use sc_harmon_core::io::{read_json, read_manifest, write_lines, write_manifest};
use sc_harmon_core::metrics::all_nodal_profiles;
use sc_harmon_core::site::{find_site, standard_sites};
use sc_harmon_core::synthetic::{generate_synthetic_cohort, synthetic_retest, SyntheticConfig, SyntheticSiteEffect};
use sc_harmon_core::{
    devectorize, edge_count, fit_lr as fit_linear, lr_harmonize, vectorize_upper, CohortManifest, ConnectivityMatrix,
    LinearEdgeModel, NodalMetric, SiteDescriptor, Split, SplitRatios, SubjectRecord,
};
use sc_harmon_deep::{
    export_embeddings as export_rows, train as train_model, write_embeddings_csv, ArchKind, ArchitectureConfig,
    HarmonizerModel, TrainingConfig,
};

use crate::error::{usage, Result};
use crate::{
    Arch, AugmentArgs, EvaluateArgs, ExportArgs, FitLrArgs, GenerateArgs, HarmonizeArgs, Method, MetricsArgs, SplitArg,
    TrainArgs,
};

pub const MANIFEST: &str = "manifest.json";
pub const RETEST: &str = "retest.json";
pub const AUGMENTED: &str = "augmented.json";
pub const HARMONIZED: &str = "harmonized.json";
pub const MODEL: &str = "model.ckpt";

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let sites: Vec<SiteDescriptor> = match &a.sites_file {
        Some(p) => read_json(p)?,
        None => standard_sites(),
    };
    let d = edge_count(a.nodes);
    let effect = match &a.effect_file {
        Some(p) => {
            let v: serde_json::Value = read_json(p)?;
            SyntheticSiteEffect::from_json(&v, d)?
        }
        None => SyntheticSiteEffect::default_for(a.nodes),
    };
    let cfg = SyntheticConfig {
        n_nodes: a.nodes,
        n_subjects: a.subjects,
        density: a.density,
        seed: a.seed,
        ..Default::default()
    };
    let cohort = generate_synthetic_cohort(&cfg, &sites, &effect)?;
    let cohort = split_cohort(&cohort, SplitRatios::DEFAULT, a.seed)?;
    let path = write_manifest(&cohort, &a.out_dir, MANIFEST)?;
    info!("wrote {} records to {}", cohort.subjects.len(), path.display());
    let best = cohort
        .highest_quality_site()
        .ok_or_else(|| usage("cohort has no sites"))?
        .site_index;
    let retest = synthetic_retest(&cohort, &effect, best, Split::Test, a.seed)?;
    if retest.subjects.is_empty() {
        info!("no test subjects; skipping the retest manifest");
    } else {
        let path = write_manifest(&retest, &a.out_dir, RETEST)?;
        info!("wrote {} retest records to {}", retest.subjects.len(), path.display());
    }
    sc_harmon_core::io::write_json(&effect.to_json(), a.out_dir.join("effect.json"))?;
    Ok(())
}

/// Records of `cohort` in `split` (every record when the cohort has no
/// split labels).
fn in_split(cohort: &CohortManifest, split: Split) -> Vec<&SubjectRecord> {
    let labelled = !cohort.split_labels.is_empty();
    cohort
        .subjects
        .iter()
        .filter(|r| !labelled || cohort.split_of(&r.subject_id) == Some(split))
        .collect()
}

pub fn augment(a: &AugmentArgs) -> Result<()> {
    let cohort = read_manifest(&a.manifest)?;
    let site = *find_site(&cohort.sites, a.site)?;
    let parents: Vec<ConnectivityMatrix> = in_split(&cohort, Split::Train)
        .into_iter()
        .filter(|r| r.site.site_index == a.site)
        .map(|r| r.matrix.clone())
        .collect();
    let augmented = augment_site(&parents, a.count, a.seed)?;
    let subjects: Vec<SubjectRecord> = augmented
        .iter()
        .enumerate()
        .map(|(k, m)| SubjectRecord::new(format!("aug-s{}-{k:06}", a.site), site, m.clone()))
        .collect();
    let split_labels = subjects.iter().map(|r| (r.subject_id.clone(), Split::Train)).collect();
    let out = CohortManifest {
        n_nodes: cohort.n_nodes,
        seed: a.seed,
        sites: cohort.sites.clone(),
        subjects,
        split_labels,
    };
    let path = write_manifest(&out, &a.out_dir, AUGMENTED)?;
    info!("augmented site {} from {} parents: {} records in {}", a.site, parents.len(), a.count, path.display());
    if a.report {
        let report = augmentation_report(&parents, &augmented)?;
        let path = a.out_dir.join("report.csv");
        report.write_csv(&path)?;
        info!("wrote augmentation report to {}", path.display());
    }
    Ok(())
}

pub fn metrics(a: &MetricsArgs) -> Result<()> {
    let cohort = read_manifest(&a.manifest)?;
    let blocks: Vec<Vec<String>> = cohort
        .subjects
        .par_iter()
        .map(|r| {
            let profiles = all_nodal_profiles(&r.matrix);
            (0..r.matrix.n())
                .map(|node| {
                    let mut line = format!("{},{},{node}", r.subject_id, r.site.site_index);
                    for p in &profiles {
                        line.push_str(&format!(",{}", p.values[node]));
                    }
                    line
                })
                .collect()
        })
        .collect();
    let mut header = String::from("subject_id,site_index,node");
    for m in NodalMetric::ALL {
        header.push(',');
        header.push_str(m.name());
    }
    write_lines(&a.out, &header, blocks.into_iter().flatten())?;
    info!("wrote nodal metrics for {} records to {}", cohort.subjects.len(), a.out.display());
    Ok(())
}

pub fn fit_lr(a: &FitLrArgs) -> Result<()> {
    let cohort = read_manifest(&a.manifest)?;
    let obs: Vec<_> = in_split(&cohort, Split::Train)
        .into_iter()
        .map(|r| (vectorize_upper(&r.matrix), r.site))
        .collect();
    let model = fit_linear(&obs)?;
    model.save_csv(&a.out)?;
    info!("fitted {} edge models on {} records; wrote {}", model.edge_count(), obs.len(), a.out.display());
    Ok(())
}

fn n_sites(cohort: &CohortManifest) -> usize {
    cohort.sites.iter().map(|s| s.site_index + 1).max().unwrap_or(0)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cohort = read_manifest(&a.manifest)?;
    let kind = match a.arch {
        Arch::Fae => ArchKind::Fae,
        Arch::Gae => ArchKind::Gae,
    };
    let cfg = match &a.config {
        Some(p) => {
            let mut v: serde_json::Value = read_json(p)?;
            let obj = v
                .as_object_mut()
                .ok_or_else(|| usage("architecture config must be a JSON object"))?;
            if let Some(k) = obj.get("kind") {
                if k.as_str() != Some(&kind.to_string()) {
                    return Err(usage(format!("config kind {k} does not match --arch {kind}")));
                }
            }
            obj.insert("kind".into(), kind.to_string().into());
            obj.entry("n_nodes").or_insert(cohort.n_nodes.into());
            obj.entry("n_sites").or_insert(n_sites(&cohort).into());
            ArchitectureConfig::from_partial_json(&v)?
        }
        None => ArchitectureConfig::default_for(kind, cohort.n_nodes, n_sites(&cohort)),
    };
    let hyper = TrainingConfig {
        epochs: a.epochs,
        seed: a.seed,
        batch_size: a.batch_size,
        ..Default::default()
    };
    let model = HarmonizerModel::new(cfg, a.seed)?;
    let (model, history) = train_model(model, &cohort, &hyper)?;
    let path = a.out_dir.join(MODEL);
    std::fs::create_dir_all(&a.out_dir).map_err(|source| sc_harmon_core::Error::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    model.save(&path, Some(&history))?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let rows = history.records.iter().map(|r| {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.total_loss,
            r.mae_loss,
            r.ce_loss,
            r.bce_loss,
            r.lambda,
            opt(r.val_mae),
            opt(r.val_fa),
            r.lr_encdec,
            r.lr_aux
        )
    });
    write_lines(
        a.out_dir.join("history.csv"),
        "epoch,total_loss,mae_loss,ce_loss,bce_loss,lambda,val_mae,val_fa,lr_encdec,lr_aux",
        rows,
    )?;
    info!("saved {kind} model (epoch {}) to {}", model.meta.epoch, path.display());
    Ok(())
}

fn harmonizer_for(method: Method, path: &Path) -> Result<Harmonizer> {
    Ok(match method {
        Method::Lr => Harmonizer::Linear(LinearEdgeModel::load_csv(path)?),
        Method::Fae | Method::Gae => {
            let (model, _) = HarmonizerModel::load(path)?;
            let want = if method == Method::Fae { ArchKind::Fae } else { ArchKind::Gae };
            if model.config().kind != want {
                return Err(usage(format!(
                    "{} holds a {} model, not {want}",
                    path.display(),
                    model.config().kind
                )));
            }
            Harmonizer::Deep(Box::new(model))
        }
    })
}

enum Harmonizer {
    Linear(LinearEdgeModel),
    Deep(Box<HarmonizerModel>),
}

impl Harmonizer {
    fn apply(&self, records: &[&SubjectRecord], target: &SiteDescriptor) -> Result<Vec<ConnectivityMatrix>> {
        match self {
            Harmonizer::Linear(m) => records
                .par_iter()
                .map(|r| {
                    let v = lr_harmonize(&vectorize_upper(&r.matrix), &r.site, target, m)?;
                    Ok(devectorize(v.values(), r.matrix.n())?)
                })
                .collect(),
            Harmonizer::Deep(m) => {
                let mut out = Vec::with_capacity(records.len());
                for chunk in records.chunks(64) {
                    let ms: Vec<_> = chunk.iter().map(|r| &r.matrix).collect();
                    out.extend(m.harmonize_batch(&ms, target)?);
                }
                Ok(out)
            }
        }
    }
}

pub fn harmonize(a: &HarmonizeArgs) -> Result<()> {
    let cohort = read_manifest(&a.manifest)?;
    let target = *find_site(&cohort.sites, a.target_site)?;
    let source = match a.source_site {
        Some(s) => *find_site(&cohort.sites, s)?,
        None => *cohort.lowest_quality_site().ok_or_else(|| usage("cohort has no sites"))?,
    };
    let split = match a.split {
        Some(SplitArg::Train) => Some(Split::Train),
        Some(SplitArg::Val) => Some(Split::Val),
        Some(SplitArg::Test) => Some(Split::Test),
        Some(SplitArg::All) => None,
        None if cohort.split_labels.is_empty() => None,
        None => Some(Split::Test),
    };
    let records = cohort.records_at(split, source.site_index);
    if records.is_empty() {
        return Err(usage(format!("no records at site {} in the selected split", source.site_index)));
    }
    let harmonizer = harmonizer_for(a.method, &a.model)?;
    let outputs = harmonizer.apply(&records, &target)?;
    let subjects: Vec<SubjectRecord> = records
        .iter()
        .zip(outputs)
        .map(|(r, m)| SubjectRecord {
            subject_id: r.subject_id.clone(),
            site: target,
            matrix: m,
            group_key: r.group_key.clone(),
            latent_truth: None,
        })
        .collect();
    let split_labels = subjects
        .iter()
        .filter_map(|r| cohort.split_of(&r.subject_id).map(|s| (r.subject_id.clone(), s)))
        .collect();
    let out = CohortManifest {
        n_nodes: cohort.n_nodes,
        seed: cohort.seed,
        sites: cohort.sites.clone(),
        subjects,
        split_labels,
    };
    let path = write_manifest(&out, &a.out_dir, HARMONIZED)?;
    info!(
        "harmonized {} records from site {} to site {}; wrote {}",
        out.subjects.len(),
        source.site_index,
        target.site_index,
        path.display()
    );
    Ok(())
}

fn counterpart<'a>(cohort: &'a CohortManifest, id: &str, site: usize, what: &str) -> Result<&'a SubjectRecord> {
    cohort
        .record(id, site)
        .ok_or_else(|| usage(format!("{what} manifest has no record for subject {id} at site {site}")))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let pred = read_manifest(&a.pred_manifest)?;
    let target = read_manifest(&a.target_manifest)?;
    if pred.subjects.is_empty() {
        return Err(usage("prediction manifest is empty"));
    }
    let lowest = target
        .lowest_quality_site()
        .ok_or_else(|| usage("target manifest has no sites"))?
        .site_index;
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let mut raws = Vec::new();
    for r in &pred.subjects {
        preds.push(r.matrix.clone());
        targets.push(counterpart(&target, &r.subject_id, r.site.site_index, "target")?.matrix.clone());
        raws.push(counterpart(&target, &r.subject_id, lowest, "target")?.matrix.clone());
    }
    let label = a.label.clone().unwrap_or_else(|| stem(&a.pred_manifest));
    let method = evaluate_report(label, &preds, &targets)?;
    let retest = match &a.retest_manifest {
        Some(p) => Some(read_manifest(p)?),
        None => None,
    };
    let retest_pairs = match &retest {
        Some(re) => {
            let mut test = Vec::new();
            let mut again = Vec::new();
            for r in &re.subjects {
                test.push(counterpart(&target, &r.subject_id, r.site.site_index, "target")?.matrix.clone());
                again.push(r.matrix.clone());
            }
            Some((test, again))
        }
        None => None,
    };
    let (lower, upper) = compute_bounds(
        &raws,
        &targets,
        retest_pairs.as_ref().map(|(t, r)| (t.as_slice(), r.as_slice())),
    )?;
    let mut reports = vec![method, lower];
    reports.extend(upper);
    write_report_csv(&reports, &a.out)?;
    info!("wrote {} report rows to {}", reports.len(), a.out.display());
    if a.normalized {
        let path = sibling(&a.out, "_normalized");
        write_normalized_csv(&normalized_report(&reports)?, &path)?;
        info!("wrote normalized report to {}", path.display());
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("harmonized").to_string()
}

/// `dir/report.csv` → `dir/report{suffix}.csv`.
pub fn sibling(p: &Path, suffix: &str) -> PathBuf {
    let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("csv");
    p.with_file_name(format!("{}{suffix}.{ext}", stem(p)))
}

pub fn export_embeddings(a: &ExportArgs) -> Result<()> {
    let (model, _) = HarmonizerModel::load(&a.model)?;
    let cohort = read_manifest(&a.manifest)?;
    let rows = export_rows(&model, &cohort, a.full)?;
    write_embeddings_csv(&rows, &a.out)?;
    info!("wrote {} embeddings to {}", rows.len(), a.out.display());
    Ok(())
}
