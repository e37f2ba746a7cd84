//! Adversarial self-reconstruction training and model selection.

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use sc_harmon_autodiff::{Adam, PlateauScheduler, Tensor};
use sc_harmon_core::cohort::assign_training_sites;
use sc_harmon_core::evaluation::{fingerprint_accuracy, pairwise_distances, PairwiseDistanceMatrix};
use sc_harmon_core::{rng, CohortManifest, ConnectivityMatrix, Split};

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::model::{one_hot, postprocess, BatchInput, Forward, HarmonizerModel, Prepared, StoreRef, GROUP_AUX, GROUP_ENCDEC};

/// Gradient-reversal strength `2/(1 + e^{−γp}) − 1` with
/// `p = min(epoch / warmup_epochs, 1)`.
pub fn lambda_schedule(epoch: usize, warmup_epochs: usize, gamma: f64) -> f64 {
    let p = (epoch as f64 / warmup_epochs.max(1) as f64).min(1.0);
    2.0 / (1.0 + (-gamma * p).exp()) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0-based epoch index.
    pub epoch: usize,
    pub total_loss: f64,
    pub mae_loss: f64,
    pub ce_loss: f64,
    pub bce_loss: f64,
    pub lambda: f64,
    pub val_mae: Option<f64>,
    pub val_fa: Option<f64>,
    pub lr_encdec: f64,
    pub lr_aux: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    /// Unharmonized lowest→highest validation MAE.
    pub baseline_val_mae: Option<f64>,
    /// Epoch whose parameters were kept.
    pub selected_epoch: Option<usize>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn selection_score(r: &EpochRecord, baseline: f64) -> Option<f64> {
    Some(r.val_mae? / baseline - r.val_fa?)
}

/// Epoch minimizing `val_MAE / baseline_mae − val_FA` (earliest on ties).
/// Epochs without validation metrics are skipped; if none have them the
/// last epoch is returned.
pub fn select_best_epoch(history: &TrainingHistory, baseline_mae: f64) -> Result<usize> {
    let last = history.records.last().ok_or(Error::EmptyHistory)?;
    if !(baseline_mae > 0.0) {
        return Err(Error::InvalidConfig(format!("baseline MAE must be > 0, got {baseline_mae}")));
    }
    let mut best: Option<(f64, usize)> = None;
    for r in &history.records {
        if let Some(s) = selection_score(r, baseline_mae) {
            if best.is_none_or(|(b, _)| s < b) {
                best = Some((s, r.epoch));
            }
        }
    }
    Ok(best.map_or(last.epoch, |(_, e)| e))
}

struct Validation {
    sources: Vec<Prepared>,
    targets: Vec<ConnectivityMatrix>,
    target_site: usize,
    baseline: f64,
}

fn mean_diagonal(p: &PairwiseDistanceMatrix) -> f64 {
    (0..p.n).map(|i| p.get(i, i)).sum::<f64>() / p.n as f64
}

impl Validation {
    fn build(model: &HarmonizerModel, cohort: &CohortManifest) -> Result<Option<Self>> {
        let (Some(low), Some(high)) = (cohort.lowest_quality_site(), cohort.highest_quality_site()) else {
            return Ok(None);
        };
        if low.site_index == high.site_index {
            return Ok(None);
        }
        let pairs = cohort.paired(Some(Split::Val), low.site_index, high.site_index);
        if pairs.len() < 2 {
            return Ok(None);
        }
        let raw: Vec<ConnectivityMatrix> = pairs.iter().map(|(s, _)| s.matrix.clone()).collect();
        let targets: Vec<ConnectivityMatrix> = pairs.iter().map(|(_, t)| t.matrix.clone()).collect();
        let baseline = mean_diagonal(&pairwise_distances(&raw, &targets)?);
        let sources = raw.iter().map(|m| model.prepare(m)).collect::<Result<Vec<_>>>()?;
        Ok(Some(Self {
            sources,
            targets,
            target_site: high.site_index,
            baseline,
        }))
    }

    /// `(MAE, FA)` of the harmonized validation sources.
    fn evaluate(&self, model: &HarmonizerModel) -> Result<(f64, f64)> {
        let refs: Vec<&Prepared> = self.sources.iter().collect();
        let embs = model.encode_prepared(&refs)?;
        let logs = model.decode_log(&embs.iter().collect::<Vec<_>>(), self.target_site)?;
        let n = model.config().n_nodes;
        let pred = logs.iter().map(|v| postprocess(n, v)).collect::<Result<Vec<_>>>()?;
        let p = pairwise_distances(&pred, &self.targets)?;
        Ok((mean_diagonal(&p), fingerprint_accuracy(&p)))
    }
}

fn non_finite(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Autodiff(sc_harmon_autodiff::Error::NonFinite { .. }) => Error::NonFiniteLoss { epoch, batch },
        other => other,
    }
}

/// Splits shuffled indices into batches, folding a trailing singleton into
/// the previous batch so batch statistics are always defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = order.len() - 1 - out.last().unwrap().len();
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

struct BatchLosses {
    total: f64,
    mae: f64,
    ce: f64,
    bce: f64,
}

fn train_step(
    model: &mut HarmonizerModel,
    adam: &mut Adam,
    items: &[&Prepared],
    sites: &[usize],
    lambda: f64,
) -> Result<BatchLosses> {
    let cfg = model.config().clone();
    let input = BatchInput::new(&cfg, items)?;
    let targets = BatchInput::targets(items)?;
    let codes = one_hot(sites, cfg.n_sites);
    let mut fwd = Forward::new(&cfg, StoreRef::Train(model.params_mut()));
    let emb = fwd.encode(&input)?;
    let rev = fwd.g.grad_reversal(emb, lambda)?;
    let logits = fwd.classify(rev)?;
    let ce = fwd.g.softmax_cross_entropy(logits, &codes)?;
    let f_m = fwd.map_sites(&codes)?;
    let recon = fwd.decode(emb, f_m, input.support.as_ref())?;
    let mae = fwd.g.weighted_mae(recon, &targets, cfg.edge_weight)?;
    let mut total = fwd.g.add(mae, ce)?;
    let mut bce_value = 0.0;
    if cfg.bce_enabled {
        let binary = Tensor::new(
            targets.shape(),
            targets.data().iter().map(|&t| if t > 0.0 { 1.0 } else { 0.0 }).collect(),
        )?;
        let bce = fwd.g.sigmoid_bce(recon, &binary)?;
        bce_value = fwd.g.value(bce).item();
        total = fwd.g.add(total, bce)?;
    }
    let losses = BatchLosses {
        total: fwd.g.value(total).item(),
        mae: fwd.g.value(mae).item(),
        ce: fwd.g.value(ce).item(),
        bce: bce_value,
    };
    if !losses.total.is_finite() {
        return Err(sc_harmon_autodiff::Error::NonFinite { op: "loss" }.into());
    }
    fwd.g.backward(total)?;
    let graph = fwd.g;
    let grads = graph.param_grads(model.params());
    adam.step(model.params_mut(), &grads)?;
    Ok(losses)
}

/// Trains `model` on the training split of `cohort` (every subject if the
/// cohort carries no split labels). Each training subject contributes one
/// record, at a site assigned by a balanced seeded draw. When the cohort
/// has at least two validation subjects with lowest- and highest-quality
/// acquisitions, the epoch with the best validation score is restored.
pub fn train(
    model: HarmonizerModel,
    cohort: &CohortManifest,
    hyper: &TrainingConfig,
) -> Result<(HarmonizerModel, TrainingHistory)> {
    hyper.validate()?;
    let mut model = model;
    let cfg = model.config().clone();
    if cohort.n_nodes != cfg.n_nodes {
        return Err(Error::DimensionMismatch {
            expected: cfg.n_nodes,
            actual: cohort.n_nodes,
        });
    }
    if let Some(s) = cohort.sites.iter().find(|s| s.site_index >= cfg.n_sites) {
        return Err(Error::UnknownSite(s.site_index));
    }
    let split = if cohort.split_labels.is_empty() { None } else { Some(Split::Train) };
    let ids = cohort.subject_ids(split);
    let site_indices: Vec<usize> = cohort.sites.iter().map(|s| s.site_index).collect();
    if ids.is_empty() || site_indices.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let assigned = assign_training_sites(&ids, &site_indices, hyper.seed);
    let mut prepared = Vec::with_capacity(ids.len());
    let mut sites = Vec::with_capacity(ids.len());
    for id in &ids {
        let rec = cohort
            .record(id, assigned[id])
            .or_else(|| cohort.subjects.iter().find(|r| &r.subject_id == id))
            .expect("subject id comes from the cohort");
        prepared.push(model.prepare(&rec.matrix)?);
        sites.push(rec.site.site_index);
    }
    let validation = Validation::build(&model, cohort)?;
    let mut adam = Adam::new(model.params(), &[(GROUP_ENCDEC, hyper.lr_encdec), (GROUP_AUX, hyper.lr_aux)])?;
    let mut plateau = PlateauScheduler::new(hyper.plateau_factor, hyper.plateau_patience, hyper.plateau_threshold);
    let mut shuffle = rng::substream(hyper.seed, "shuffle");
    let mut history = TrainingHistory {
        baseline_val_mae: validation.as_ref().map(|v| v.baseline),
        ..Default::default()
    };
    let baseline = validation.as_ref().map(|v| v.baseline).filter(|&b| b > 0.0);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    info!(
        "training {} model on {} subjects for {} epochs",
        cfg.kind,
        prepared.len(),
        hyper.epochs
    );

    for epoch in 0..hyper.epochs {
        let lambda = hyper
            .fixed_lambda
            .unwrap_or_else(|| lambda_schedule(epoch, hyper.warmup_epochs, hyper.gamma));
        order.shuffle(&mut shuffle);
        let (mut total, mut mae, mut ce, mut bce) = (0.0, 0.0, 0.0, 0.0);
        for (bi, batch) in batches(&order, hyper.batch_size).into_iter().enumerate() {
            let items: Vec<&Prepared> = batch.iter().map(|&i| &prepared[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| sites[i]).collect();
            let l = train_step(&mut model, &mut adam, &items, &labels, lambda).map_err(non_finite(epoch, bi))?;
            let w = batch.len() as f64;
            total += w * l.total;
            mae += w * l.mae;
            ce += w * l.ce;
            bce += w * l.bce;
        }
        let count = order.len() as f64;
        let (val_mae, val_fa) = match &validation {
            Some(v) => {
                let (m, f) = v.evaluate(&model)?;
                (Some(m), Some(f))
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch,
            total_loss: total / count,
            mae_loss: mae / count,
            ce_loss: ce / count,
            bce_loss: bce / count,
            lambda,
            val_mae,
            val_fa,
            lr_encdec: adam.lr(GROUP_ENCDEC).unwrap_or(0.0),
            lr_aux: adam.lr(GROUP_AUX).unwrap_or(0.0),
        };
        debug!(
            "epoch {} loss {:.6} mae {:.6} ce {:.6} bce {:.6} lambda {:.4} val_mae {:?} val_fa {:?}",
            epoch, record.total_loss, record.mae_loss, record.ce_loss, record.bce_loss, lambda, val_mae, val_fa
        );
        if let Some(b) = baseline {
            if let Some(score) = selection_score(&record, b) {
                if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
                    best = Some((score, epoch, model.params().snapshot()));
                }
            }
        }
        if plateau.step(record.total_loss, &mut adam) {
            debug!("epoch {epoch}: plateau reached, learning rates scaled by {}", hyper.plateau_factor);
        }
        history.records.push(record);
    }

    let selected = match best {
        Some((score, epoch, snapshot)) => {
            model.params_mut().restore(&snapshot)?;
            info!("selected epoch {epoch} (score {score:.6})");
            epoch
        }
        None => hyper.epochs - 1,
    };
    model.meta.epoch = selected;
    model.meta.seed = hyper.seed;
    history.selected_epoch = Some(selected);
    Ok((model, history))
}
