//! Adam with per-group learning rates and a plateau learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    lrs: BTreeMap<String, f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    /// `lrs` maps every trainable group in `store` to its learning rate.
    pub fn new(store: &ParamStore, lrs: &[(&str, f64)]) -> Result<Self> {
        let lrs: BTreeMap<String, f64> = lrs.iter().map(|(g, lr)| (g.to_string(), *lr)).collect();
        for id in store.ids() {
            if let Some(g) = store.group(id) {
                if !lrs.contains_key(g) {
                    return Err(Error::InvalidArgument(format!(
                        "no learning rate for group '{g}' of '{}'",
                        store.name(id)
                    )));
                }
            }
        }
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
        Ok(Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lrs,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self, group: &str) -> Option<f64> {
        self.lrs.get(group).copied()
    }

    pub fn learning_rates(&self) -> &BTreeMap<String, f64> {
        &self.lrs
    }

    pub fn scale_lrs(&mut self, factor: f64) {
        for lr in self.lrs.values_mut() {
            *lr *= factor;
        }
    }

    /// One bias-corrected update of every trainable parameter that has a
    /// gradient; `grads` is indexed by parameter id.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(shape_err("adam", &[store.len()], &[grads.len()]));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                let id = store.ids().nth(i).expect("index in range");
                if g.shape() != store.value(id).shape() {
                    return Err(shape_err("adam", store.value(id).shape(), g.shape()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<ParamId> = store.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let (Some(group), Some(g)) = (store.group(id), g) else {
                continue;
            };
            let lr = self.lrs[group];
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.value_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Multiplies learning rates by `factor` once the monitored loss has failed
/// to improve by more than `threshold` (absolute) for over `patience` epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, threshold: f64) -> Self {
        Self {
            factor,
            patience,
            threshold,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's loss; returns true when a reduction fires.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            true
        } else {
            false
        }
    }

    /// `observe` and apply any reduction to `adam`.
    pub fn step(&mut self, loss: f64, adam: &mut Adam) -> bool {
        let fired = self.observe(loss);
        if fired {
            adam.scale_lrs(self.factor);
        }
        fired
    }
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(0.9, 5, 1e-5)
    }
}
