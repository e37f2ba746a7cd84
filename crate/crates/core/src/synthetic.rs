//! Synthetic multi-site cohorts with known ground truth.
//!
//! Each subject gets a latent (site-free) matrix built from a shared
//! two-block population template: template edges exist with probability
//! `density`, carry geometric-distributed positive integer weights (heavier
//! within blocks), and are modulated per subject by node gains
//! `exp(g_u + g_v)` plus a small per-edge jitter. Observed matrices follow
//! the linear site law exactly:
//!
//! `s = round(max(0, latent + β1·X_r + β2·X_b + β3·X_r·X_b + N(0, σ²)))`.

use rand::Rng as _;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortManifest, Split, SubjectRecord};
use crate::error::{Error, Result};
use crate::matrix::{devectorize, edge_count, quantize_count, upper_pairs, vectorize_upper};
use crate::rng;
use crate::site::{self, SiteDescriptor};

/// Per-edge generative site effect.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSiteEffect {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub beta3: Vec<f64>,
    pub noise_sigma: f64,
}

impl SyntheticSiteEffect {
    pub fn uniform(d: usize, beta1: f64, beta2: f64, beta3: f64, noise_sigma: f64) -> Self {
        Self {
            beta1: vec![beta1; d],
            beta2: vec![beta2; d],
            beta3: vec![beta3; d],
            noise_sigma,
        }
    }

    /// Default desk-scale effect: offsets vanish at the highest-quality
    /// site and reach about −9 fibers at the lowest-quality one,
    /// i.e. well above five noise standard deviations.
    pub fn default_for(n_nodes: usize) -> Self {
        Self::uniform(edge_count(n_nodes), -4.8, 0.002, 0.0, 1.0)
    }

    pub fn edge_count(&self) -> usize {
        self.beta1.len()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        for (name, arr) in [("beta1", &self.beta1), ("beta2", &self.beta2), ("beta3", &self.beta3)] {
            if arr.len() != d {
                return Err(Error::LengthMismatch {
                    expected: d,
                    actual: arr.len(),
                });
            }
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} contains non-finite values")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Additive per-edge offset `β1·X_r + β2·X_b + β3·X_r·X_b` at `site`.
    pub fn site_offsets(&self, site: &SiteDescriptor) -> Vec<f64> {
        let (r, b) = (site.resolution, site.b_value);
        (0..self.edge_count())
            .map(|e| self.beta1[e] * r + self.beta2[e] * b + self.beta3[e] * r * b)
            .collect()
    }

    /// Parses the effect-file JSON: per-edge arrays, or `*_const` scalars
    /// broadcast to all `d` edges. Either form needs `noise_sigma`.
    pub fn from_json(value: &serde_json::Value, d: usize) -> Result<Self> {
        let parsed: EffectFile = serde_json::from_value(value.clone())
            .map_err(|e| Error::InvalidArgument(format!("effect file: {e}")))?;
        let effect = match parsed {
            EffectFile::Arrays {
                beta1,
                beta2,
                beta3,
                noise_sigma,
            } => Self {
                beta1,
                beta2,
                beta3,
                noise_sigma,
            },
            EffectFile::Scalars {
                beta1_const,
                beta2_const,
                beta3_const,
                noise_sigma,
            } => Self::uniform(d, beta1_const, beta2_const, beta3_const, noise_sigma),
        };
        effect.validate(d)?;
        Ok(effect)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "beta1": self.beta1,
            "beta2": self.beta2,
            "beta3": self.beta3,
            "noise_sigma": self.noise_sigma,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum EffectFile {
    Arrays {
        beta1: Vec<f64>,
        beta2: Vec<f64>,
        beta3: Vec<f64>,
        noise_sigma: f64,
    },
    Scalars {
        #[serde(default)]
        beta1_const: f64,
        #[serde(default)]
        beta2_const: f64,
        #[serde(default)]
        beta3_const: f64,
        noise_sigma: f64,
    },
}

/// Shape of the latent population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_nodes: usize,
    pub n_subjects: usize,
    /// Probability that a template edge exists.
    pub density: f64,
    pub seed: u64,
    /// Mean template weight of within-block edges.
    pub within_block_mean: f64,
    /// Mean template weight of between-block edges.
    pub between_block_mean: f64,
    /// Standard deviation of the per-subject log node gains.
    pub node_gain_sd: f64,
    /// Standard deviation of the per-subject, per-edge log jitter.
    pub edge_jitter_sd: f64,
    /// Probability that a subject keeps a given template edge.
    pub subject_keep: f64,
    /// Consecutive subjects sharing a group key.
    pub family_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_nodes: 32,
            n_subjects: 64,
            density: 0.6,
            seed: 0,
            within_block_mean: 30.0,
            between_block_mean: 12.0,
            node_gain_sd: 0.25,
            edge_jitter_sd: 0.1,
            subject_keep: 0.97,
            family_size: 1,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_nodes < 4 {
            return bad(format!("n_nodes must be >= 4, got {}", self.n_nodes));
        }
        if self.n_subjects == 0 {
            return Err(Error::EmptyCohort);
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density must lie in (0, 1], got {}", self.density));
        }
        if !(self.within_block_mean >= 1.0 && self.between_block_mean >= 1.0) {
            return bad("block means must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.subject_keep) || self.node_gain_sd < 0.0 || self.edge_jitter_sd < 0.0 {
            return bad("invalid subject variability parameters".into());
        }
        if self.family_size == 0 {
            return bad("family_size must be >= 1".into());
        }
        Ok(())
    }

    pub fn block_of(&self, node: usize) -> usize {
        usize::from(node >= self.n_nodes / 2)
    }
}

fn geometric_weight(rng: &mut rng::Rng, mean: f64) -> f64 {
    if mean <= 1.0 {
        return 1.0;
    }
    let dist = Geometric::new(1.0 / mean).expect("valid geometric parameter");
    1.0 + dist.sample(rng) as f64
}

/// Population template: `0` for absent edges, else a positive integer weight.
fn draw_template(cfg: &SyntheticConfig) -> Vec<f64> {
    let mut rng = rng::substream(cfg.seed, "template");
    upper_pairs(cfg.n_nodes)
        .map(|(i, j)| {
            let keep = rng.random::<f64>() < cfg.density;
            let mean = if cfg.block_of(i) == cfg.block_of(j) {
                cfg.within_block_mean
            } else {
                cfg.between_block_mean
            };
            let w = geometric_weight(&mut rng, mean);
            if keep {
                w
            } else {
                0.0
            }
        })
        .collect()
}

fn draw_latent(cfg: &SyntheticConfig, template: &[f64], subject: usize) -> Vec<f64> {
    let mut rng = rng::indexed_stream(cfg.seed, "latent", subject as u64);
    let gains: Vec<f64> = (0..cfg.n_nodes)
        .map(|_| cfg.node_gain_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    upper_pairs(cfg.n_nodes)
        .zip(template)
        .map(|((i, j), &t)| {
            let keep = rng.random::<f64>() < cfg.subject_keep;
            let jitter: f64 = rng.sample(StandardNormal);
            if t == 0.0 || !keep {
                return 0.0;
            }
            let rate = t * (gains[i] + gains[j] + cfg.edge_jitter_sd * jitter).exp();
            rate.round().max(1.0)
        })
        .collect()
}

/// Observed edges for one latent vector at one site with a seeded noise draw.
pub fn observe(latent: &[f64], offsets: &[f64], noise_sigma: f64, rng: &mut rng::Rng) -> Vec<f64> {
    latent
        .iter()
        .zip(offsets)
        .map(|(&l, &o)| {
            let eps = if noise_sigma > 0.0 {
                noise_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            quantize_count(l + o + eps)
        })
        .collect()
}

fn subject_id(i: usize) -> String {
    format!("sub-{i:04}")
}

/// Generates every subject at every site; the result carries latent truth
/// but no split labels.
pub fn generate_synthetic_cohort(
    cfg: &SyntheticConfig,
    sites: &[SiteDescriptor],
    effect: &SyntheticSiteEffect,
) -> Result<CohortManifest> {
    cfg.validate()?;
    site::validate_sites(sites)?;
    if sites.len() < 2 {
        return Err(Error::InvalidArgument("at least two sites are required".into()));
    }
    let required = sites.len().min(4);
    let rank = site::design_rank(sites);
    if rank < required {
        return Err(Error::RankDeficientSites { rank, required });
    }
    let n = cfg.n_nodes;
    effect.validate(edge_count(n))?;
    let template = draw_template(cfg);
    let offsets: Vec<Vec<f64>> = sites.iter().map(|s| effect.site_offsets(s)).collect();
    let mut subjects = Vec::with_capacity(cfg.n_subjects * sites.len());
    for i in 0..cfg.n_subjects {
        let latent_vec = draw_latent(cfg, &template, i);
        let latent = devectorize(&latent_vec, n)?;
        for (k, site) in sites.iter().enumerate() {
            let mut noise_rng = rng::indexed_stream(cfg.seed, "site-noise", (i * sites.len() + k) as u64);
            let obs = observe(&latent_vec, &offsets[k], effect.noise_sigma, &mut noise_rng);
            subjects.push(SubjectRecord {
                subject_id: subject_id(i),
                site: *site,
                matrix: devectorize(&obs, n)?,
                group_key: Some(format!("fam-{:04}", i / cfg.family_size)),
                latent_truth: Some(latent.clone()),
            });
        }
    }
    Ok(CohortManifest {
        n_nodes: n,
        seed: cfg.seed,
        sites: sites.to_vec(),
        subjects,
        split_labels: Default::default(),
    })
}

/// Independent re-acquisition at `site` for every subject of `split`:
/// the same latent matrix with a fresh noise draw. The returned manifest
/// labels all its records `retest`.
pub fn synthetic_retest(
    cohort: &CohortManifest,
    effect: &SyntheticSiteEffect,
    site_index: usize,
    split: Split,
    seed: u64,
) -> Result<CohortManifest> {
    let site = *site::find_site(&cohort.sites, site_index)?;
    let offsets = effect.site_offsets(&site);
    let mut subjects = Vec::new();
    for (k, rec) in cohort.records_at(Some(split), site_index).into_iter().enumerate() {
        let latent = rec.latent_truth.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("subject {} has no latent truth", rec.subject_id))
        })?;
        let mut noise_rng = rng::indexed_stream(seed, "retest-noise", k as u64);
        let obs = observe(vectorize_upper(latent).values(), &offsets, effect.noise_sigma, &mut noise_rng);
        subjects.push(SubjectRecord {
            matrix: devectorize(&obs, cohort.n_nodes)?,
            ..rec.clone()
        });
    }
    let split_labels = subjects
        .iter()
        .map(|r| (r.subject_id.clone(), Split::Retest))
        .collect();
    Ok(CohortManifest {
        n_nodes: cohort.n_nodes,
        seed,
        sites: cohort.sites.clone(),
        subjects,
        split_labels,
    })
}
