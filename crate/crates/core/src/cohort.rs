//! Cohort manifests, group-aware splitting and training-site assignment.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ConnectivityMatrix;
use crate::rng;
use crate::site::{self, SiteDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Retest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Retest => "retest",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "retest" => Ok(Split::Retest),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// One connectivity matrix of one subject acquired at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub site: SiteDescriptor,
    pub matrix: ConnectivityMatrix,
    pub group_key: Option<String>,
    /// Noise- and site-free matrix; only synthetic cohorts carry it.
    pub latent_truth: Option<ConnectivityMatrix>,
}

impl SubjectRecord {
    pub fn new(subject_id: impl Into<String>, site: SiteDescriptor, matrix: ConnectivityMatrix) -> Self {
        Self {
            subject_id: subject_id.into(),
            site,
            matrix,
            group_key: None,
            latent_truth: None,
        }
    }

    /// Grouping key, falling back to the subject id.
    pub fn group(&self) -> &str {
        self.group_key.as_deref().unwrap_or(&self.subject_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    pub n_nodes: usize,
    pub seed: u64,
    pub sites: Vec<SiteDescriptor>,
    pub subjects: Vec<SubjectRecord>,
    pub split_labels: BTreeMap<String, Split>,
}

impl CohortManifest {
    /// Checks record/site consistency, node counts and group-atomic splits.
    pub fn validate(&self) -> Result<()> {
        site::validate_sites(&self.sites)?;
        let mut group_split: HashMap<&str, Split> = HashMap::new();
        for rec in &self.subjects {
            let known = site::find_site(&self.sites, rec.site.site_index)?;
            if known != &rec.site {
                return Err(Error::InvalidArgument(format!(
                    "subject {} uses site {} with mismatching parameters",
                    rec.subject_id, rec.site.site_index
                )));
            }
            if rec.matrix.n() != self.n_nodes {
                return Err(Error::DimensionMismatch {
                    expected: self.n_nodes,
                    actual: rec.matrix.n(),
                });
            }
            if let Some(latent) = &rec.latent_truth {
                if latent.n() != self.n_nodes {
                    return Err(Error::DimensionMismatch {
                        expected: self.n_nodes,
                        actual: latent.n(),
                    });
                }
            }
            if let Some(&split) = self.split_labels.get(&rec.subject_id) {
                if let Some(&prev) = group_split.get(rec.group()) {
                    if prev != split {
                        return Err(Error::InvalidArgument(format!(
                            "group {} straddles splits {prev} and {split}",
                            rec.group()
                        )));
                    }
                }
                group_split.insert(rec.group(), split);
            }
        }
        Ok(())
    }

    pub fn split_of(&self, subject_id: &str) -> Option<Split> {
        self.split_labels.get(subject_id).copied()
    }

    /// Distinct subject ids in a split, in first-appearance order.
    pub fn subject_ids(&self, split: Option<Split>) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.subjects
            .iter()
            .filter(|r| split.is_none() || self.split_of(&r.subject_id) == split)
            .filter(|r| seen.insert(r.subject_id.as_str()))
            .map(|r| r.subject_id.clone())
            .collect()
    }

    pub fn record(&self, subject_id: &str, site_index: usize) -> Option<&SubjectRecord> {
        self.subjects
            .iter()
            .find(|r| r.subject_id == subject_id && r.site.site_index == site_index)
    }

    /// Records of a split (or all records) acquired at `site_index`.
    pub fn records_at(&self, split: Option<Split>, site_index: usize) -> Vec<&SubjectRecord> {
        self.subjects
            .iter()
            .filter(|r| r.site.site_index == site_index)
            .filter(|r| split.is_none() || self.split_of(&r.subject_id) == split)
            .collect()
    }

    /// Aligned `(source, target)` records for subjects observed at both sites.
    pub fn paired(
        &self,
        split: Option<Split>,
        source_site: usize,
        target_site: usize,
    ) -> Vec<(&SubjectRecord, &SubjectRecord)> {
        self.records_at(split, source_site)
            .into_iter()
            .filter_map(|src| {
                self.record(&src.subject_id, target_site)
                    .map(|tgt| (src, tgt))
            })
            .collect()
    }

    pub fn highest_quality_site(&self) -> Option<&SiteDescriptor> {
        site::highest_quality(&self.sites)
    }

    pub fn lowest_quality_site(&self) -> Option<&SiteDescriptor> {
        site::lowest_quality(&self.sites)
    }
}

/// Target fractions for train/val/test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 0.8,
        val: 0.1,
        test: 0.1,
    };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        let all = [train, val, test];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be nonnegative and sum to 1, got ({train}, {val}, {test})"
            )));
        }
        Ok(r)
    }
}

/// Largest-remainder apportionment of `total` units over `weights`.
/// Remainder ties go to the earlier bucket.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if assigned >= total {
            break;
        }
        counts[k] += 1;
        assigned += 1;
    }
    counts
}

/// Group-atomic random split. Groups (not records) are apportioned to the
/// three splits, so realized fractions are within one group of the targets.
pub fn split_cohort(manifest: &CohortManifest, ratios: SplitRatios, seed: u64) -> Result<CohortManifest> {
    if manifest.subjects.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut subject_group: HashMap<&str, &str> = HashMap::new();
    let mut groups: Vec<&str> = Vec::new();
    for rec in &manifest.subjects {
        match subject_group.get(rec.subject_id.as_str()) {
            Some(&g) if g != rec.group() => {
                return Err(Error::InvalidArgument(format!(
                    "subject {} has conflicting group keys",
                    rec.subject_id
                )))
            }
            Some(_) => {}
            None => {
                subject_group.insert(&rec.subject_id, rec.group());
                if !groups.contains(&rec.group()) {
                    groups.push(rec.group());
                }
            }
        }
    }
    let mut rng = rng::substream(seed, "split");
    groups.shuffle(&mut rng);
    let counts = apportion(groups.len(), &[ratios.train, ratios.val, ratios.test]);
    let mut group_split: HashMap<&str, Split> = HashMap::new();
    let mut cursor = 0;
    for (split, count) in [Split::Train, Split::Val, Split::Test].into_iter().zip(counts) {
        for g in &groups[cursor..cursor + count] {
            group_split.insert(g, split);
        }
        cursor += count;
    }
    let split_labels = subject_group
        .iter()
        .map(|(&s, g)| (s.to_string(), group_split[g]))
        .collect();
    Ok(CohortManifest {
        split_labels,
        seed,
        ..manifest.clone()
    })
}

/// Assigns each subject exactly one acquisition site, balanced across sites
/// (counts differ by at most one) and randomized by `seed`.
pub fn assign_training_sites(subject_ids: &[String], site_indices: &[usize], seed: u64) -> BTreeMap<String, usize> {
    let mut ids = subject_ids.to_vec();
    let mut rng = rng::substream(seed, "site-assignment");
    ids.shuffle(&mut rng);
    ids.into_iter()
        .enumerate()
        .map(|(k, id)| (id, site_indices[k % site_indices.len()]))
        .collect()
}
