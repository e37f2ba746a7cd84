use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acquisition protocol of one (simulated) site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteDescriptor {
    pub site_index: usize,
    /// Diffusion b-value in s/mm².
    pub b_value: f64,
    /// Isotropic voxel size in mm.
    pub resolution: f64,
}

impl SiteDescriptor {
    pub fn new(site_index: usize, b_value: f64, resolution: f64) -> Result<Self> {
        if !(b_value > 0.0 && b_value.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "site {site_index}: b_value must be positive, got {b_value}"
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "site {site_index}: resolution must be positive, got {resolution}"
            )));
        }
        Ok(Self {
            site_index,
            b_value,
            resolution,
        })
    }

    /// Regression covariates `[1, X_r, X_b, X_r·X_b]`.
    pub fn design_row(&self) -> [f64; 4] {
        [
            1.0,
            self.resolution,
            self.b_value,
            self.resolution * self.b_value,
        ]
    }

    /// Ordering key: higher b-value first, then finer resolution.
    fn quality_key(&self) -> (f64, f64) {
        (self.b_value, -self.resolution)
    }
}

/// The four b-value × resolution protocols used throughout: b ∈ {1000, 3000}
/// s/mm², voxel size ∈ {2.3, 1.25} mm.
pub fn standard_sites() -> Vec<SiteDescriptor> {
    vec![
        SiteDescriptor {
            site_index: 0,
            b_value: 1000.0,
            resolution: 2.3,
        },
        SiteDescriptor {
            site_index: 1,
            b_value: 1000.0,
            resolution: 1.25,
        },
        SiteDescriptor {
            site_index: 2,
            b_value: 3000.0,
            resolution: 2.3,
        },
        SiteDescriptor {
            site_index: 3,
            b_value: 3000.0,
            resolution: 1.25,
        },
    ]
}

/// Highest-quality site (largest b-value, then finest resolution).
pub fn highest_quality(sites: &[SiteDescriptor]) -> Option<&SiteDescriptor> {
    sites.iter().max_by(|a, b| {
        a.quality_key()
            .partial_cmp(&b.quality_key())
            .expect("finite site parameters")
    })
}

/// Lowest-quality site (smallest b-value, then coarsest resolution).
pub fn lowest_quality(sites: &[SiteDescriptor]) -> Option<&SiteDescriptor> {
    sites.iter().min_by(|a, b| {
        a.quality_key()
            .partial_cmp(&b.quality_key())
            .expect("finite site parameters")
    })
}

/// Checks index uniqueness and the one-index-per-protocol rule.
pub fn validate_sites(sites: &[SiteDescriptor]) -> Result<()> {
    for (k, a) in sites.iter().enumerate() {
        SiteDescriptor::new(a.site_index, a.b_value, a.resolution)?;
        for b in &sites[..k] {
            if a.site_index == b.site_index {
                return Err(Error::InvalidArgument(format!(
                    "duplicate site index {}",
                    a.site_index
                )));
            }
            if a.b_value == b.b_value && a.resolution == b.resolution {
                return Err(Error::InvalidArgument(format!(
                    "sites {} and {} share acquisition parameters",
                    b.site_index, a.site_index
                )));
            }
        }
    }
    Ok(())
}

pub fn find_site(sites: &[SiteDescriptor], index: usize) -> Result<&SiteDescriptor> {
    sites
        .iter()
        .find(|s| s.site_index == index)
        .ok_or(Error::UnknownSite(index))
}

/// Numerical rank of the `[1, X_r, X_b, X_r·X_b]` design over distinct sites.
pub fn design_rank(sites: &[SiteDescriptor]) -> usize {
    let rows: Vec<[f64; 4]> = sites.iter().map(SiteDescriptor::design_row).collect();
    crate::linear::design_rank(&rows)
}
