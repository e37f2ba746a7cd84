//! Data model, graph metrics, linear harmonization, augmentation and
//! evaluation for multi-site structural connectivity harmonization.

pub mod augmentation;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod linalg;
pub mod linear;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod site;
pub mod synthetic;

pub use cohort::{CohortManifest, Split, SplitRatios, SubjectRecord};
pub use error::{Error, Result};
pub use linear::{fit_lr, lr_harmonize, LinearEdgeModel};
pub use matrix::{devectorize, edge_count, vectorize_upper, ConnectivityMatrix, EdgeVector};
pub use metrics::{NodalMetric, NodalProfile};
pub use site::SiteDescriptor;
