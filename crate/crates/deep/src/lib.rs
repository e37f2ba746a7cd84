//! Adversarial auto-encoder harmonizers for structural connectivity.
//!
//! An encoder (F_E) maps a connectivity matrix to an embedding that a site
//! classifier (F_C) tries to label; a gradient reversal layer makes the
//! encoder work against it. A site mapper (F_M) turns a one-hot site code
//! into a conditioning vector that the decoder (F_D) fuses with the
//! embedding (concatenation for the fully connected model, AdaIN for the
//! graph model). Harmonization decodes with the target site's code.

pub mod config;
pub mod embeddings;
pub mod error;
pub mod model;
pub mod train;

pub use config::{Activation, ArchKind, ArchitectureConfig, Normalization, TrainingConfig};
pub use embeddings::{export_embeddings, write_embeddings_csv, EmbeddingRow};
pub use error::{Error, Result};
pub use model::{Embedding, HarmonizerModel, ModelMeta, Module, GROUP_AUX, GROUP_ENCDEC};
pub use train::{lambda_schedule, select_best_epoch, train, EpochRecord, TrainingHistory};
