use serde::{Deserialize, Serialize};

use sc_harmon_core::edge_count;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    /// Fully connected auto-encoder on the vectorized upper triangle.
    Fae,
    /// Graph auto-encoder built from Chebyshev convolutions.
    Gae,
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArchKind::Fae => "fae",
            ArchKind::Gae => "gae",
        })
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fae" => Ok(ArchKind::Fae),
            "gae" => Ok(ArchKind::Gae),
            other => Err(Error::InvalidConfig(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Batch statistics; fully connected stacks only.
    Batch,
    Layer,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Layer layout of a harmonizer.
///
/// The FAE default is a single linear map on each side of a batch-normalized
/// embedding; deeper ReLU stacks (e.g. `encoder_hidden = [512, 128]`) are
/// supported but did not keep subject identity under the adversarial
/// signal on synthetic cohorts.
///
/// FAE: encoder `D → encoder_hidden… → K`, decoder
/// `concat(f_E, f_M) → decoder_hidden… → D`.
///
/// GAE: one Chebyshev layer per encoder width plus the final `→ K` layer
/// (so `encoder_hidden.len() + 1` layers, each of order `cheb_order`);
/// decoder = one dense-per-node layer to `decoder_hidden[0]`, one
/// Chebyshev layer per remaining width, then a per-node linear head to `N`.
/// Every decoder hidden layer is followed by AdaIN conditioned on f_M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub kind: ArchKind,
    pub n_nodes: usize,
    pub n_sites: usize,
    pub encoder_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub cheb_order: usize,
    pub classifier_hidden: Vec<usize>,
    pub mapper_hidden: Vec<usize>,
    pub normalization: Normalization,
    /// Also normalize the encoder output (no activation), bounding the
    /// embedding scale seen by the site classifier.
    pub embedding_norm: bool,
    pub activation: Activation,
    pub edge_weight: f64,
    pub bce_enabled: bool,
    pub norm_eps: f64,
    pub batch_norm_momentum: f64,
    pub adain_eps: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self::fae(32, 4)
    }
}

impl ArchitectureConfig {
    pub fn fae(n_nodes: usize, n_sites: usize) -> Self {
        Self {
            kind: ArchKind::Fae,
            n_nodes,
            n_sites,
            encoder_hidden: vec![],
            embedding_dim: 256,
            decoder_hidden: vec![],
            cheb_order: 0,
            classifier_hidden: vec![256, 256],
            mapper_hidden: vec![32],
            normalization: Normalization::Batch,
            embedding_norm: true,
            activation: Activation::Relu,
            edge_weight: 2.5,
            bce_enabled: false,
            norm_eps: 1e-5,
            batch_norm_momentum: 0.1,
            adain_eps: 1e-5,
        }
    }

    pub fn gae(n_nodes: usize, n_sites: usize) -> Self {
        Self {
            kind: ArchKind::Gae,
            encoder_hidden: vec![64],
            embedding_dim: 32,
            decoder_hidden: vec![64, 64, 64],
            cheb_order: 3,
            normalization: Normalization::Layer,
            bce_enabled: true,
            ..Self::fae(n_nodes, n_sites)
        }
    }

    pub fn default_for(kind: ArchKind, n_nodes: usize, n_sites: usize) -> Self {
        match kind {
            ArchKind::Fae => Self::fae(n_nodes, n_sites),
            ArchKind::Gae => Self::gae(n_nodes, n_sites),
        }
    }

    /// Builds a config from a possibly partial JSON object: fields that are
    /// absent take the defaults of the object's `kind` (FAE if unspecified).
    pub fn from_partial_json(value: &serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidConfig("architecture config must be a JSON object".into()))?;
        let field = |k: &str| obj.get(k).cloned();
        let kind: ArchKind = match field("kind") {
            Some(v) => serde_json::from_value(v).map_err(|e| Error::InvalidConfig(e.to_string()))?,
            None => ArchKind::Fae,
        };
        let base = Self::default_for(kind, 32, 4);
        let mut merged = serde_json::to_value(&base).expect("config serializes");
        let target = merged.as_object_mut().expect("config is an object");
        for (k, v) in obj {
            if !target.contains_key(k) {
                return Err(Error::InvalidConfig(format!("unknown field '{k}'")));
            }
            target.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Length of the vectorized upper triangle.
    pub fn edge_dim(&self) -> usize {
        edge_count(self.n_nodes)
    }

    /// Model input width: `D` for FAE, `N` node features for GAE.
    pub fn input_dim(&self) -> usize {
        match self.kind {
            ArchKind::Fae => self.edge_dim(),
            ArchKind::Gae => self.n_nodes,
        }
    }

    /// Number of encoder Chebyshev layers (GAE).
    pub fn cheb_layers(&self) -> usize {
        self.encoder_hidden.len() + 1
    }

    /// Shape of one subject's embedding.
    pub fn embedding_shape(&self) -> Vec<usize> {
        match self.kind {
            ArchKind::Fae => vec![self.embedding_dim],
            ArchKind::Gae => vec![self.n_nodes, self.embedding_dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_nodes < 2 {
            return bad("n_nodes must be >= 2");
        }
        if self.n_sites < 2 {
            return bad("n_sites must be >= 2");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        let widths = [
            &self.encoder_hidden,
            &self.decoder_hidden,
            &self.classifier_hidden,
            &self.mapper_hidden,
        ];
        if widths.iter().any(|w| w.contains(&0)) {
            return bad("layer widths must be positive");
        }
        if !(self.edge_weight >= 1.0) {
            return bad("edge_weight must be >= 1");
        }
        if !(self.norm_eps > 0.0 && self.adain_eps > 0.0) {
            return bad("normalization epsilons must be positive");
        }
        if !(self.batch_norm_momentum > 0.0 && self.batch_norm_momentum <= 1.0) {
            return bad("batch_norm_momentum must lie in (0, 1]");
        }
        if self.kind == ArchKind::Gae {
            if self.decoder_hidden.is_empty() {
                return bad("GAE decoder needs at least one hidden width");
            }
            if self.normalization == Normalization::Batch {
                return bad("GAE supports layer or no normalization");
            }
        }
        Ok(())
    }
}

/// Optimization settings for [`crate::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_encdec: f64,
    pub lr_aux: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
    pub warmup_epochs: usize,
    pub gamma: f64,
    /// Replaces the λ schedule with a constant (e.g. `Some(0.0)` disables
    /// the adversarial signal reaching the encoder).
    pub fixed_lambda: Option<f64>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 200,
            lr_encdec: 1e-2,
            lr_aux: 1e-3,
            plateau_factor: 0.9,
            plateau_patience: 5,
            plateau_threshold: 1e-5,
            warmup_epochs: 100,
            gamma: 10.0,
            fixed_lambda: None,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.epochs == 0 || self.warmup_epochs == 0 {
            return bad("batch_size, epochs and warmup_epochs must be positive");
        }
        if !(self.lr_encdec > 0.0 && self.lr_aux > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad("plateau_factor must lie in (0, 1]");
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("fixed_lambda must be finite and >= 0");
            }
        }
        Ok(())
    }
}
