//! Parameters and forward passes of the FAE and GAE harmonizers.
//!
//! Both architectures work on `log(s + 1)` edge weights: the reconstruction
//! loss compares log-domain predictions with log-domain targets and
//! [`HarmonizerModel::decode`] maps back with `exp(x) − 1` before the usual
//! symmetrize / zero-diagonal / clamp / round post-processing.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use sc_harmon_autodiff::{chebconv, BatchNormMode, Graph, ParamId, ParamStore, RescaledLaplacian, Tensor, Var};
use sc_harmon_core::linalg::normalized_laplacian;
use sc_harmon_core::{rng, vectorize_upper, ConnectivityMatrix, SiteDescriptor};

use crate::config::{Activation, ArchKind, ArchitectureConfig, Normalization};
use crate::error::{Error, Result};
use crate::train::TrainingHistory;

pub const GROUP_ENCDEC: &str = "encdec";
pub const GROUP_AUX: &str = "aux";

/// Largest log-domain value mapped back to counts (guards `exp` overflow).
const MAX_LOG_OUTPUT: f64 = 40.0;

/// The five framework modules; parameter names start with the module prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Module {
    /// F_E (`enc.*`).
    Encoder,
    /// F_D (`dec.*`, `head.*`).
    Decoder,
    /// F_C (`cls.*`).
    Classifier,
    /// F_M (`map.*`).
    Mapper,
    /// F_L, the AdaIN scale/shift producers (`fuse.*`).
    Fusion,
}

impl Module {
    pub fn of(param_name: &str) -> Option<Module> {
        match param_name.split('.').next()? {
            "enc" => Some(Module::Encoder),
            "dec" | "head" => Some(Module::Decoder),
            "cls" => Some(Module::Classifier),
            "map" => Some(Module::Mapper),
            "fuse" => Some(Module::Fusion),
            _ => None,
        }
    }

    /// Optimizer group of the module's parameters.
    pub fn group(self) -> &'static str {
        match self {
            Module::Encoder | Module::Decoder | Module::Fusion => GROUP_ENCDEC,
            Module::Classifier | Module::Mapper => GROUP_AUX,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Epoch (0-based) whose parameters the model holds.
    pub epoch: usize,
    pub seed: u64,
}

/// One subject's encoder output. GAE embeddings keep the input graph's
/// rescaled Laplacian because the decoder convolves over the same graph.
#[derive(Debug, Clone)]
pub struct Embedding {
    values: Tensor,
    support: Option<RescaledLaplacian>,
}

impl Embedding {
    /// `[K]` (FAE) or `[N, K]` (GAE).
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn support(&self) -> Option<&RescaledLaplacian> {
        self.support.as_ref()
    }
}

#[derive(Debug, Clone)]
pub struct HarmonizerModel {
    config: ArchitectureConfig,
    store: ParamStore,
    pub meta: ModelMeta,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: rng::Rng,
}

impl Init<'_> {
    fn add(&mut self, name: &str, t: Tensor) -> Result<ParamId> {
        let module = Module::of(name).expect("parameter names carry a module prefix");
        Ok(self.store.add_param(name, t, module.group())?)
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape, data).expect("shape matches data")
    }

    /// `w[fan_in, fan_out]` and `b[fan_out]`, both `U(±1/√fan_in)`.
    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(&[fan_in, fan_out], bound);
        let b = self.uniform(&[fan_out], bound);
        self.add(&format!("{prefix}.w"), w)?;
        self.add(&format!("{prefix}.b"), b)?;
        Ok(())
    }

    fn zero_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.add(&format!("{prefix}.w"), Tensor::zeros(&[fan_in, fan_out]))?;
        self.add(&format!("{prefix}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(())
    }

    /// Glorot-uniform Chebyshev coefficients and a zero bias.
    fn cheb(&mut self, prefix: &str, din: usize, dout: usize, order: usize) -> Result<()> {
        let bound = (6.0 / ((din + dout) as f64 * (order + 1) as f64)).sqrt();
        for m in 0..=order {
            let t = self.uniform(&[din, dout], bound);
            self.add(&format!("{prefix}.theta.{m}"), t)?;
        }
        self.add(&format!("{prefix}.b"), Tensor::zeros(&[dout]))?;
        Ok(())
    }

    fn norm(&mut self, prefix: &str, width: usize, kind: Normalization) -> Result<()> {
        if kind == Normalization::None {
            return Ok(());
        }
        self.add(&format!("{prefix}.norm.gamma"), Tensor::full(&[width], 1.0))?;
        self.add(&format!("{prefix}.norm.beta"), Tensor::zeros(&[width]))?;
        if kind == Normalization::Batch {
            self.store.add_buffer(&format!("{prefix}.norm.mean"), Tensor::zeros(&[width]))?;
            self.store.add_buffer(&format!("{prefix}.norm.var"), Tensor::full(&[width], 1.0))?;
        }
        Ok(())
    }

    /// AdaIN producers: `scale = f_M·W + 1`, `shift = f_M·W'` at init.
    fn fusion(&mut self, prefix: &str, k: usize, width: usize) -> Result<()> {
        let bound = 1.0 / (k as f64).sqrt();
        let ws = self.uniform(&[k, width], bound);
        self.add(&format!("{prefix}.scale.w"), ws)?;
        self.add(&format!("{prefix}.scale.b"), Tensor::full(&[width], 1.0))?;
        let wh = self.uniform(&[k, width], bound);
        self.add(&format!("{prefix}.shift.w"), wh)?;
        self.add(&format!("{prefix}.shift.b"), Tensor::zeros(&[width]))?;
        Ok(())
    }
}

fn chain(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(first);
    v.extend_from_slice(hidden);
    v.push(last);
    v
}

fn build_params(cfg: &ArchitectureConfig, seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    let mut init = Init {
        store: &mut store,
        rng: rng::substream(seed, "init"),
    };
    let (n, k, c) = (cfg.n_nodes, cfg.embedding_dim, cfg.n_sites);
    match cfg.kind {
        ArchKind::Fae => {
            let enc = chain(cfg.edge_dim(), &cfg.encoder_hidden, k);
            for l in 0..enc.len() - 1 {
                init.linear(&format!("enc.{l}"), enc[l], enc[l + 1])?;
                if l + 2 < enc.len() || cfg.embedding_norm {
                    init.norm(&format!("enc.{l}"), enc[l + 1], cfg.normalization)?;
                }
            }
            let dec = chain(2 * k, &cfg.decoder_hidden, cfg.edge_dim());
            for l in 0..dec.len() - 1 {
                init.linear(&format!("dec.{l}"), dec[l], dec[l + 1])?;
                if l + 2 < dec.len() {
                    init.norm(&format!("dec.{l}"), dec[l + 1], cfg.normalization)?;
                }
            }
        }
        ArchKind::Gae => {
            let enc = chain(n, &cfg.encoder_hidden, k);
            for l in 0..enc.len() - 1 {
                init.cheb(&format!("enc.{l}"), enc[l], enc[l + 1], cfg.cheb_order)?;
                if l + 2 < enc.len() || cfg.embedding_norm {
                    init.norm(&format!("enc.{l}"), enc[l + 1], cfg.normalization)?;
                }
            }
            let h = &cfg.decoder_hidden;
            init.linear("dec.0", k, h[0])?;
            init.fusion("fuse.0", k, h[0])?;
            for l in 1..h.len() {
                init.cheb(&format!("dec.{l}"), h[l - 1], h[l], cfg.cheb_order)?;
                init.fusion(&format!("fuse.{l}"), k, h[l])?;
            }
            init.linear("head", h[h.len() - 1], n)?;
        }
    }
    let map = chain(c, &cfg.mapper_hidden, k);
    for l in 0..map.len() - 1 {
        init.linear(&format!("map.{l}"), map[l], map[l + 1])?;
    }
    let cls_in = match cfg.kind {
        ArchKind::Fae => k,
        ArchKind::Gae => 2 * k,
    };
    let cls = chain(cls_in, &cfg.classifier_hidden, c);
    for l in 0..cls.len() - 1 {
        let name = format!("cls.{l}");
        if l + 2 == cls.len() {
            init.zero_linear(&name, cls[l], cls[l + 1])?;
        } else {
            init.linear(&name, cls[l], cls[l + 1])?;
        }
    }
    Ok(store)
}

/// Per-subject model inputs, computed once.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    /// `log(s + 1)` of the upper triangle.
    pub log_edges: Vec<f64>,
    pub support: Option<RescaledLaplacian>,
}

/// Batched inputs for one forward pass.
pub(crate) struct BatchInput {
    /// FAE: `[B, D]` log edges. GAE: `[B, N, N]` identity node features.
    pub x: Tensor,
    pub support: Option<RescaledLaplacian>,
}

impl BatchInput {
    pub fn new(cfg: &ArchitectureConfig, items: &[&Prepared]) -> Result<Self> {
        let b = items.len();
        match cfg.kind {
            ArchKind::Fae => {
                let d = cfg.edge_dim();
                let mut data = Vec::with_capacity(b * d);
                for p in items {
                    data.extend_from_slice(&p.log_edges);
                }
                Ok(Self {
                    x: Tensor::new(&[b, d], data)?,
                    support: None,
                })
            }
            ArchKind::Gae => {
                let n = cfg.n_nodes;
                let mut eye = Tensor::zeros(&[b, n, n]);
                for s in 0..b {
                    for i in 0..n {
                        eye.data_mut()[s * n * n + i * n + i] = 1.0;
                    }
                }
                let parts: Vec<&RescaledLaplacian> = items
                    .iter()
                    .map(|p| p.support.as_ref().expect("GAE inputs carry a graph"))
                    .collect();
                Ok(Self {
                    x: eye,
                    support: Some(RescaledLaplacian::stack(&parts)?),
                })
            }
        }
    }

    /// `log(s + 1)` targets `[B, D]`.
    pub fn targets(items: &[&Prepared]) -> Result<Tensor> {
        let d = items.first().map_or(0, |p| p.log_edges.len());
        let data: Vec<f64> = items.iter().flat_map(|p| p.log_edges.iter().copied()).collect();
        Ok(Tensor::new(&[items.len(), d], data)?)
    }
}

pub(crate) fn one_hot(indices: &[usize], c: usize) -> Tensor {
    let mut t = Tensor::zeros(&[indices.len(), c]);
    for (r, &k) in indices.iter().enumerate() {
        t.data_mut()[r * c + k] = 1.0;
    }
    t
}

pub(crate) enum StoreRef<'a> {
    Train(&'a mut ParamStore),
    Eval(&'a ParamStore),
}

impl StoreRef<'_> {
    fn get(&self) -> &ParamStore {
        match self {
            StoreRef::Train(s) => s,
            StoreRef::Eval(s) => s,
        }
    }
}

/// One forward pass over a fresh tape.
pub(crate) struct Forward<'a> {
    pub g: Graph,
    store: StoreRef<'a>,
    cfg: &'a ArchitectureConfig,
}

impl<'a> Forward<'a> {
    pub fn new(cfg: &'a ArchitectureConfig, store: StoreRef<'a>) -> Self {
        Self {
            g: Graph::new(),
            store,
            cfg,
        }
    }

    fn id(&self, name: &str) -> ParamId {
        self.store
            .get()
            .id(name)
            .unwrap_or_else(|| panic!("parameter '{name}' missing from store"))
    }

    fn p(&mut self, name: &str) -> Var {
        let id = self.id(name);
        let store = match &self.store {
            StoreRef::Train(s) => &**s,
            StoreRef::Eval(s) => *s,
        };
        self.g.param(store, id)
    }

    fn linear(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"));
        let b = self.p(&format!("{prefix}.b"));
        let y = self.g.matmul(x, w)?;
        Ok(self.g.add_bias(y, b)?)
    }

    fn cheb(&mut self, prefix: &str, x: Var, support: &RescaledLaplacian) -> Result<Var> {
        let thetas: Vec<Var> = (0..=self.cfg.cheb_order)
            .map(|m| self.p(&format!("{prefix}.theta.{m}")))
            .collect();
        let b = self.p(&format!("{prefix}.b"));
        Ok(chebconv(&mut self.g, x, support, &thetas, Some(b))?)
    }

    fn activate(&mut self, x: Var) -> Result<Var> {
        match self.cfg.activation {
            Activation::Relu => Ok(self.g.relu(x)?),
            Activation::Identity => Ok(x),
        }
    }

    fn normalize(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let eps = self.cfg.norm_eps;
        match self.cfg.normalization {
            Normalization::None => Ok(x),
            Normalization::Layer => {
                let gamma = self.p(&format!("{prefix}.norm.gamma"));
                let beta = self.p(&format!("{prefix}.norm.beta"));
                Ok(self.g.layer_norm(x, gamma, beta, eps)?)
            }
            Normalization::Batch => {
                let gamma = self.p(&format!("{prefix}.norm.gamma"));
                let beta = self.p(&format!("{prefix}.norm.beta"));
                let mean_id = self.id(&format!("{prefix}.norm.mean"));
                let var_id = self.id(&format!("{prefix}.norm.var"));
                let momentum = self.cfg.batch_norm_momentum;
                let y = match &mut self.store {
                    StoreRef::Train(s) => {
                        let (running_mean, running_var) = s.pair_mut(mean_id, var_id);
                        let mode = BatchNormMode::Train {
                            running_mean,
                            running_var,
                            momentum,
                        };
                        self.g.batch_norm(x, gamma, beta, mode, eps)?
                    }
                    StoreRef::Eval(s) => {
                        let mode = BatchNormMode::Eval {
                            running_mean: s.value(mean_id),
                            running_var: s.value(var_id),
                        };
                        self.g.batch_norm(x, gamma, beta, mode, eps)?
                    }
                };
                Ok(y)
            }
        }
    }

    fn hidden_block(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let y = self.normalize(prefix, x)?;
        self.activate(y)
    }

    /// f_E: `[B, K]` (FAE) or `[B, N, K]` (GAE).
    pub fn encode(&mut self, input: &BatchInput) -> Result<Var> {
        let layers = self.cfg.encoder_hidden.len() + 1;
        let mut h = self.g.input(input.x.clone());
        for l in 0..layers {
            let prefix = format!("enc.{l}");
            h = match self.cfg.kind {
                ArchKind::Fae => self.linear(&prefix, h)?,
                ArchKind::Gae => {
                    let support = input.support.as_ref().expect("GAE batch carries a graph");
                    self.cheb(&prefix, h, support)?
                }
            };
            if l + 1 < layers {
                h = self.hidden_block(&prefix, h)?;
            } else if self.cfg.embedding_norm {
                h = self.normalize(&prefix, h)?;
            }
        }
        Ok(h)
    }

    /// Site logits `[B, C]` from an embedding (already passed through any
    /// gradient reversal by the caller).
    pub fn classify(&mut self, emb: Var) -> Result<Var> {
        let mut h = match self.cfg.kind {
            ArchKind::Fae => emb,
            ArchKind::Gae => {
                let mean = self.g.mean_pool_nodes(emb)?;
                let max = self.g.max_pool_nodes(emb)?;
                self.g.concat(mean, max)?
            }
        };
        let layers = self.cfg.classifier_hidden.len() + 1;
        for l in 0..layers {
            h = self.linear(&format!("cls.{l}"), h)?;
            if l + 1 < layers {
                h = self.activate(h)?;
            }
        }
        Ok(h)
    }

    /// f_M `[B, K]` from one-hot site codes `[B, C]`.
    pub fn map_sites(&mut self, one_hot: &Tensor) -> Result<Var> {
        let mut h = self.g.input(one_hot.clone());
        let layers = self.cfg.mapper_hidden.len() + 1;
        for l in 0..layers {
            h = self.linear(&format!("map.{l}"), h)?;
            if l + 1 < layers {
                h = self.activate(h)?;
            }
        }
        Ok(h)
    }

    fn adain(&mut self, l: usize, x: Var, f_m: Var) -> Result<Var> {
        let scale = self.linear(&format!("fuse.{l}.scale"), f_m)?;
        let shift = self.linear(&format!("fuse.{l}.shift"), f_m)?;
        Ok(self.g.adain(x, scale, shift, self.cfg.adain_eps)?)
    }

    /// Log-domain reconstruction `[B, D]` (pre-rounding).
    pub fn decode(&mut self, emb: Var, f_m: Var, support: Option<&RescaledLaplacian>) -> Result<Var> {
        match self.cfg.kind {
            ArchKind::Fae => {
                let mut h = self.g.concat(emb, f_m)?;
                let layers = self.cfg.decoder_hidden.len() + 1;
                for l in 0..layers {
                    let prefix = format!("dec.{l}");
                    h = self.linear(&prefix, h)?;
                    if l + 1 < layers {
                        h = self.hidden_block(&prefix, h)?;
                    }
                }
                Ok(h)
            }
            ArchKind::Gae => {
                let support = support.expect("GAE decoding needs the input graph");
                let mut h = self.linear("dec.0", emb)?;
                h = self.adain(0, h, f_m)?;
                h = self.activate(h)?;
                for l in 1..self.cfg.decoder_hidden.len() {
                    h = self.cheb(&format!("dec.{l}"), h, support)?;
                    h = self.adain(l, h, f_m)?;
                    h = self.activate(h)?;
                }
                let full = self.linear("head", h)?;
                let sym = self.g.symmetrize(full)?;
                Ok(self.g.upper_triangle(sym)?)
            }
        }
    }
}

/// Log-domain upper triangle → valid connectivity matrix.
pub(crate) fn postprocess(n: usize, log_upper: &[f64]) -> Result<ConnectivityMatrix> {
    let mut raw = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = log_upper[k].min(MAX_LOG_OUTPUT).exp_m1();
            raw[i * n + j] = v;
            raw[j * n + i] = v;
            k += 1;
        }
    }
    Ok(ConnectivityMatrix::from_real_postprocessed(n, &raw)?)
}

fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: ArchitectureConfig,
    meta: ModelMeta,
    history: Option<TrainingHistory>,
}

impl HarmonizerModel {
    /// Freshly initialized model; weights come from the `"init"` stream of
    /// `seed`.
    pub fn new(config: ArchitectureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let store = build_params(&config, seed)?;
        Ok(Self {
            config,
            store,
            meta: ModelMeta { epoch: 0, seed },
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn prepare(&self, m: &ConnectivityMatrix) -> Result<Prepared> {
        let n = self.config.n_nodes;
        if m.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: m.n(),
            });
        }
        let log_edges = vectorize_upper(m).values().iter().map(|v| v.ln_1p()).collect();
        let support = match self.config.kind {
            ArchKind::Fae => None,
            ArchKind::Gae => {
                let lap = normalized_laplacian(m);
                Some(RescaledLaplacian::from_normalized(&Tensor::new(&[n, n], lap.values)?)?)
            }
        };
        Ok(Prepared { log_edges, support })
    }

    fn check_site(&self, site: &SiteDescriptor) -> Result<usize> {
        if site.site_index >= self.config.n_sites {
            return Err(Error::UnknownSite(site.site_index));
        }
        Ok(site.site_index)
    }

    fn split_embeddings(&self, t: &Tensor, items: &[&Prepared]) -> Result<Vec<Embedding>> {
        let shape = self.config.embedding_shape();
        let per: usize = shape.iter().product();
        items
            .iter()
            .enumerate()
            .map(|(b, p)| {
                Ok(Embedding {
                    values: Tensor::new(&shape, t.data()[b * per..(b + 1) * per].to_vec())?,
                    support: p.support.clone(),
                })
            })
            .collect()
    }

    pub(crate) fn encode_prepared(&self, items: &[&Prepared]) -> Result<Vec<Embedding>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let input = BatchInput::new(&self.config, items)?;
        let mut fwd = Forward::new(&self.config, StoreRef::Eval(&self.store));
        let emb = fwd.encode(&input)?;
        self.split_embeddings(fwd.g.value(emb), items)
    }

    /// Site-invariant embedding of one subject (inference mode).
    pub fn encode(&self, m: &ConnectivityMatrix) -> Result<Embedding> {
        let p = self.prepare(m)?;
        Ok(self.encode_prepared(&[&p])?.remove(0))
    }

    pub fn encode_batch(&self, ms: &[&ConnectivityMatrix]) -> Result<Vec<Embedding>> {
        let prepared = ms.iter().map(|m| self.prepare(m)).collect::<Result<Vec<_>>>()?;
        self.encode_prepared(&prepared.iter().collect::<Vec<_>>())
    }

    fn stack_embeddings(&self, embs: &[&Embedding]) -> Result<(Tensor, Option<RescaledLaplacian>)> {
        let shape = self.config.embedding_shape();
        let mut data = Vec::with_capacity(embs.len() * shape.iter().product::<usize>());
        for e in embs {
            if e.values.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    actual: e.values.shape().to_vec(),
                });
            }
            data.extend_from_slice(e.values.data());
        }
        let mut full = vec![embs.len()];
        full.extend_from_slice(&shape);
        let support = match self.config.kind {
            ArchKind::Fae => None,
            ArchKind::Gae => {
                let parts = embs
                    .iter()
                    .map(|e| {
                        e.support.as_ref().ok_or_else(|| {
                            Error::InvalidConfig("GAE embedding has no graph support".into())
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(RescaledLaplacian::stack(&parts)?)
            }
        };
        Ok((Tensor::new(&full, data)?, support))
    }

    /// Softmax site probabilities for one embedding (`[K]` or `[N, K]`).
    pub fn classify_site(&self, f_e: &Tensor) -> Result<Vec<f64>> {
        let shape = self.config.embedding_shape();
        if f_e.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: f_e.shape().to_vec(),
            });
        }
        let mut full = vec![1];
        full.extend_from_slice(&shape);
        let mut fwd = Forward::new(&self.config, StoreRef::Eval(&self.store));
        let x = fwd.g.input(f_e.clone().reshape(&full)?);
        let logits = fwd.classify(x)?;
        let z = fwd.g.value(logits).data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        Ok(e.into_iter().map(|v| v / s).collect())
    }

    pub(crate) fn decode_log(&self, embs: &[&Embedding], site_index: usize) -> Result<Vec<Vec<f64>>> {
        if embs.is_empty() {
            return Ok(Vec::new());
        }
        let (stacked, support) = self.stack_embeddings(embs)?;
        let mut fwd = Forward::new(&self.config, StoreRef::Eval(&self.store));
        let e = fwd.g.input(stacked);
        let codes = one_hot(&vec![site_index; embs.len()], self.config.n_sites);
        let f_m = fwd.map_sites(&codes)?;
        let out = fwd.decode(e, f_m, support.as_ref())?;
        let d = self.config.edge_dim();
        Ok(fwd.g.value(out).data().chunks(d).map(<[f64]>::to_vec).collect())
    }

    /// Reconstruction conditioned on `target_site`.
    pub fn decode(&self, f_e: &Embedding, target_site: &SiteDescriptor) -> Result<ConnectivityMatrix> {
        self.decode_batch(&[f_e], target_site).map(|mut v| v.remove(0))
    }

    pub fn decode_batch(&self, embs: &[&Embedding], target_site: &SiteDescriptor) -> Result<Vec<ConnectivityMatrix>> {
        let site = self.check_site(target_site)?;
        self.decode_log(embs, site)?
            .iter()
            .map(|v| postprocess(self.config.n_nodes, v))
            .collect()
    }

    /// `decode(encode(m), target_site)`.
    pub fn harmonize(&self, m: &ConnectivityMatrix, target_site: &SiteDescriptor) -> Result<ConnectivityMatrix> {
        self.harmonize_batch(&[m], target_site).map(|mut v| v.remove(0))
    }

    pub fn harmonize_batch(
        &self,
        ms: &[&ConnectivityMatrix],
        target_site: &SiteDescriptor,
    ) -> Result<Vec<ConnectivityMatrix>> {
        self.check_site(target_site)?;
        let embs = self.encode_batch(ms)?;
        self.decode_batch(&embs.iter().collect::<Vec<_>>(), target_site)
    }

    /// Site cross-entropy of `(matrix, site_index)` pairs through a gradient
    /// reversal of strength `lambda`, with gradients for every parameter.
    /// Uses inference-mode normalization, so the store is not mutated.
    pub fn site_loss_and_grads(
        &self,
        samples: &[(&ConnectivityMatrix, usize)],
        lambda: f64,
    ) -> Result<(f64, Vec<Option<Tensor>>)> {
        let prepared = samples
            .iter()
            .map(|(m, _)| self.prepare(m))
            .collect::<Result<Vec<_>>>()?;
        let sites: Vec<usize> = samples.iter().map(|s| s.1).collect();
        if let Some(&bad) = sites.iter().find(|&&s| s >= self.config.n_sites) {
            return Err(Error::UnknownSite(bad));
        }
        let input = BatchInput::new(&self.config, &prepared.iter().collect::<Vec<_>>())?;
        let mut fwd = Forward::new(&self.config, StoreRef::Eval(&self.store));
        let emb = fwd.encode(&input)?;
        let rev = fwd.g.grad_reversal(emb, lambda)?;
        let logits = fwd.classify(rev)?;
        let ce = fwd.g.softmax_cross_entropy(logits, &one_hot(&sites, self.config.n_sites))?;
        fwd.g.backward(ce)?;
        let loss = fwd.g.value(ce).item();
        Ok((loss, fwd.g.param_grads(&self.store)))
    }

    /// Writes the checkpoint to `path` and the config, metadata and optional
    /// history to the JSON sidecar next to it (same stem, `.json`).
    pub fn save(&self, path: impl AsRef<Path>, history: Option<&TrainingHistory>) -> Result<()> {
        let path = path.as_ref();
        self.store.save(path)?;
        let sidecar = Sidecar {
            config: self.config.clone(),
            meta: self.meta.clone(),
            history: history.cloned(),
        };
        sc_harmon_core::io::write_json(&sidecar, sidecar_path(path))?;
        Ok(())
    }

    /// Loads a checkpoint and its sidecar.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<TrainingHistory>)> {
        let path = path.as_ref();
        let sidecar: Sidecar = sc_harmon_core::io::read_json(sidecar_path(path))?;
        let mut model = Self::new(sidecar.config, sidecar.meta.seed)?;
        model.meta = sidecar.meta;
        model.store.load(path)?;
        Ok((model, sidecar.history))
    }

    /// Raw checkpoint bytes (for equality checks).
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        self.store.to_bytes()
    }

    /// Whether a checkpoint file exists at `path` along with its sidecar.
    pub fn exists(path: impl AsRef<Path>) -> bool {
        let path = path.as_ref();
        fs::metadata(path).is_ok() && fs::metadata(sidecar_path(path)).is_ok()
    }
}
