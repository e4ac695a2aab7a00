//! SNN-ViT assembly: stem, GL-SPS, saccadic transformer blocks, GAP head.
//!
//! Activations between layers are membrane potentials laid out for
//! convolution, `[T·B, D, H, W]`, with the time index outermost. Spiking
//! layers reshape to `[T, ...]` and run the LIF recurrence over the first axis.
//! Every forward pass is recorded on a [`Tape`]; inference simply records
//! constants and never calls `backward`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BnMode, ConvGeometry};
use crate::attention::{AlphaMode, AttentionVariant};
use crate::autodiff::{BatchStats, NodeId, NormStats, Tape};
use crate::error::{shape_err, Error, Result};
use crate::neurons::{LifParams, SaccadicParams, SurrogateSpec};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemConfig {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub channels: usize,
    /// Side of the square token grid; `N = grid²`.
    pub grid: usize,
    pub blocks: usize,
    pub variant: AttentionVariant,
    pub alpha_mode: AlphaMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub t_steps: usize,
    pub in_channels: usize,
    pub image_size: usize,
    pub stem: StemConfig,
    pub stages: Vec<StageConfig>,
    pub qkv_kernel: usize,
    pub glsps_kernel: usize,
    pub glsps_dilations: [usize; 2],
    pub classes: usize,
    pub lif: LifParams<f64>,
    pub surrogate: SurrogateSpec,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Typical firing rate used to initialise saccadic thresholds.
    pub p0: f64,
}

impl Default for ModelConfig {
    /// Desk-scale network for 16×16 single-channel inputs.
    fn default() -> Self {
        Self {
            t_steps: 4,
            in_channels: 1,
            image_size: 16,
            stem: StemConfig { kernel: 3, stride: 2 },
            stages: vec![StageConfig {
                channels: 8,
                grid: 8,
                blocks: 1,
                variant: AttentionVariant::SssaV2,
                alpha_mode: AlphaMode::Learned,
            }],
            qkv_kernel: 3,
            glsps_kernel: 3,
            glsps_dilations: [1, 2],
            classes: 2,
            lif: LifParams::default(),
            surrogate: SurrogateSpec::default(),
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            p0: 0.15,
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ModelConfig {
    fn stem_geometry(&self) -> Result<ConvGeometry> {
        ConvGeometry::new(self.stem.kernel, self.stem.stride, 1, self.stem.kernel / 2)
    }

    fn down_geometry() -> ConvGeometry {
        ConvGeometry {
            kernel: 3,
            stride: 2,
            dilation: 1,
            padding: 1,
        }
    }

    fn glsps_geometry(&self, branch: usize) -> ConvGeometry {
        ConvGeometry::same(self.glsps_kernel, self.glsps_dilations[branch])
    }

    pub fn block_config(&self, stage: usize) -> BlockConfig {
        let s = &self.stages[stage];
        BlockConfig {
            t_steps: self.t_steps,
            grid: s.grid,
            d_model: s.channels,
            variant: s.variant,
            alpha_mode: s.alpha_mode,
            qkv_kernel: self.qkv_kernel,
            lif: self.lif,
            surrogate: self.surrogate,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
            p0: self.p0,
        }
    }

    /// Checks the downsampling chain and every layer geometry.
    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 || self.in_channels == 0 || self.classes == 0 {
            return config_err("t_steps, in_channels and classes must be positive");
        }
        if self.stages.is_empty() {
            return config_err("at least one stage is required");
        }
        if self.stem.kernel % 2 == 0 || self.qkv_kernel % 2 == 0 || self.glsps_kernel % 2 == 0 {
            return config_err("kernels must be odd so SAME padding exists");
        }
        if self.glsps_dilations.iter().any(|&d| d == 0) {
            return config_err("GL-SPS dilations must be at least 1");
        }
        self.lif.validate()?;
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return config_err("batch-norm epsilon must be positive and momentum in (0, 1]");
        }
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return config_err(format!("p0 {} outside (0, 1)", self.p0));
        }
        let mut side = self
            .stem_geometry()
            .and_then(|g| g.out_extent(self.image_size))
            .map_err(|e| Error::Config(format!("stem does not fit the image: {e}")))?;
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                if side % 2 != 0 {
                    return config_err(format!("stage {i}: grid {side} cannot be halved"));
                }
                side = Self::down_geometry().out_extent(side)?;
            }
            if s.grid != side {
                return config_err(format!(
                    "stage {i} declares a {0}x{0} grid but the downsampling chain yields {side}x{side}",
                    s.grid
                ));
            }
            if s.channels == 0 || s.blocks == 0 {
                return config_err(format!("stage {i} needs positive channels and blocks"));
            }
            for b in 0..2 {
                let g = self.glsps_geometry(b);
                if g.out_extent(side)? != side {
                    return config_err(format!("GL-SPS branch {b} changes the grid size"));
                }
            }
        }
        Ok(())
    }
}

/// Everything one transformer block needs to know about its shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub t_steps: usize,
    pub grid: usize,
    pub d_model: usize,
    pub variant: AttentionVariant,
    pub alpha_mode: AlphaMode,
    pub qkv_kernel: usize,
    pub lif: LifParams<f64>,
    pub surrogate: SurrogateSpec,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub p0: f64,
}

impl BlockConfig {
    pub fn n_tokens(&self) -> usize {
        self.grid * self.grid
    }

    fn uses_keys(&self) -> bool {
        !(self.variant == AttentionVariant::SssaV2 && self.alpha_mode == AlphaMode::Learned)
    }

    fn saccadic(&self) -> bool {
        self.variant != AttentionVariant::SsaBaseline
    }

    fn learned_alpha(&self) -> bool {
        self.variant == AttentionVariant::SssaV2 && self.alpha_mode == AlphaMode::Learned
    }

    /// Fresh parameters under `prefix`.
    pub fn init_params<F: Scalar>(&self, prefix: &str, store: &mut ParamStore<F>, rng: &mut impl Rng) {
        let d = self.d_model;
        let k = self.qkv_kernel;
        let mut proj = vec!["q", "v"];
        if self.uses_keys() {
            proj.push("k");
        }
        for p in proj {
            store.insert(format!("{prefix}w{p}"), kaiming(vec![d, d, k, k], rng));
            store.insert_bn(&format!("{prefix}{p}_bn"), d);
        }
        if self.saccadic() {
            let t = self.t_steps;
            let noise = Normal::new(0.0, 0.01).expect("valid normal");
            let m_w = Tensor::from_fn(vec![t, t], |i| {
                let (r, c) = (i / t, i % t);
                match r.cmp(&c) {
                    std::cmp::Ordering::Equal => F::one(),
                    std::cmp::Ordering::Greater => F::of(noise.sample(rng)),
                    std::cmp::Ordering::Less => F::zero(),
                }
            });
            // typical pre-threshold value at firing rate p0
            let q_sum = d as f64 * self.p0;
            let typical = if self.learned_alpha() {
                q_sum
            } else {
                q_sum * self.n_tokens() as f64 * d as f64 * self.p0
            };
            store.insert(format!("{prefix}m_w"), m_w);
            store.insert(format!("{prefix}v_th"), Tensor::full(vec![t], F::of(typical)));
            if self.learned_alpha() {
                store.insert(format!("{prefix}alpha"), Tensor::full(vec![1], F::one()));
            }
        }
        store.insert(format!("{prefix}proj.w"), kaiming(vec![d, d, 1, 1], rng));
        store.insert_bn(&format!("{prefix}proj_bn"), d);
        store.insert(format!("{prefix}mlp.w"), kaiming(vec![d, d, 1, 1], rng));
        store.insert_bn(&format!("{prefix}mlp_bn"), d);
    }
}

fn kaiming<F: Scalar>(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor<F> {
    let fan_in: usize = shape[1..].iter().product();
    let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("valid normal");
    Tensor::from_fn(shape, |_| F::of(normal.sample(rng)))
}

/// Role of a named tensor, derived from its name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution or linear weights; subject to weight decay.
    Weight,
    /// Batch-norm scale and shift, saccadic thresholds, head bias.
    Affine,
    /// Lower-triangular temporal mixer `M_w`.
    Mixer,
    /// Learned positive scale of the V2 learned mode.
    Scale,
    /// Batch-norm running statistics; never trained.
    Buffer,
}

impl ParamKind {
    pub fn of(name: &str) -> Self {
        if name.ends_with(".rm") || name.ends_with(".rv") {
            ParamKind::Buffer
        } else if name.ends_with("m_w") {
            ParamKind::Mixer
        } else if name.ends_with("alpha") {
            ParamKind::Scale
        } else if name.ends_with(".w") || name.ends_with("wq") || name.ends_with("wk") || name.ends_with("wv") {
            ParamKind::Weight
        } else {
            ParamKind::Affine
        }
    }

    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }
}

/// Named tensors of a model, in a stable (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F> {
    tensors: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, t: Tensor<F>) {
        self.tensors.insert(name, t);
    }

    fn insert_bn(&mut self, prefix: &str, c: usize) {
        self.insert(format!("{prefix}.gamma"), Tensor::ones(vec![c]));
        self.insert(format!("{prefix}.beta"), Tensor::zeros(vec![c]));
        self.insert(format!("{prefix}.rm"), Tensor::zeros(vec![c]));
        self.insert(format!("{prefix}.rv"), Tensor::ones(vec![c]));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Folds recorded batch statistics into the `*.rm` / `*.rv` buffers.
    pub fn apply_bn_stats(&mut self, stats: &[(String, BatchStats<F>)], momentum: F) -> Result<()> {
        let keep = F::one() - momentum;
        for (prefix, s) in stats {
            let bessel = if s.count > 1 {
                F::of(s.count as f64 / (s.count as f64 - 1.0))
            } else {
                F::one()
            };
            let rm = self.get_mut(&format!("{prefix}.rm"))?;
            for (r, &m) in rm.data_mut().iter_mut().zip(&s.mean) {
                *r = keep * *r + momentum * m;
            }
            let rv = self.get_mut(&format!("{prefix}.rv"))?;
            for (r, &v) in rv.data_mut().iter_mut().zip(&s.var) {
                *r = keep * *r + momentum * v * bessel;
            }
        }
        Ok(())
    }
}

/// Parameters of a standalone block (names without a prefix).
pub type BlockParams<F> = ParamStore<F>;

/// Records layers on a tape, creating parameter nodes on first use.
pub struct Recorder<'a, F> {
    pub tape: Tape<F>,
    store: &'a ParamStore<F>,
    nodes: BTreeMap<String, NodeId>,
    trainable: bool,
    mode: BnMode,
    eps: F,
    stats: Vec<(String, BatchStats<F>)>,
}

impl<'a, F: Scalar> Recorder<'a, F> {
    pub fn new(store: &'a ParamStore<F>, mode: BnMode, trainable: bool, eps: f64) -> Self {
        Self {
            tape: Tape::new(),
            store,
            nodes: BTreeMap::new(),
            trainable,
            mode,
            eps: F::of(eps),
            stats: Vec::new(),
        }
    }

    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(id) = self.nodes.get(name) {
            return Ok(*id);
        }
        let value = self.store.get(name)?.clone();
        let id = if self.trainable && ParamKind::of(name).trainable() {
            self.tape.param(value)
        } else {
            self.tape.constant(value)
        };
        self.nodes.insert(name.to_string(), id);
        Ok(id)
    }

    /// Parameter nodes created so far, by name.
    pub fn param_nodes(&self) -> &BTreeMap<String, NodeId> {
        &self.nodes
    }

    pub fn take_stats(&mut self) -> Vec<(String, BatchStats<F>)> {
        std::mem::take(&mut self.stats)
    }

    fn bn(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        match self.mode {
            BnMode::Train => {
                let (y, stats) = self.tape.batch_norm(x, gamma, beta, NormStats::Batch, self.eps)?;
                if let Some(s) = stats {
                    self.stats.push((prefix.to_string(), s));
                }
                Ok(y)
            }
            BnMode::Infer => {
                let mean = self.store.get(&format!("{prefix}.rm"))?.data().to_vec();
                let var = self.store.get(&format!("{prefix}.rv"))?.data().to_vec();
                let (y, _) = self.tape.batch_norm(
                    x,
                    gamma,
                    beta,
                    NormStats::Fixed {
                        mean: &mean,
                        var: &var,
                    },
                    self.eps,
                )?;
                Ok(y)
            }
        }
    }

    fn conv(&mut self, x: NodeId, weight: &str, geom: ConvGeometry) -> Result<NodeId> {
        let w = self.param(weight)?;
        self.tape.conv2d(x, w, geom)
    }

    /// LIF over the leading `T` of a `[T·B, ...]` node; output keeps the input shape.
    fn lif(&mut self, x: NodeId, t_steps: usize, lif: &LifParams<f64>, spec: SurrogateSpec) -> Result<NodeId> {
        let shape = self.tape.value(x).shape().to_vec();
        let len = self.tape.value(x).len();
        let flat = self.tape.reshape(x, vec![t_steps, len / t_steps])?;
        let params = LifParams {
            tau: F::of(lif.tau),
            v_th: F::of(lif.v_th),
            v_reset: F::of(lif.v_reset),
        };
        let s = self.tape.lif(flat, params, spec)?;
        self.tape.reshape(s, shape)
    }

    /// One transformer block on `u0: [T·B, D, H, W]`.
    pub fn block(&mut self, u0: NodeId, prefix: &str, cfg: &BlockConfig) -> Result<NodeId> {
        let shape = self.tape.value(u0).shape().to_vec();
        let (tb, d) = (shape[0], shape[1]);
        let t = cfg.t_steps;
        let n = cfg.n_tokens();
        if shape.len() != 4 || d != cfg.d_model || shape[2] * shape[3] != n || tb % t != 0 {
            return shape_err(format!("block input {shape:?} does not match its configuration"));
        }
        let b = tb / t;
        let qkv_geom = ConvGeometry::same(cfg.qkv_kernel, 1);
        let s0 = self.lif(u0, t, &cfg.lif, cfg.surrogate)?;

        // spikes in token layout [T·B, N, D]
        let project = |r: &mut Self, which: &str| -> Result<NodeId> {
            let y = r.conv(s0, &format!("{prefix}w{which}"), qkv_geom)?;
            let y = r.bn(y, &format!("{prefix}{which}_bn"))?;
            let s = r.lif(y, t, &cfg.lif, cfg.surrogate)?;
            let s = r.tape.reshape(s, vec![tb, d, n])?;
            r.tape.transpose_last2(s)
        };
        let q = project(self, "q")?;
        let v = project(self, "v")?;
        let k = if cfg.uses_keys() { Some(project(self, "k")?) } else { None };

        let attended = if cfg.variant == AttentionVariant::SsaBaseline {
            let k = k.expect("baseline uses keys");
            let scores = self.tape.batch_matmul(q, k, true)?;
            self.tape.batch_matmul(scores, v, false)?
        } else {
            let q_sum = self.tape.sum_last(q)?;
            let q_time = self.tape.reshape(q_sum, vec![t, b * n])?;
            let m_w = self.param(&format!("{prefix}m_w"))?;
            let h = match (cfg.variant, cfg.alpha_mode) {
                (AttentionVariant::SssaV1, _) => {
                    let k_sum = self.tape.sum_last(k.expect("V1 uses keys"))?;
                    let cro = self.tape.outer(q_sum, k_sum)?;
                    let patch = self.tape.sum_last(cro)?;
                    let patch = self.tape.reshape(patch, vec![t, b * n])?;
                    self.tape.matmul(m_w, patch)?
                }
                (_, AlphaMode::Computed) => {
                    let k_sum = self.tape.sum_last(k.expect("computed alpha uses keys"))?;
                    let alpha = self.tape.sum_last(k_sum)?;
                    let mixed = self.tape.matmul(m_w, q_time)?;
                    self.tape.mul_blocks(mixed, alpha)?
                }
                (_, AlphaMode::Learned) => {
                    let alpha = self.param(&format!("{prefix}alpha"))?;
                    let mixed = self.tape.matmul(m_w, q_time)?;
                    self.tape.scale_by(mixed, alpha)?
                }
            };
            let v_th = self.param(&format!("{prefix}v_th"))?;
            let s = self.tape.threshold(h, v_th, cfg.surrogate)?;
            let s = self.tape.reshape(s, vec![tb, n])?;
            self.tape.mask(s, v)?
        };

        let a = self.tape.transpose_last2(attended)?;
        let a = self.tape.reshape(a, shape.clone())?;
        let one = ConvGeometry::same(1, 1);
        let y = self.conv(a, &format!("{prefix}proj.w"), one)?;
        let y = self.bn(y, &format!("{prefix}proj_bn"))?;
        let u1 = self.tape.add(u0, y)?;

        let s1 = self.lif(u1, t, &cfg.lif, cfg.surrogate)?;
        let y = self.conv(s1, &format!("{prefix}mlp.w"), one)?;
        let y = self.bn(y, &format!("{prefix}mlp_bn"))?;
        self.tape.add(u1, y)
    }
}

/// Transformer block on `[T, N, D]` membrane potentials (batch of one).
///
/// In train mode the batch-norm running statistics in `params` are updated.
pub fn sssa_block<F: Scalar>(
    u0: &Tensor<F>,
    cfg: &BlockConfig,
    params: &mut BlockParams<F>,
    mode: BnMode,
) -> Result<Tensor<F>> {
    let (t, n, d) = match *u0.shape() {
        [t, n, d] => (t, n, d),
        _ => return shape_err(format!("sssa_block expects [T, N, D], got {:?}", u0.shape())),
    };
    if t != cfg.t_steps || n != cfg.n_tokens() || d != cfg.d_model {
        return shape_err(format!("input {:?} does not match block configuration", u0.shape()));
    }
    let (out, stats) = {
        let mut r = Recorder::new(params, mode, false, cfg.bn_eps);
        let x = r.tape.constant(u0.clone());
        let x = r.tape.transpose_last2(x)?;
        let x = r.tape.reshape(x, vec![t, d, cfg.grid, cfg.grid])?;
        let y = r.block(x, "", cfg)?;
        let y = r.tape.reshape(y, vec![t, d, n])?;
        let y = r.tape.transpose_last2(y)?;
        (r.tape.value(y).clone(), r.take_stats())
    };
    params.apply_bn_stats(&stats, F::of(cfg.bn_momentum))?;
    Ok(out)
}

/// A configured network together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnVit<F> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
}

/// Result of recording one forward pass.
pub struct Recorded<'a, F> {
    pub recorder: Recorder<'a, F>,
    pub logits: NodeId,
}

impl<F: Scalar> SnnVit<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::stream_at(seed, 0);
        let mut params = ParamStore::new();
        let k = config.stem.kernel;
        let mut c_prev = config.in_channels;
        for (i, s) in config.stages.iter().enumerate() {
            let c = s.channels;
            let dk = if i == 0 { k } else { 3 };
            params.insert(format!("s{i}.down.w"), kaiming(vec![c, c_prev, dk, dk], &mut rng));
            let gk = config.glsps_kernel;
            params.insert(format!("s{i}.glsps.conv.w"), kaiming(vec![c, c, gk, gk], &mut rng));
            params.insert(format!("s{i}.glsps.dconv.w"), kaiming(vec![c, c, gk, gk], &mut rng));
            params.insert_bn(&format!("s{i}.glsps.bn1"), c);
            params.insert_bn(&format!("s{i}.glsps.bn2"), c);
            let bc = config.block_config(i);
            for j in 0..s.blocks {
                bc.init_params(&format!("s{i}.b{j}."), &mut params, &mut rng);
            }
            c_prev = c;
        }
        params.insert("head.w".into(), Tensor::zeros(vec![c_prev, config.classes]));
        params.insert("head.b".into(), Tensor::zeros(vec![config.classes]));
        Ok(Self { config, params })
    }

    /// Expected input shape `[T, B, C, H, W]` for a batch of `b`.
    pub fn input_shape(&self, b: usize) -> Vec<usize> {
        let c = &self.config;
        vec![c.t_steps, b, c.in_channels, c.image_size, c.image_size]
    }

    /// Records the full network on a fresh tape. `input` is `[T, B, C, H, W]`.
    pub fn record(&self, input: &Tensor<F>, mode: BnMode, trainable: bool) -> Result<Recorded<'_, F>> {
        let cfg = &self.config;
        let shape = input.shape();
        if shape.len() != 5 || shape[0] != cfg.t_steps || shape[2..] != self.input_shape(1)[2..] {
            return Err(Error::Config(format!(
                "input {shape:?} does not match model input [T={}, B, {}, {}, {}]",
                cfg.t_steps, cfg.in_channels, cfg.image_size, cfg.image_size
            )));
        }
        let (t, b) = (shape[0], shape[1]);
        let mut r = Recorder::new(&self.params, mode, trainable, cfg.bn_eps);
        let x = r.tape.constant(input.clone());
        let mut u = r.tape.reshape(x, vec![t * b, shape[2], shape[3], shape[4]])?;
        for (i, stage) in cfg.stages.iter().enumerate() {
            let y = if i == 0 {
                r.conv(u, &format!("s{i}.down.w"), cfg.stem_geometry()?)?
            } else {
                let s = r.lif(u, t, &cfg.lif, cfg.surrogate)?;
                r.conv(s, &format!("s{i}.down.w"), ModelConfig::down_geometry())?
            };
            let local = r.conv(y, &format!("s{i}.glsps.conv.w"), cfg.glsps_geometry(0))?;
            let local = r.bn(local, &format!("s{i}.glsps.bn1"))?;
            let global = r.conv(y, &format!("s{i}.glsps.dconv.w"), cfg.glsps_geometry(1))?;
            let global = r.bn(global, &format!("s{i}.glsps.bn2"))?;
            if r.tape.value(local).shape() != r.tape.value(global).shape() {
                return config_err("GL-SPS branches disagree in shape");
            }
            u = r.tape.add(local, global)?;
            let bc = cfg.block_config(i);
            for j in 0..stage.blocks {
                u = r.block(u, &format!("s{i}.b{j}."), &bc)?;
            }
        }
        let s = r.lif(u, t, &cfg.lif, cfg.surrogate)?;
        let d = r.tape.value(s).shape()[1];
        let n = r.tape.value(s).len() / (t * b * d);
        let s = r.tape.reshape(s, vec![t, b, d, n])?;
        let pooled = r.tape.mean_axes(s, &[0, 3])?;
        let w = r.param("head.w")?;
        let bias = r.param("head.b")?;
        let y = r.tape.matmul(pooled, w)?;
        let logits = r.tape.add_bias(y, bias)?;
        Ok(Recorded { recorder: r, logits })
    }

    /// Inference logits `[B, classes]` using running batch-norm statistics.
    pub fn logits(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        let rec = self.record(input, BnMode::Infer, false)?;
        Ok(rec.recorder.tape.value(rec.logits).clone())
    }

    /// Saccadic parameters of a block, if it has any.
    pub fn saccadic(&self, stage: usize, block: usize) -> Result<Option<SaccadicParams<F>>> {
        let p = format!("s{stage}.b{block}.");
        if !self.params.contains(&format!("{p}m_w")) {
            return Ok(None);
        }
        let alpha = match self.params.get(&format!("{p}alpha")) {
            Ok(a) => a.data()[0],
            Err(_) => F::one(),
        };
        SaccadicParams::new(
            self.params.get(&format!("{p}m_w"))?.clone(),
            self.params.get(&format!("{p}v_th"))?.clone(),
            alpha,
        )
        .map(Some)
    }
}

/// Logits `[classes]` for one `[T, C, H, W]` input.
pub fn model_forward<F: Scalar>(image: &Tensor<F>, model: &SnnVit<F>) -> Result<Tensor<F>> {
    let s = image.shape();
    if s.len() != 4 {
        return shape_err(format!("model_forward expects [T, C, H, W], got {s:?}"));
    }
    let x = image.reshape(vec![s[0], 1, s[1], s[2], s[3]])?;
    let y = model.logits(&x)?;
    y.into_reshaped(vec![model.config.classes])
}
