//! Toy-scale dynamics-aware aggregator.
//!
//! Tokens are laid out per frame as `[camera][n_reg registers][H*W patches]`.
//! Each layer is a global attention over all `S*P` tokens of a batch element
//! followed by a frame attention over the `P` tokens of each frame, both with
//! residual connections and no normalization. After stage 1 a mask head
//! predicts a per-patch suppression `-alpha * sigmoid(-m / tau)`; stage 2 adds
//! it to the attention logits of camera and register queries only.

pub mod attention;
pub mod decoder;
pub mod gradcheck;
pub mod mask_head;
pub mod model;
pub mod serialize;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Domain};

pub use attention::{masked_attention, masked_attention_backward, masked_attention_cached};
pub use mask_head::predict_mask;
pub use model::{aggregator_backward, aggregator_forward, aggregator_forward_cached, frame_attention, global_attention};

/// Stage schedule of the full-size model (layers per stage).
pub const FULL_SCHEDULE: (usize, usize, usize) = (8, 10, 6);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregatorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid aggregator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRole {
    Camera,
    Register,
    Patch,
}

/// Tokens of shape `(B, S, P, d)`, stored as one `(S*P) x d` matrix per
/// batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub data: Vec<DMatrix<f64>>,
    pub n_frames: usize,
    pub n_reg: usize,
    pub grid: (usize, usize),
}

impl TokenSet {
    pub fn new(
        data: Vec<DMatrix<f64>>,
        n_frames: usize,
        n_reg: usize,
        grid: (usize, usize),
    ) -> Result<Self, AggregatorError> {
        let t = Self {
            data,
            n_frames,
            n_reg,
            grid,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn zeros(batch: usize, n_frames: usize, n_reg: usize, grid: (usize, usize), d: usize) -> Self {
        let p = 1 + n_reg + grid.0 * grid.1;
        Self {
            data: vec![DMatrix::zeros(n_frames * p, d); batch],
            n_frames,
            n_reg,
            grid,
        }
    }

    /// Standard-normal tokens from the fixture stream `(seed, [b])`.
    pub fn random(
        batch: usize,
        n_frames: usize,
        n_reg: usize,
        grid: (usize, usize),
        d: usize,
        seed: u64,
    ) -> Self {
        let mut t = Self::zeros(batch, n_frames, n_reg, grid, d);
        for (b, m) in t.data.iter_mut().enumerate() {
            let mut rng = stream(seed, Domain::Fixture, &[b as u64]);
            // Row-major fill so the draw order matches (s, p, c) indexing.
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] = StandardNormal.sample(&mut rng);
                }
            }
        }
        t
    }

    pub fn validate(&self) -> Result<(), AggregatorError> {
        let rows = self.n_frames * self.tokens_per_frame();
        let d = self.data.first().map_or(0, |m| m.ncols());
        for (b, m) in self.data.iter().enumerate() {
            if m.nrows() != rows || m.ncols() != d {
                return Err(AggregatorError::ShapeMismatch(format!(
                    "batch {b}: {}x{}, expected {rows}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(AggregatorError::ShapeMismatch(format!("batch {b}: non-finite token")));
            }
        }
        Ok(())
    }

    pub fn batch(&self) -> usize {
        self.data.len()
    }

    pub fn width(&self) -> usize {
        self.data.first().map_or(0, |m| m.ncols())
    }

    pub fn n_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn tokens_per_frame(&self) -> usize {
        1 + self.n_reg + self.n_patches()
    }

    pub fn role(&self, p: usize) -> TokenRole {
        match p {
            0 => TokenRole::Camera,
            p if p <= self.n_reg => TokenRole::Register,
            _ => TokenRole::Patch,
        }
    }

    /// Row of token `(s, p)` inside a batch matrix.
    pub fn row(&self, s: usize, p: usize) -> usize {
        s * self.tokens_per_frame() + p
    }

    pub fn get(&self, b: usize, s: usize, p: usize, c: usize) -> f64 {
        self.data[b][(self.row(s, p), c)]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: self
                .data
                .iter()
                .map(|m| DMatrix::zeros(m.nrows(), m.ncols()))
                .collect(),
            ..self.clone()
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs().max())
            .fold(0.0, f64::max)
    }

    /// Max abs difference restricted to tokens of `role`.
    pub fn max_abs_diff_role(&self, other: &Self, role: TokenRole) -> f64 {
        let p = self.tokens_per_frame();
        let mut out: f64 = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            for i in (0..a.nrows()).filter(|i| self.role(i % p) == role) {
                out = out.max((a.row(i) - b.row(i)).abs().max());
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Per-key additive suppression of shape `(B, S, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsMask {
    /// One `S*P` vector per batch element; non-patch entries are 0.
    pub values: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl DynamicsMask {
    pub fn zeros(tokens: &TokenSet) -> Self {
        let n = tokens.n_frames * tokens.tokens_per_frame();
        Self {
            values: vec![vec![0.0; n]; tokens.batch()],
            alpha: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
}

impl AttentionParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            wq: DMatrix::zeros(d, d),
            wk: DMatrix::zeros(d, d),
            wv: DMatrix::zeros(d, d),
            wo: DMatrix::zeros(d, d),
        }
    }

    fn random(d: usize, rng: &mut crate::rng::StreamRng, gain: f64) -> Self {
        let s = gain / (d as f64).sqrt();
        let mut m = || DMatrix::from_fn(d, d, |_, _| s * Distribution::<f64>::sample(&StandardNormal, &mut *rng));
        Self {
            wq: m(),
            wk: m(),
            wv: m(),
            wo: m(),
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        self.wq += &o.wq;
        self.wk += &o.wk;
        self.wv += &o.wv;
        self.wo += &o.wo;
    }

    fn groups_mut(&mut self) -> [(&'static str, &mut [f64]); 4] {
        [
            ("wq", self.wq.as_mut_slice()),
            ("wk", self.wk.as_mut_slice()),
            ("wv", self.wv.as_mut_slice()),
            ("wo", self.wo.as_mut_slice()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskHeadParams {
    /// `d x d_low` projection applied to patch tokens.
    pub proj: DMatrix<f64>,
    /// Depthwise kernel, index `(ky * k + kx) * d_low + c`.
    pub conv_kernel: Vec<f64>,
    pub conv_bias: Vec<f64>,
    /// Channel weights reducing `d_low` maps to one logit map.
    pub out_mix: Vec<f64>,
    pub tau_logit: f64,
    pub alpha_logit: f64,
    pub kernel_size: usize,
    pub epsilon: f64,
}

impl MaskHeadParams {
    pub fn d_low(&self) -> usize {
        self.proj.ncols()
    }

    pub fn tau(&self) -> f64 {
        softplus_param(self.tau_logit, self.epsilon)
    }

    pub fn alpha(&self) -> f64 {
        softplus_param(self.alpha_logit, self.epsilon)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            proj: DMatrix::zeros(self.proj.nrows(), self.proj.ncols()),
            conv_kernel: vec![0.0; self.conv_kernel.len()],
            conv_bias: vec![0.0; self.conv_bias.len()],
            out_mix: vec![0.0; self.out_mix.len()],
            tau_logit: 0.0,
            alpha_logit: 0.0,
            kernel_size: self.kernel_size,
            epsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), AggregatorError> {
        let k = self.kernel_size;
        let dl = self.d_low();
        if k % 2 == 0 {
            return Err(AggregatorError::InvalidConfig(format!("kernel size {k} must be odd")));
        }
        if !(self.epsilon > 0.0) {
            return Err(AggregatorError::InvalidConfig("epsilon must be > 0".into()));
        }
        if self.conv_kernel.len() != k * k * dl || self.conv_bias.len() != dl || self.out_mix.len() != dl {
            return Err(AggregatorError::ShapeMismatch("mask head parameter lengths".into()));
        }
        Ok(())
    }

    fn groups_mut(&mut self) -> [(&'static str, &mut [f64]); 6] {
        [
            ("proj", self.proj.as_mut_slice()),
            ("conv_kernel", &mut self.conv_kernel),
            ("conv_bias", &mut self.conv_bias),
            ("out_mix", &mut self.out_mix),
            ("tau_logit", std::slice::from_mut(&mut self.tau_logit)),
            ("alpha_logit", std::slice::from_mut(&mut self.alpha_logit)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub global: AttentionParams,
    pub frame: AttentionParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    pub n_stage1: usize,
    pub n_stage2: usize,
    pub n_stage3: usize,
    pub n_reg: usize,
    pub d_model: usize,
    pub kernel_size: usize,
    pub epsilon: f64,
    /// Disable to run the mask-free baseline with the same weights.
    pub use_mask: bool,
    pub apply_mask_to: Vec<TokenRole>,
    /// Std of initial attention weights times `sqrt(d)`.
    pub init_gain: f64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            n_stage1: 2,
            n_stage2: 2,
            n_stage3: 1,
            n_reg: 4,
            d_model: 8,
            kernel_size: 3,
            epsilon: 1e-4,
            use_mask: true,
            apply_mask_to: vec![TokenRole::Camera, TokenRole::Register],
            init_gain: 0.5,
        }
    }
}

impl AggregatorConfig {
    pub fn full_schedule() -> Self {
        let (n_stage1, n_stage2, n_stage3) = FULL_SCHEDULE;
        Self {
            n_stage1,
            n_stage2,
            n_stage3,
            ..Self::default()
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_stage1 + self.n_stage2 + self.n_stage3
    }

    pub fn d_low(&self) -> usize {
        (self.d_model / 4).max(1)
    }

    /// Layer indices updated during fine-tuning: the dynamics-aware stage.
    pub fn is_trainable(&self, layer: usize) -> bool {
        (self.n_stage1..self.n_stage1 + self.n_stage2).contains(&layer)
    }

    pub fn trainable_layers(&self) -> Vec<usize> {
        (0..self.n_layers()).filter(|&l| self.is_trainable(l)).collect()
    }

    pub fn validate(&self) -> Result<(), AggregatorError> {
        if self.use_mask && self.n_stage2 == 0 {
            return Err(AggregatorError::InvalidConfig("n_stage2 must be >= 1 when the mask is enabled".into()));
        }
        if self.d_model == 0 {
            return Err(AggregatorError::InvalidConfig("d_model must be >= 1".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(AggregatorError::InvalidConfig(format!(
                "kernel_size {} must be odd",
                self.kernel_size
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(AggregatorError::InvalidConfig("epsilon must be > 0".into()));
        }
        Ok(())
    }

    pub fn masks_role(&self, role: TokenRole) -> bool {
        self.apply_mask_to.contains(&role)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorParams {
    pub layers: Vec<LayerParams>,
    pub mask_head: MaskHeadParams,
}

impl AggregatorParams {
    /// Gaussian initialization from the `(seed, Params)` stream.
    pub fn init(config: &AggregatorConfig, seed: u64) -> Self {
        let d = config.d_model;
        let dl = config.d_low();
        let k = config.kernel_size;
        let mut rng = stream(seed, Domain::Params, &[]);
        let layers = (0..config.n_layers())
            .map(|_| LayerParams {
                global: AttentionParams::random(d, &mut rng, config.init_gain),
                frame: AttentionParams::random(d, &mut rng, config.init_gain),
            })
            .collect();
        let mut normal = |s: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            s * z
        };
        let proj = DMatrix::from_fn(d, dl, |_, _| normal(1.0 / (d as f64).sqrt()));
        let conv_kernel = (0..k * k * dl).map(|_| normal(1.0 / k as f64)).collect();
        let conv_bias = (0..dl).map(|_| normal(0.1)).collect();
        let out_mix = (0..dl).map(|_| normal(1.0 / (dl as f64).sqrt())).collect();
        Self {
            layers,
            mask_head: MaskHeadParams {
                proj,
                conv_kernel,
                conv_bias,
                out_mix,
                tau_logit: 0.0,
                alpha_logit: 0.0,
                kernel_size: k,
                epsilon: config.epsilon,
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.mask_head.proj.nrows();
        Self {
            layers: self
                .layers
                .iter()
                .map(|_| LayerParams {
                    global: AttentionParams::zeros(d),
                    frame: AttentionParams::zeros(d),
                })
                .collect(),
            mask_head: self.mask_head.zeros_like(),
        }
    }

    pub fn d_model(&self) -> usize {
        self.mask_head.proj.nrows()
    }

    /// Visits every learnable array in serialization order.
    pub fn for_each_group_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, g) in layer.global.groups_mut() {
                f(&format!("layer{i}.global.{name}"), g);
            }
            for (name, g) in layer.frame.groups_mut() {
                f(&format!("layer{i}.frame.{name}"), g);
            }
        }
        for (name, g) in self.mask_head.groups_mut() {
            f(&format!("mask.{name}"), g);
        }
    }

    pub fn group_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.clone().for_each_group_mut(|n, _| names.push(n.to_string()));
        names
    }

    pub fn validate(&self, config: &AggregatorConfig) -> Result<(), AggregatorError> {
        if self.layers.len() != config.n_layers() {
            return Err(AggregatorError::ShapeMismatch(format!(
                "{} layers, config needs {}",
                self.layers.len(),
                config.n_layers()
            )));
        }
        let d = self.d_model();
        for (i, l) in self.layers.iter().enumerate() {
            for m in [&l.global, &l.frame] {
                if [&m.wq, &m.wk, &m.wv, &m.wo].iter().any(|w| w.shape() != (d, d)) {
                    return Err(AggregatorError::ShapeMismatch(format!("layer {i} weights")));
                }
            }
        }
        self.mask_head.validate()
    }
}

/// `ln(1 + exp(logit)) + epsilon`, stable for large `|logit|`.
pub fn softplus_param(logit: f64, epsilon: f64) -> f64 {
    softplus(logit) + epsilon
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
