//! Multi-task objective: Huber camera loss on the 9-vector encoding,
//! confidence-weighted L1 on dense maps with a `-log conf` regularizer,
//! multi-scale gradient matching, and the weighted total.
//!
//! Every loss has a `*_grad` companion returning the analytic gradient
//! w.r.t. the prediction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("no valid pixels")]
    EmptyValidSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// `[qx qy qz qw | tx ty tz | fov_h fov_w]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraEncoding(pub [f64; 9]);

impl CameraEncoding {
    pub fn quaternion(&self) -> [f64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let qn = self.quaternion().iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-10 {
            return Err(LossError::InvalidInput(format!("quaternion norm {qn}")));
        }
        if !(self.0[7] > 0.0 && self.0[8] > 0.0) {
            return Err(LossError::InvalidInput("field of view must be positive".into()));
        }
        Ok(())
    }
}

/// An `h x w` map with `channels` values per pixel (row-major, channel
/// fastest) and one positive confidence per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePrediction {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub confidence: Vec<f64>,
}

impl DensePrediction {
    pub fn validate(&self) -> Result<(), LossError> {
        let n = self.height * self.width;
        if self.values.len() != n * self.channels || self.confidence.len() != n {
            return Err(LossError::ShapeMismatch(format!(
                "{}x{}x{} map with {} values and {} confidences",
                self.height,
                self.width,
                self.channels,
                self.values.len(),
                self.confidence.len()
            )));
        }
        if self.confidence.iter().any(|c| !(*c > 0.0)) {
            return Err(LossError::InvalidInput("confidence must be > 0".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(LossError::InvalidInput("non-finite prediction".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub conf_reg: f64,
    pub grad_scales: Vec<usize>,
    /// Weight of the gradient term inside the depth and point-map losses.
    pub grad_weight: f64,
    pub huber_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 5.0,
            conf_reg: 0.1,
            grad_scales: vec![1, 2, 4, 8],
            grad_weight: 1.0,
            huber_delta: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda_c > 0.0) {
            return Err(LossError::InvalidInput("lambda_c must be > 0".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(LossError::InvalidInput("huber_delta must be > 0".into()));
        }
        if self.grad_scales.contains(&0) {
            return Err(LossError::InvalidInput("grad_scales must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

/// Prediction with its quaternion sign-aligned to `gt`, and the sign used.
fn align_sign(pred: &CameraEncoding, gt: &CameraEncoding) -> ([f64; 9], f64) {
    let dot: f64 = (0..4).map(|i| pred.0[i] * gt.0[i]).sum();
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    let mut p = pred.0;
    for v in &mut p[..4] {
        *v *= sign;
    }
    (p, sign)
}

/// Sum of element-wise Huber over the 9 components.
pub fn camera_loss(pred: &CameraEncoding, gt: &CameraEncoding, delta: f64) -> f64 {
    let (p, _) = align_sign(pred, gt);
    p.iter().zip(&gt.0).map(|(a, b)| huber(a - b, delta)).sum()
}

pub fn camera_loss_grad(pred: &CameraEncoding, gt: &CameraEncoding, delta: f64) -> [f64; 9] {
    let (p, sign) = align_sign(pred, gt);
    let mut g = [0.0; 9];
    for i in 0..9 {
        g[i] = huber_grad(p[i] - gt.0[i], delta);
        if i < 4 {
            g[i] *= sign;
        }
    }
    g
}

/// Mean over frames of [`camera_loss`].
pub fn camera_loss_mean(pred: &[CameraEncoding], gt: &[CameraEncoding], delta: f64) -> Result<f64, LossError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(LossError::ShapeMismatch(format!("{} vs {} cameras", pred.len(), gt.len())));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| camera_loss(p, g, delta)).sum::<f64>() / pred.len() as f64)
}

/// Subgradient of `|x|`, 0 at 0.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_dense(pred: &DensePrediction, gt: &[f64], valid: &[bool]) -> Result<(), LossError> {
    pred.validate()?;
    if gt.len() != pred.values.len() || valid.len() != pred.confidence.len() {
        return Err(LossError::ShapeMismatch(format!(
            "prediction {} / {}, target {} / {}",
            pred.values.len(),
            pred.confidence.len(),
            gt.len(),
            valid.len()
        )));
    }
    Ok(())
}

/// Mean over valid pixels of `conf * |pred - gt|_1 - conf_reg * ln conf`.
pub fn conf_weighted_loss(
    pred: &DensePrediction,
    gt: &[f64],
    valid: &[bool],
    conf_reg: f64,
) -> Result<f64, LossError> {
    check_dense(pred, gt, valid)?;
    let c = pred.channels;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
        let l1: f64 = (0..c).map(|k| (pred.values[i * c + k] - gt[i * c + k]).abs()).sum();
        let conf = pred.confidence[i];
        sum += conf * l1 - conf_reg * conf.ln();
        n += 1;
    }
    if n == 0 {
        return Err(LossError::EmptyValidSet);
    }
    Ok(sum / n as f64)
}

/// Gradients `(d values, d confidence)` of [`conf_weighted_loss`].
pub fn conf_weighted_loss_grad(
    pred: &DensePrediction,
    gt: &[f64],
    valid: &[bool],
    conf_reg: f64,
) -> Result<(Vec<f64>, Vec<f64>), LossError> {
    check_dense(pred, gt, valid)?;
    let c = pred.channels;
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return Err(LossError::EmptyValidSet);
    }
    let inv = 1.0 / n as f64;
    let mut dv = vec![0.0; pred.values.len()];
    let mut dc = vec![0.0; pred.confidence.len()];
    for (i, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
        let conf = pred.confidence[i];
        let mut l1 = 0.0;
        for k in 0..c {
            let r = pred.values[i * c + k] - gt[i * c + k];
            l1 += r.abs();
            dv[i * c + k] = inv * conf * sign(r);
        }
        dc[i] = inv * (l1 - conf_reg / conf);
    }
    Ok((dv, dc))
}

/// Forward-difference pairs `(a, b)` of flat pixel indices on the grid
/// subsampled by `scale`, both endpoints valid.
pub fn gradient_pairs(height: usize, width: usize, valid: &[bool], scale: usize) -> Vec<(usize, usize)> {
    let hs = (height + scale - 1) / scale;
    let ws = (width + scale - 1) / scale;
    let at = |i: usize, j: usize| i * scale * width + j * scale;
    let mut pairs = Vec::new();
    for i in 0..hs {
        for j in 0..ws {
            let a = at(i, j);
            if j + 1 < ws {
                pairs.push((a, at(i, j + 1)));
            }
            if i + 1 < hs {
                pairs.push((a, at(i + 1, j)));
            }
        }
    }
    pairs.retain(|&(a, b)| valid[a] && valid[b]);
    pairs
}

fn check_maps(pred: &[f64], gt: &[f64], valid: &[bool], channels: usize) -> Result<(), LossError> {
    if pred.len() != gt.len() || pred.len() != valid.len() * channels {
        return Err(LossError::ShapeMismatch(format!(
            "prediction {}, target {}, mask {} x {channels}",
            pred.len(),
            gt.len(),
            valid.len()
        )));
    }
    Ok(())
}

/// Sum over scales of the mean (per valid pair) L1 forward difference of
/// `pred - gt`, on maps subsampled with stride `scale`. Scales with no valid
/// pair contribute 0.
#[allow(clippy::too_many_arguments)]
pub fn gradient_regularizer(
    pred: &[f64],
    gt: &[f64],
    valid: &[bool],
    height: usize,
    width: usize,
    channels: usize,
    scales: &[usize],
) -> Result<f64, LossError> {
    check_maps(pred, gt, valid, channels)?;
    let diff: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p - g).collect();
    let mut total = 0.0;
    for &s in scales {
        let pairs = gradient_pairs(height, width, valid, s);
        if pairs.is_empty() {
            continue;
        }
        let sum: f64 = pairs
            .iter()
            .flat_map(|&(a, b)| (0..channels).map(move |k| (a, b, k)))
            .map(|(a, b, k)| (diff[b * channels + k] - diff[a * channels + k]).abs())
            .sum();
        total += sum / pairs.len() as f64;
    }
    Ok(total)
}

pub fn gradient_regularizer_grad(
    pred: &[f64],
    gt: &[f64],
    valid: &[bool],
    height: usize,
    width: usize,
    channels: usize,
    scales: &[usize],
) -> Result<Vec<f64>, LossError> {
    check_maps(pred, gt, valid, channels)?;
    let mut g = vec![0.0; pred.len()];
    for &s in scales {
        let pairs = gradient_pairs(height, width, valid, s);
        if pairs.is_empty() {
            continue;
        }
        let inv = 1.0 / pairs.len() as f64;
        for &(a, b) in &pairs {
            for k in 0..channels {
                let (ia, ib) = (a * channels + k, b * channels + k);
                let d = (pred[ib] - gt[ib]) - (pred[ia] - gt[ia]);
                let sg = sign(d);
                g[ib] += inv * sg;
                g[ia] -= inv * sg;
            }
        }
    }
    Ok(g)
}

/// Confidence-weighted term plus weighted gradient matching on `values`.
pub fn dense_loss(pred: &DensePrediction, gt: &[f64], valid: &[bool], w: &LossWeights) -> Result<f64, LossError> {
    let base = conf_weighted_loss(pred, gt, valid, w.conf_reg)?;
    let reg = gradient_regularizer(
        &pred.values,
        gt,
        valid,
        pred.height,
        pred.width,
        pred.channels,
        &w.grad_scales,
    )?;
    Ok(base + w.grad_weight * reg)
}

pub fn dense_loss_grad(
    pred: &DensePrediction,
    gt: &[f64],
    valid: &[bool],
    w: &LossWeights,
) -> Result<(Vec<f64>, Vec<f64>), LossError> {
    let (mut dv, dc) = conf_weighted_loss_grad(pred, gt, valid, w.conf_reg)?;
    let dr = gradient_regularizer_grad(
        &pred.values,
        gt,
        valid,
        pred.height,
        pred.width,
        pred.channels,
        &w.grad_scales,
    )?;
    for (a, b) in dv.iter_mut().zip(dr) {
        *a += w.grad_weight * b;
    }
    Ok((dv, dc))
}

/// `lambda_c * camera + depth + pmap`.
pub fn total_loss(camera: f64, depth: f64, pmap: f64, weights: &LossWeights) -> f64 {
    weights.lambda_c * camera + depth + pmap
}
