//! Depth alignment, Abs Rel and threshold accuracy.

use serde::{Deserialize, Serialize};

use super::{median, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthAlignment {
    /// One least-squares scale for the whole sequence.
    Scale,
    /// One scale and shift for the whole sequence.
    ScaleShift,
    /// Independent scale per frame.
    PerFrame,
    /// Predictions used as is.
    None,
}

impl DepthAlignment {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Scale => "scale",
            Self::ScaleShift => "scale_shift",
            Self::PerFrame => "per_frame",
            Self::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthEvalConfig {
    pub alignment: DepthAlignment,
    pub min_depth: f64,
    pub max_depth: f64,
    pub threshold: f64,
    /// Median of `g/p` instead of the least-squares scale.
    pub median_ratio: bool,
}

impl Default for DepthEvalConfig {
    fn default() -> Self {
        Self {
            alignment: DepthAlignment::Scale,
            min_depth: 1e-3,
            max_depth: 1e4,
            threshold: 1.25,
            median_ratio: false,
        }
    }
}

impl DepthEvalConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth) {
            return Err(MetricsError::InvalidConfig(format!(
                "need 0 < min_depth < max_depth, got {} and {}",
                self.min_depth, self.max_depth
            )));
        }
        if !(self.threshold > 1.0) {
            return Err(MetricsError::InvalidConfig(format!("threshold {} must exceed 1", self.threshold)));
        }
        if self.median_ratio && self.alignment == DepthAlignment::ScaleShift {
            return Err(MetricsError::InvalidConfig("median ratio has no shift form".into()));
        }
        Ok(())
    }
}

/// Row-major single-channel map.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, MetricsError> {
        if data.len() != height * width {
            return Err(MetricsError::ShapeMismatch(format!(
                "{} values for {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn scaled(&self, s: f64, b: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|p| s * p + b).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthReport {
    pub abs_rel: f64,
    pub delta_acc: f64,
    pub n_valid: usize,
    /// `(scale, shift)` applied to each frame.
    pub alignment: Vec<(f64, f64)>,
    /// `(abs_rel, delta_acc, n_valid)` per frame; NaN metrics where a frame has no valid pixel.
    pub per_frame: Vec<(f64, f64, usize)>,
}

/// Pixels with a finite prediction and a ground truth inside the clamps.
fn frame_valid(pred: &DepthMap, gt: &DepthMap, mask: Option<&[bool]>, cfg: &DepthEvalConfig) -> Result<Vec<bool>, MetricsError> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(MetricsError::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    if let Some(m) = mask {
        if m.len() != gt.data.len() {
            return Err(MetricsError::ShapeMismatch(format!("mask has {} entries", m.len())));
        }
    }
    Ok((0..gt.data.len())
        .map(|i| {
            let (p, g) = (pred.data[i], gt.data[i]);
            mask.is_none_or(|m| m[i]) && p.is_finite() && g.is_finite() && g > 0.0 && g >= cfg.min_depth && g <= cfg.max_depth
        })
        .collect())
}

fn fit_scale(pairs: &[(f64, f64)], median_ratio: bool) -> Result<f64, MetricsError> {
    if median_ratio {
        let ratios: Vec<f64> = pairs.iter().filter(|(p, _)| *p > 0.0).map(|(p, g)| g / p).collect();
        return median(&ratios).ok_or_else(|| MetricsError::DegenerateGeometry("no positive predictions".into()));
    }
    let (pg, pp) = pairs.iter().fold((0.0, 0.0), |(a, b), (p, g)| (a + p * g, b + p * p));
    if !(pp > 0.0) {
        return Err(MetricsError::DegenerateGeometry("all valid predictions are zero".into()));
    }
    Ok(pg / pp)
}

fn fit_scale_shift(pairs: &[(f64, f64)]) -> Result<(f64, f64), MetricsError> {
    let n = pairs.len() as f64;
    let mp = pairs.iter().map(|(p, _)| p).sum::<f64>() / n;
    let mg = pairs.iter().map(|(_, g)| g).sum::<f64>() / n;
    let (mut cov, mut var) = (0.0, 0.0);
    for (p, g) in pairs {
        cov += (p - mp) * (g - mg);
        var += (p - mp) * (p - mp);
    }
    if !(var > 1e-300) {
        return Err(MetricsError::DegenerateGeometry("constant prediction admits no scale and shift".into()));
    }
    let s = cov / var;
    Ok((s, mg - s * mp))
}

fn collect_pairs(preds: &[DepthMap], gts: &[DepthMap], valid: &[Vec<bool>], frames: impl Iterator<Item = usize>) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for f in frames {
        for (i, _) in valid[f].iter().enumerate().filter(|(_, v)| **v) {
            out.push((preds[f].data[i], gts[f].data[i]));
        }
    }
    out
}

fn validity(
    preds: &[DepthMap],
    gts: &[DepthMap],
    masks: Option<&[Vec<bool>]>,
    cfg: &DepthEvalConfig,
) -> Result<Vec<Vec<bool>>, MetricsError> {
    cfg.validate()?;
    if preds.len() != gts.len() || masks.is_some_and(|m| m.len() != gts.len()) {
        return Err(MetricsError::LengthMismatch(format!(
            "{} predicted vs {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    (0..gts.len())
        .map(|f| frame_valid(&preds[f], &gts[f], masks.map(|m| m[f].as_slice()), cfg))
        .collect()
}

/// Per-frame `(scale, shift)` under `cfg.alignment`.
pub fn align_depth(
    preds: &[DepthMap],
    gts: &[DepthMap],
    masks: Option<&[Vec<bool>]>,
    cfg: &DepthEvalConfig,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    let valid = validity(preds, gts, masks, cfg)?;
    align_with_validity(preds, gts, &valid, cfg)
}

fn align_with_validity(
    preds: &[DepthMap],
    gts: &[DepthMap],
    valid: &[Vec<bool>],
    cfg: &DepthEvalConfig,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    let n = gts.len();
    let all = collect_pairs(preds, gts, valid, 0..n);
    if all.is_empty() {
        return Err(MetricsError::EmptyValidSet);
    }
    match cfg.alignment {
        DepthAlignment::None => Ok(vec![(1.0, 0.0); n]),
        DepthAlignment::Scale => Ok(vec![(fit_scale(&all, cfg.median_ratio)?, 0.0); n]),
        DepthAlignment::ScaleShift => Ok(vec![fit_scale_shift(&all)?; n]),
        DepthAlignment::PerFrame => (0..n)
            .map(|f| {
                let pairs = collect_pairs(preds, gts, valid, f..f + 1);
                if pairs.is_empty() {
                    Ok((1.0, 0.0))
                } else {
                    Ok((fit_scale(&pairs, cfg.median_ratio)?, 0.0))
                }
            })
            .collect(),
    }
}

/// `(abs_rel, delta_acc)` of already-aligned values over `valid` pixels
/// with positive ground truth.
pub fn depth_metrics(pred: &[f64], gt: &[f64], valid: &[bool], threshold: f64) -> Result<(f64, f64), MetricsError> {
    let (sum, hits, n) = accumulate(pred, gt, valid, threshold)?;
    if n == 0 {
        return Err(MetricsError::EmptyValidSet);
    }
    Ok((sum / n as f64, hits as f64 / n as f64))
}

fn accumulate(pred: &[f64], gt: &[f64], valid: &[bool], threshold: f64) -> Result<(f64, usize, usize), MetricsError> {
    if pred.len() != gt.len() || valid.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} / {} / {} entries",
            pred.len(),
            gt.len(),
            valid.len()
        )));
    }
    let (mut sum, mut hits, mut n) = (0.0, 0usize, 0usize);
    for i in 0..gt.len() {
        let (p, g) = (pred[i], gt[i]);
        if !valid[i] || !(g > 0.0) {
            continue;
        }
        n += 1;
        sum += (p - g).abs() / g;
        // A non-positive prediction never counts as accurate.
        if p > 0.0 && (p / g).max(g / p) < threshold {
            hits += 1;
        }
    }
    Ok((sum, hits, n))
}

/// Aligns, then averages both metrics over every valid pixel of the sequence.
pub fn evaluate_depth(
    preds: &[DepthMap],
    gts: &[DepthMap],
    masks: Option<&[Vec<bool>]>,
    cfg: &DepthEvalConfig,
) -> Result<DepthReport, MetricsError> {
    let valid = validity(preds, gts, masks, cfg)?;
    let alignment = align_with_validity(preds, gts, &valid, cfg)?;
    let (mut sum, mut hits, mut n) = (0.0, 0usize, 0usize);
    let mut per_frame = Vec::with_capacity(gts.len());
    for f in 0..gts.len() {
        let (s, b) = alignment[f];
        let aligned = preds[f].scaled(s, b);
        let (fs, fh, fnv) = accumulate(&aligned.data, &gts[f].data, &valid[f], cfg.threshold)?;
        per_frame.push(if fnv == 0 {
            (f64::NAN, f64::NAN, 0)
        } else {
            (fs / fnv as f64, fh as f64 / fnv as f64, fnv)
        });
        sum += fs;
        hits += fh;
        n += fnv;
    }
    if n == 0 {
        return Err(MetricsError::EmptyValidSet);
    }
    Ok(DepthReport {
        abs_rel: sum / n as f64,
        delta_acc: hits as f64 / n as f64,
        n_valid: n,
        alignment,
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(f: impl Fn(usize, usize) -> f64, frames: usize) -> Vec<DepthMap> {
        (0..frames)
            .map(|k| DepthMap::new(4, 5, (0..20).map(|i| f(k, i)).collect()).unwrap())
            .collect()
    }

    fn gt() -> Vec<DepthMap> {
        maps(|k, i| 1.0 + 0.3 * i as f64 + 0.7 * k as f64, 3)
    }

    fn cfg(alignment: DepthAlignment) -> DepthEvalConfig {
        DepthEvalConfig {
            alignment,
            ..Default::default()
        }
    }

    #[test]
    fn identity_alignment() {
        let g = gt();
        for mode in [DepthAlignment::Scale, DepthAlignment::ScaleShift, DepthAlignment::PerFrame] {
            for (s, b) in align_depth(&g, &g, None, &cfg(mode)).unwrap() {
                assert!((s - 1.0).abs() < 1e-12 && b.abs() < 1e-12, "{mode:?}");
            }
        }
    }

    #[test]
    fn half_prediction_scales_by_two() {
        let g = gt();
        let p: Vec<_> = g.iter().map(|m| m.scaled(0.5, 0.0)).collect();
        let a = align_depth(&p, &g, None, &cfg(DepthAlignment::Scale)).unwrap();
        assert_eq!(a[0], (2.0, 0.0));
    }

    #[test]
    fn scale_shift_matches_normal_equations() {
        let g = gt();
        let p: Vec<_> = g.iter().map(|m| m.scaled(0.5, 3.0)).collect();
        let (s, b) = align_depth(&p, &g, None, &cfg(DepthAlignment::ScaleShift)).unwrap()[0];
        // Independent 2x2 normal-equation solve.
        let (mut spp, mut sp, mut spg, mut sg, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (pm, gm) in p.iter().zip(&g) {
            for (x, y) in pm.data.iter().zip(&gm.data) {
                spp += x * x;
                sp += x;
                spg += x * y;
                sg += y;
                n += 1.0;
            }
        }
        let det = spp * n - sp * sp;
        let s_ref = (spg * n - sp * sg) / det;
        let b_ref = (spp * sg - sp * spg) / det;
        assert!((s - 2.0).abs() < 1e-9 && (b + 6.0).abs() < 1e-9);
        assert!((s - s_ref).abs() < 1e-9 && (b - b_ref).abs() < 1e-8);
    }

    #[test]
    fn per_frame_fits_independently() {
        let g = gt();
        let p: Vec<_> = g.iter().enumerate().map(|(k, m)| m.scaled(1.0 / (k as f64 + 1.0), 0.0)).collect();
        let a = align_depth(&p, &g, None, &cfg(DepthAlignment::PerFrame)).unwrap();
        for (k, (s, _)) in a.iter().enumerate() {
            assert!((s - (k as f64 + 1.0)).abs() < 1e-12);
        }
        let r = evaluate_depth(&p, &g, None, &cfg(DepthAlignment::PerFrame)).unwrap();
        assert!(r.abs_rel < 1e-12 && r.delta_acc == 1.0);
    }

    #[test]
    fn constant_ratio_metrics() {
        let g = gt();
        let flat: Vec<f64> = g[0].data.clone();
        let p: Vec<f64> = flat.iter().map(|x| 1.3 * x).collect();
        let v = vec![true; flat.len()];
        let (ar, da) = depth_metrics(&p, &flat, &v, 1.25).unwrap();
        assert!((ar - 0.3).abs() < 1e-12);
        assert_eq!(da, 0.0);
        assert_eq!(depth_metrics(&flat, &flat, &v, 1.25).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn non_positive_ground_truth_excluded() {
        let gt = vec![0.0, -1.0, 2.0, 4.0];
        let p = vec![5.0, 5.0, 2.0, 5.0];
        let (ar, da) = depth_metrics(&p, &gt, &[true; 4], 1.25).unwrap();
        assert!((ar - 0.125).abs() < 1e-15);
        // 5/4 sits exactly on the threshold, which is exclusive.
        assert_eq!(da, 0.5);
        assert!(matches!(
            depth_metrics(&p[..2], &gt[..2], &[true; 2], 1.25),
            Err(MetricsError::EmptyValidSet)
        ));
    }

    #[test]
    fn scaling_is_absorbed_and_inflation_detected() {
        let g = gt();
        let noisy: Vec<_> = maps(|k, i| (1.0 + 0.3 * i as f64 + 0.7 * k as f64) * (1.0 + 0.05 * ((i * 7 + k) as f64).sin()), 3);
        let base = evaluate_depth(&noisy, &g, None, &cfg(DepthAlignment::Scale)).unwrap();
        let big: Vec<_> = noisy.iter().map(|m| m.scaled(17.0, 0.0)).collect();
        let scaled = evaluate_depth(&big, &g, None, &cfg(DepthAlignment::Scale)).unwrap();
        assert!((base.abs_rel - scaled.abs_rel).abs() < 1e-12);
        assert_eq!(base.delta_acc, scaled.delta_acc);
        let raw = evaluate_depth(&big, &g, None, &cfg(DepthAlignment::None)).unwrap();
        assert_eq!(raw.delta_acc, 0.0);
    }

    #[test]
    fn empty_and_invalid_inputs() {
        let g = gt();
        let masks = vec![vec![false; 20]; 3];
        assert!(matches!(
            evaluate_depth(&g, &g, Some(&masks), &cfg(DepthAlignment::Scale)),
            Err(MetricsError::EmptyValidSet)
        ));
        let bad = DepthEvalConfig {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let constant = maps(|_, _| 2.0, 3);
        assert!(matches!(
            align_depth(&constant, &g, None, &cfg(DepthAlignment::ScaleShift)),
            Err(MetricsError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn median_ratio_flag() {
        let g = gt();
        let mut p: Vec<_> = g.iter().map(|m| m.scaled(0.25, 0.0)).collect();
        p[0].data[0] = 1e6;
        let c = DepthEvalConfig {
            median_ratio: true,
            ..Default::default()
        };
        let (s, _) = align_depth(&p, &g, None, &c).unwrap()[0];
        assert!((s - 4.0).abs() < 1e-12);
    }
}
