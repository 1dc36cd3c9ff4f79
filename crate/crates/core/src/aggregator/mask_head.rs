//! Dynamic-mask head: linear projection, depthwise same-padded convolution,
//! channel mix to one logit per patch, then `-alpha * sigmoid(-m / tau)`.

use nalgebra::DMatrix;

use super::{sigmoid, AggregatorError, DynamicsMask, MaskHeadParams, TokenRole, TokenSet};

/// Per-frame intermediates.
#[derive(Debug, Clone)]
pub struct FrameMaskCache {
    /// Patch tokens, `HW x d`.
    pub z: DMatrix<f64>,
    /// Projected features, `HW x d_low`.
    pub y: DMatrix<f64>,
    /// Convolution output, `HW x d_low`.
    pub conv: DMatrix<f64>,
    /// Logit per patch.
    pub m: Vec<f64>,
    /// `sigmoid(-m / tau)` per patch.
    pub s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MaskCache {
    /// Indexed `[b][s]`.
    pub frames: Vec<Vec<FrameMaskCache>>,
    pub tau: f64,
    pub alpha: f64,
}

fn patch_rows(tokens: &TokenSet, s: usize) -> std::ops::Range<usize> {
    let start = tokens.row(s, 1 + tokens.n_reg);
    start..start + tokens.n_patches()
}

/// Same-padded depthwise convolution over an `h x w` grid, row-major patches.
pub fn depthwise_conv(y: &DMatrix<f64>, grid: (usize, usize), params: &MaskHeadParams) -> DMatrix<f64> {
    let (h, w) = grid;
    let k = params.kernel_size;
    let r = (k / 2) as isize;
    let dl = y.ncols();
    let mut out = DMatrix::zeros(h * w, dl);
    for i in 0..h {
        for j in 0..w {
            for c in 0..dl {
                let mut acc = params.conv_bias[c];
                for ky in 0..k {
                    for kx in 0..k {
                        let (ii, jj) = (i as isize + ky as isize - r, j as isize + kx as isize - r);
                        if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                            continue;
                        }
                        acc += params.conv_kernel[(ky * k + kx) * dl + c] * y[(ii as usize * w + jj as usize, c)];
                    }
                }
                out[(i * w + j, c)] = acc;
            }
        }
    }
    out
}

pub fn predict_mask_cached(
    tokens: &TokenSet,
    params: &MaskHeadParams,
) -> Result<(DynamicsMask, MaskCache), AggregatorError> {
    params.validate()?;
    tokens.validate()?;
    if params.proj.nrows() != tokens.width() {
        return Err(AggregatorError::ShapeMismatch(format!(
            "mask projection expects width {}, tokens have {}",
            params.proj.nrows(),
            tokens.width()
        )));
    }
    let tau = params.tau();
    let alpha = params.alpha();
    let mut mask = DynamicsMask::zeros(tokens);
    mask.alpha = alpha;
    let mut frames = Vec::with_capacity(tokens.batch());
    for (b, x) in tokens.data.iter().enumerate() {
        let mut per_frame = Vec::with_capacity(tokens.n_frames);
        for s in 0..tokens.n_frames {
            let rows = patch_rows(tokens, s);
            let z = x.rows(rows.start, rows.len()).into_owned();
            let y = &z * &params.proj;
            let conv = depthwise_conv(&y, tokens.grid, params);
            let m: Vec<f64> = (0..conv.nrows())
                .map(|i| conv.row(i).iter().zip(&params.out_mix).map(|(a, b)| a * b).sum())
                .collect();
            let sg: Vec<f64> = m.iter().map(|mi| sigmoid(-mi / tau)).collect();
            for (i, si) in sg.iter().enumerate() {
                mask.values[b][rows.start + i] = -alpha * si;
            }
            per_frame.push(FrameMaskCache { z, y, conv, m, s: sg });
        }
        frames.push(per_frame);
    }
    debug_assert!((0..tokens.tokens_per_frame())
        .filter(|&p| tokens.role(p) != TokenRole::Patch)
        .all(|p| mask.values.iter().all(|v| v[p] == 0.0)));
    Ok((mask, MaskCache { frames, tau, alpha }))
}

/// Predicts the `(B, S, P)` mask; non-patch positions are 0.
pub fn predict_mask(tokens: &TokenSet, params: &MaskHeadParams) -> Result<DynamicsMask, AggregatorError> {
    predict_mask_cached(tokens, params).map(|(m, _)| m)
}

/// Gradients of the head parameters and of the input tokens given the
/// gradient `dmask` w.r.t. the mask values.
pub fn predict_mask_backward(
    cache: &MaskCache,
    tokens: &TokenSet,
    params: &MaskHeadParams,
    dmask: &[Vec<f64>],
) -> (MaskHeadParams, TokenSet) {
    let mut g = params.zeros_like();
    let mut dtokens = tokens.zeros_like();
    let (tau, alpha) = (cache.tau, cache.alpha);
    let (h, w) = tokens.grid;
    let k = params.kernel_size;
    let r = (k / 2) as isize;
    let dl = params.d_low();
    let mut dalpha = 0.0;
    let mut dtau = 0.0;
    for (b, per_frame) in cache.frames.iter().enumerate() {
        for (s, fc) in per_frame.iter().enumerate() {
            let rows = patch_rows(tokens, s);
            let mut dm = vec![0.0; fc.m.len()];
            for i in 0..fc.m.len() {
                let gm = dmask[b][rows.start + i];
                let si = fc.s[i];
                let ds = si * (1.0 - si);
                dalpha -= gm * si;
                // d/dtau of -alpha * sigmoid(-m / tau).
                dtau -= gm * alpha * ds * fc.m[i] / (tau * tau);
                dm[i] = gm * alpha * ds / tau;
            }
            // Channel mix.
            let mut dconv = DMatrix::zeros(fc.conv.nrows(), dl);
            for i in 0..fc.m.len() {
                for c in 0..dl {
                    g.out_mix[c] += dm[i] * fc.conv[(i, c)];
                    dconv[(i, c)] = dm[i] * params.out_mix[c];
                }
            }
            // Depthwise convolution.
            let mut dy = DMatrix::zeros(fc.y.nrows(), dl);
            for i in 0..h {
                for j in 0..w {
                    for c in 0..dl {
                        let go = dconv[(i * w + j, c)];
                        g.conv_bias[c] += go;
                        for ky in 0..k {
                            for kx in 0..k {
                                let (ii, jj) = (i as isize + ky as isize - r, j as isize + kx as isize - r);
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                    continue;
                                }
                                let q = ii as usize * w + jj as usize;
                                let kidx = (ky * k + kx) * dl + c;
                                g.conv_kernel[kidx] += go * fc.y[(q, c)];
                                dy[(q, c)] += go * params.conv_kernel[kidx];
                            }
                        }
                    }
                }
            }
            g.proj += fc.z.transpose() * &dy;
            let dz = dy * params.proj.transpose();
            dtokens.data[b].rows_mut(rows.start, rows.len()).copy_from(&dz);
        }
    }
    g.alpha_logit = dalpha * sigmoid(params.alpha_logit);
    g.tau_logit = dtau * sigmoid(params.tau_logit);
    (g, dtokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::{AggregatorConfig, AggregatorParams};

    fn setup() -> (TokenSet, MaskHeadParams) {
        let cfg = AggregatorConfig::default();
        let p = AggregatorParams::init(&cfg, 3).mask_head;
        (TokenSet::random(2, 2, cfg.n_reg, (3, 4), cfg.d_model, 8), p)
    }

    #[test]
    fn mask_is_in_range_and_zero_off_patch() {
        let (t, p) = setup();
        let m = predict_mask(&t, &p).unwrap();
        let alpha = p.alpha();
        for v in &m.values {
            for (i, x) in v.iter().enumerate() {
                let role = t.role(i % t.tokens_per_frame());
                if role == TokenRole::Patch {
                    assert!(*x < 0.0 && *x > -alpha);
                } else {
                    assert_eq!(*x, 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_logit_gives_minus_half() {
        let (t, mut p) = setup();
        p.out_mix.iter_mut().for_each(|v| *v = 0.0);
        p.alpha_logit = (1f64.exp() - 1.0).ln();
        p.epsilon = 1e-300;
        let m = predict_mask(&t, &p).unwrap();
        let first_patch = 1 + t.n_reg;
        assert!((m.values[0][first_patch] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn logit_limits() {
        let (t, mut p) = setup();
        p.out_mix.iter_mut().for_each(|v| *v = 0.0);
        let i = 1 + t.n_reg;
        // Large positive logits: out_mix times a constant bias channel.
        p.conv_kernel.iter_mut().for_each(|v| *v = 0.0);
        p.proj.fill(0.0);
        p.conv_bias.iter_mut().for_each(|v| *v = 1.0);
        p.out_mix[0] = 1e4;
        let hi = predict_mask(&t, &p).unwrap();
        assert!(hi.values[0][i].abs() < 1e-12);
        p.out_mix[0] = -1e4;
        let lo = predict_mask(&t, &p).unwrap();
        assert!((lo.values[0][i] + p.alpha()).abs() < 1e-12);
    }

    #[test]
    fn wrong_width_is_rejected() {
        let (_, p) = setup();
        let t = TokenSet::random(1, 1, 4, (2, 2), 12, 0);
        assert!(matches!(predict_mask(&t, &p), Err(AggregatorError::ShapeMismatch(_))));
    }
}
