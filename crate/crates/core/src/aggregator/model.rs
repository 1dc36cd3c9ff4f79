//! Layer composition and the three-stage forward/backward pass.

use nalgebra::DMatrix;

use super::attention::{masked_attention_backward, masked_attention_cached, AttnCache};
use super::mask_head::{predict_mask_backward, predict_mask_cached, MaskCache};
use super::{
    AggregatorConfig, AggregatorError, AggregatorParams, AttentionParams, DynamicsMask, LayerParams, TokenRole,
    TokenSet,
};

#[derive(Debug, Clone)]
pub struct LayerCache {
    /// One per batch element.
    pub global: Vec<AttnCache>,
    /// Indexed `[b][s]`.
    pub frame: Vec<Vec<AttnCache>>,
}

#[derive(Debug, Clone)]
pub struct AggregatorCache {
    pub layers: Vec<LayerCache>,
    /// Head intermediates and its input (the stage-1 output).
    pub mask: Option<(MaskCache, TokenSet)>,
}

fn gated_rows(tokens: &TokenSet, apply_mask_to: &[TokenRole]) -> Vec<bool> {
    let p = tokens.tokens_per_frame();
    (0..tokens.n_frames * p)
        .map(|i| apply_mask_to.contains(&tokens.role(i % p)))
        .collect()
}

fn global_cached(
    tokens: &TokenSet,
    params: &AttentionParams,
    mask: Option<&DynamicsMask>,
    apply_mask_to: &[TokenRole],
) -> (TokenSet, Vec<AttnCache>) {
    let rows = match mask {
        Some(_) => gated_rows(tokens, apply_mask_to),
        None => vec![false; tokens.n_frames * tokens.tokens_per_frame()],
    };
    let mut out = tokens.clone();
    let mut caches = Vec::with_capacity(tokens.batch());
    for (b, x) in tokens.data.iter().enumerate() {
        let m = mask.map(|m| m.values[b].as_slice());
        let (y, c) = masked_attention_cached(x, params, m, &rows);
        out.data[b] += y;
        caches.push(c);
    }
    (out, caches)
}

fn frame_cached(tokens: &TokenSet, params: &AttentionParams) -> (TokenSet, Vec<Vec<AttnCache>>) {
    let p = tokens.tokens_per_frame();
    let rows = vec![false; p];
    let mut out = tokens.clone();
    let mut caches = Vec::with_capacity(tokens.batch());
    for (b, x) in tokens.data.iter().enumerate() {
        let mut per_frame = Vec::with_capacity(tokens.n_frames);
        for s in 0..tokens.n_frames {
            let slice = x.rows(s * p, p).into_owned();
            let (y, c) = masked_attention_cached(&slice, params, None, &rows);
            let mut target = out.data[b].rows_mut(s * p, p);
            target += y;
            per_frame.push(c);
        }
        caches.push(per_frame);
    }
    (out, caches)
}

/// Per-frame self-attention with residual.
pub fn frame_attention(tokens: &TokenSet, params: &AttentionParams) -> TokenSet {
    frame_cached(tokens, params).0
}

/// Self-attention over all frames of each batch element, with residual. With
/// a mask, only query rows whose role is in `apply_mask_to` see it.
pub fn global_attention(
    tokens: &TokenSet,
    params: &AttentionParams,
    mask: Option<&DynamicsMask>,
    apply_mask_to: &[TokenRole],
) -> Result<TokenSet, AggregatorError> {
    if let Some(m) = mask {
        let n = tokens.n_frames * tokens.tokens_per_frame();
        if m.values.len() != tokens.batch() || m.values.iter().any(|v| v.len() != n) {
            return Err(AggregatorError::ShapeMismatch("mask does not match tokens".into()));
        }
    }
    Ok(global_cached(tokens, params, mask, apply_mask_to).0)
}

fn layer_forward(
    x: &TokenSet,
    lp: &LayerParams,
    mask: Option<&DynamicsMask>,
    apply_mask_to: &[TokenRole],
) -> (TokenSet, LayerCache) {
    let (x1, global) = global_cached(x, &lp.global, mask, apply_mask_to);
    let (x2, frame) = frame_cached(&x1, &lp.frame);
    (x2, LayerCache { global, frame })
}

/// Returns `(d input, parameter grads, d mask)` for one layer.
fn layer_backward(
    cache: &LayerCache,
    lp: &LayerParams,
    dout: &TokenSet,
) -> (TokenSet, LayerParams, Vec<Vec<f64>>) {
    let p = dout.tokens_per_frame();
    let d = dout.width();
    let mut grads = LayerParams {
        global: AttentionParams::zeros(d),
        frame: AttentionParams::zeros(d),
    };
    // Frame attention: x2 = x1 + f(x1).
    let mut dx1 = dout.clone();
    for (b, per_frame) in cache.frame.iter().enumerate() {
        for (s, c) in per_frame.iter().enumerate() {
            let dy = dout.data[b].rows(s * p, p).into_owned();
            let g = masked_attention_backward(c, &lp.frame, &dy);
            grads.frame.add_assign(&g.params);
            let mut target = dx1.data[b].rows_mut(s * p, p);
            target += g.dx;
        }
    }
    // Global attention: x1 = x + g(x).
    let mut dx = dx1.clone();
    let mut dmask = Vec::with_capacity(dout.batch());
    for (b, c) in cache.global.iter().enumerate() {
        let g = masked_attention_backward(c, &lp.global, &dx1.data[b]);
        grads.global.add_assign(&g.params);
        dx.data[b] += g.dx;
        dmask.push(g.dmask);
    }
    (dx, grads, dmask)
}

pub fn aggregator_forward_cached(
    tokens: &TokenSet,
    config: &AggregatorConfig,
    params: &AggregatorParams,
) -> Result<(TokenSet, DynamicsMask, AggregatorCache), AggregatorError> {
    config.validate()?;
    params.validate(config)?;
    tokens.validate()?;
    if tokens.n_reg != config.n_reg {
        return Err(AggregatorError::ShapeMismatch(format!(
            "tokens have {} registers, config {}",
            tokens.n_reg, config.n_reg
        )));
    }
    if tokens.width() != params.d_model() {
        return Err(AggregatorError::ShapeMismatch(format!(
            "token width {} vs model width {}",
            tokens.width(),
            params.d_model()
        )));
    }
    let mut x = tokens.clone();
    let mut layers = Vec::with_capacity(config.n_layers());
    let mut mask = DynamicsMask::zeros(tokens);
    let mut mask_cache = None;
    for (l, lp) in params.layers.iter().enumerate() {
        if l == config.n_stage1 && config.use_mask {
            let (m, mc) = predict_mask_cached(&x, &params.mask_head)?;
            mask = m;
            mask_cache = Some((mc, x.clone()));
        }
        let use_mask = config.use_mask && config.is_trainable(l);
        let (next, cache) = layer_forward(&x, lp, use_mask.then_some(&mask), &config.apply_mask_to);
        layers.push(cache);
        x = next;
    }
    Ok((
        x,
        mask,
        AggregatorCache {
            layers,
            mask: mask_cache,
        },
    ))
}

/// Three-stage forward pass; returns the final tokens and the stage-2 mask
/// (all zeros when the mask is disabled).
pub fn aggregator_forward(
    tokens: &TokenSet,
    config: &AggregatorConfig,
    params: &AggregatorParams,
) -> Result<(TokenSet, DynamicsMask), AggregatorError> {
    aggregator_forward_cached(tokens, config, params).map(|(t, m, _)| (t, m))
}

/// Reverse pass for a scalar loss with gradient `d_out` w.r.t. the output
/// tokens and optionally `d_mask` w.r.t. the returned mask values.
pub fn aggregator_backward(
    cache: &AggregatorCache,
    config: &AggregatorConfig,
    params: &AggregatorParams,
    d_out: &TokenSet,
    d_mask: Option<&[Vec<f64>]>,
) -> (AggregatorParams, TokenSet) {
    let mut grads = params.zeros_like();
    let mut dx = d_out.clone();
    let mut dmask_total: Vec<Vec<f64>> = match d_mask {
        Some(m) => m.to_vec(),
        None => d_out.data.iter().map(|m| vec![0.0; m.nrows()]).collect(),
    };
    for l in (0..params.layers.len()).rev() {
        let (dprev, g, dmask) = layer_backward(&cache.layers[l], &params.layers[l], &dx);
        grads.layers[l] = g;
        dx = dprev;
        if config.use_mask && config.is_trainable(l) {
            for (acc, dm) in dmask_total.iter_mut().zip(&dmask) {
                for (a, v) in acc.iter_mut().zip(dm) {
                    *a += v;
                }
            }
        }
        if l == config.n_stage1 {
            if let Some((mc, head_input)) = &cache.mask {
                let (gh, dt) = predict_mask_backward(mc, head_input, &params.mask_head, &dmask_total);
                grads.mask_head = gh;
                dx.add_assign(&dt);
            }
        }
    }
    (grads, dx)
}

/// Max absolute entry of a list of matrices.
pub fn max_abs(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter().map(|m| m.abs().max()).fold(0.0, f64::max)
}
