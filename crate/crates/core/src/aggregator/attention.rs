//! Single-head attention with a row-gated additive key mask, plus its
//! reverse-mode derivative.
//!
//! Row-vector convention: `Q = X Wq`, `K = X Wk`, `V = X Wv`, logits
//! `L = Q K^T / sqrt(d)`, `A = softmax_rows(L + mask)` on gated rows only,
//! `Y = (A V) Wo`.

use nalgebra::DMatrix;

use super::AttentionParams;

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttnCache {
    pub x: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Row-softmax weights.
    pub a: DMatrix<f64>,
    /// `A V`, before the output projection.
    pub h: DMatrix<f64>,
    pub masked_rows: Vec<bool>,
    pub has_mask: bool,
}

#[derive(Debug, Clone)]
pub struct AttnGrad {
    pub dx: DMatrix<f64>,
    pub params: AttentionParams,
    /// Gradient w.r.t. each key's mask value (zeros when unmasked).
    pub dmask: Vec<f64>,
}

pub(crate) fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax of `logits`, adding `mask[j]` to column `j` only on the
/// rows flagged in `masked_rows`. Unflagged rows never touch the mask, so
/// their weights are bit-identical to an unmasked run.
pub fn masked_softmax(logits: &DMatrix<f64>, mask: Option<&[f64]>, masked_rows: &[bool]) -> DMatrix<f64> {
    let (n, m) = logits.shape();
    let mut out = DMatrix::zeros(n, m);
    let mut row = vec![0.0; m];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = logits[(i, j)];
        }
        if let (Some(mask), true) = (mask, masked_rows[i]) {
            for (r, mv) in row.iter_mut().zip(mask) {
                *r += mv;
            }
        }
        softmax_row_in_place(&mut row);
        for (j, r) in row.iter().enumerate() {
            out[(i, j)] = *r;
        }
    }
    out
}

pub fn masked_attention_cached(
    x: &DMatrix<f64>,
    params: &AttentionParams,
    mask: Option<&[f64]>,
    masked_rows: &[bool],
) -> (DMatrix<f64>, AttnCache) {
    let n = x.nrows();
    assert_eq!(masked_rows.len(), n, "masked_rows length");
    if let Some(m) = mask {
        assert_eq!(m.len(), n, "mask length");
    }
    let d = x.ncols() as f64;
    let q = x * &params.wq;
    let k = x * &params.wk;
    let v = x * &params.wv;
    let logits = (&q * k.transpose()) / d.sqrt();
    let a = masked_softmax(&logits, mask, masked_rows);
    let h = &a * &v;
    let y = &h * &params.wo;
    let cache = AttnCache {
        x: x.clone(),
        q,
        k,
        v,
        a,
        h,
        masked_rows: masked_rows.to_vec(),
        has_mask: mask.is_some(),
    };
    (y, cache)
}

/// Attention output (no residual).
pub fn masked_attention(
    x: &DMatrix<f64>,
    params: &AttentionParams,
    mask: Option<&[f64]>,
    masked_rows: &[bool],
) -> DMatrix<f64> {
    masked_attention_cached(x, params, mask, masked_rows).0
}

pub fn masked_attention_backward(cache: &AttnCache, params: &AttentionParams, dy: &DMatrix<f64>) -> AttnGrad {
    let n = cache.x.nrows();
    let scale = 1.0 / (cache.x.ncols() as f64).sqrt();
    let dwo = cache.h.transpose() * dy;
    let dh = dy * params.wo.transpose();
    let da = &dh * cache.v.transpose();
    let dv = cache.a.transpose() * &dh;
    // Softmax Jacobian, row by row.
    let mut dl = DMatrix::zeros(n, n);
    for i in 0..n {
        let dot: f64 = (0..n).map(|j| da[(i, j)] * cache.a[(i, j)]).sum();
        for j in 0..n {
            dl[(i, j)] = cache.a[(i, j)] * (da[(i, j)] - dot);
        }
    }
    let mut dmask = vec![0.0; n];
    if cache.has_mask {
        for i in (0..n).filter(|&i| cache.masked_rows[i]) {
            for (j, dm) in dmask.iter_mut().enumerate() {
                *dm += dl[(i, j)];
            }
        }
    }
    let ds = dl * scale;
    let dq = &ds * &cache.k;
    let dk = ds.transpose() * &cache.q;
    let xt = cache.x.transpose();
    let grads = AttentionParams {
        wq: &xt * &dq,
        wk: &xt * &dk,
        wv: &xt * &dv,
        wo: dwo,
    };
    let dx = dq * params.wq.transpose() + dk * params.wk.transpose() + dv * params.wv.transpose();
    AttnGrad {
        dx,
        params: grads,
        dmask,
    }
}
