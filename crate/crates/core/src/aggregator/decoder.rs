//! Linear readouts standing in for the prediction heads: the camera token of
//! each frame maps to a 9-vector, each patch token to a depth, a 3D point and
//! their confidences (`1 + exp(c)`).

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use super::TokenSet;
use crate::losses::{CameraEncoding, DensePrediction};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub cam: DMatrix<f64>,
    pub cam_bias: Vec<f64>,
    pub depth: Vec<f64>,
    pub depth_bias: f64,
    pub depth_conf: Vec<f64>,
    pub depth_conf_bias: f64,
    pub points: DMatrix<f64>,
    pub points_bias: Vec<f64>,
    pub points_conf: Vec<f64>,
    pub points_conf_bias: f64,
}

/// Per-frame predictions, indexed `b * S + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    pub cameras: Vec<CameraEncoding>,
    pub depth: Vec<DensePrediction>,
    pub points: Vec<DensePrediction>,
}

/// Loss gradients w.r.t. a [`DecoderOutput`]: `(values, confidence)` pairs
/// for the dense maps.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutputGrad {
    pub cameras: Vec<[f64; 9]>,
    pub depth: Vec<(Vec<f64>, Vec<f64>)>,
    pub points: Vec<(Vec<f64>, Vec<f64>)>,
}

impl DecoderParams {
    pub fn init(d: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Domain::Params, &[1]);
        let s = 1.0 / (d as f64).sqrt();
        let mut n = || -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            s * z
        };
        Self {
            cam: DMatrix::from_fn(d, 9, |_, _| n()),
            cam_bias: (0..9).map(|_| n()).collect(),
            depth: (0..d).map(|_| n()).collect(),
            depth_bias: 1.0,
            depth_conf: (0..d).map(|_| n()).collect(),
            depth_conf_bias: 0.0,
            points: DMatrix::from_fn(d, 3, |_, _| n()),
            points_bias: (0..3).map(|_| n()).collect(),
            points_conf: (0..d).map(|_| n()).collect(),
            points_conf_bias: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.cam.nrows();
        Self {
            cam: DMatrix::zeros(d, 9),
            cam_bias: vec![0.0; 9],
            depth: vec![0.0; d],
            depth_bias: 0.0,
            depth_conf: vec![0.0; d],
            depth_conf_bias: 0.0,
            points: DMatrix::zeros(d, 3),
            points_bias: vec![0.0; 3],
            points_conf: vec![0.0; d],
            points_conf_bias: 0.0,
        }
    }

    pub fn for_each_group_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        f("decoder.cam", self.cam.as_mut_slice());
        f("decoder.cam_bias", &mut self.cam_bias);
        f("decoder.depth", &mut self.depth);
        f("decoder.depth_bias", std::slice::from_mut(&mut self.depth_bias));
        f("decoder.depth_conf", &mut self.depth_conf);
        f("decoder.depth_conf_bias", std::slice::from_mut(&mut self.depth_conf_bias));
        f("decoder.points", self.points.as_mut_slice());
        f("decoder.points_bias", &mut self.points_bias);
        f("decoder.points_conf", &mut self.points_conf);
        f("decoder.points_conf_bias", std::slice::from_mut(&mut self.points_conf_bias));
    }
}

fn dot(a: &[f64], row: nalgebra::DVectorView<'_, f64>) -> f64 {
    a.iter().zip(row.iter()).map(|(x, y)| x * y).sum()
}

pub fn decode(tokens: &TokenSet, params: &DecoderParams) -> DecoderOutput {
    let (h, w) = tokens.grid;
    let first_patch = 1 + tokens.n_reg;
    let mut out = DecoderOutput {
        cameras: Vec::new(),
        depth: Vec::new(),
        points: Vec::new(),
    };
    for x in &tokens.data {
        for s in 0..tokens.n_frames {
            let cam_tok = x.row(tokens.row(s, 0)).transpose();
            let g = params.cam.transpose() * &cam_tok;
            let mut enc = [0.0; 9];
            for (i, e) in enc.iter_mut().enumerate() {
                *e = g[i] + params.cam_bias[i];
            }
            out.cameras.push(CameraEncoding(enc));
            let mut depth = Vec::with_capacity(h * w);
            let mut dconf = Vec::with_capacity(h * w);
            let mut pts = Vec::with_capacity(3 * h * w);
            let mut pconf = Vec::with_capacity(h * w);
            for q in 0..h * w {
                let z = x.row(tokens.row(s, first_patch + q)).transpose();
                let zv = z.column(0);
                depth.push(dot(&params.depth, zv) + params.depth_bias);
                dconf.push(1.0 + (dot(&params.depth_conf, zv) + params.depth_conf_bias).exp());
                let p = params.points.transpose() * &z;
                for k in 0..3 {
                    pts.push(p[k] + params.points_bias[k]);
                }
                pconf.push(1.0 + (dot(&params.points_conf, zv) + params.points_conf_bias).exp());
            }
            out.depth.push(DensePrediction {
                height: h,
                width: w,
                channels: 1,
                values: depth,
                confidence: dconf,
            });
            out.points.push(DensePrediction {
                height: h,
                width: w,
                channels: 3,
                values: pts,
                confidence: pconf,
            });
        }
    }
    out
}

/// Parameter and token gradients of a loss whose gradient w.r.t. the
/// decoder output is `dout`.
pub fn decode_backward(
    tokens: &TokenSet,
    params: &DecoderParams,
    out: &DecoderOutput,
    dout: &DecoderOutputGrad,
) -> (DecoderParams, TokenSet) {
    let mut g = params.zeros_like();
    let mut dt = tokens.zeros_like();
    let (h, w) = tokens.grid;
    let first_patch = 1 + tokens.n_reg;
    let d = tokens.width();
    for (b, x) in tokens.data.iter().enumerate() {
        for s in 0..tokens.n_frames {
            let f = b * tokens.n_frames + s;
            let r = tokens.row(s, 0);
            for i in 0..9 {
                let gi = dout.cameras[f][i];
                g.cam_bias[i] += gi;
                for c in 0..d {
                    g.cam[(c, i)] += x[(r, c)] * gi;
                    dt.data[b][(r, c)] += params.cam[(c, i)] * gi;
                }
            }
            let (dd, ddc) = &dout.depth[f];
            let (dp, dpc) = &dout.points[f];
            for q in 0..h * w {
                let r = tokens.row(s, first_patch + q);
                // d conf / d logit = conf - 1.
                let gdc = ddc[q] * (out.depth[f].confidence[q] - 1.0);
                let gpc = dpc[q] * (out.points[f].confidence[q] - 1.0);
                g.depth_bias += dd[q];
                g.depth_conf_bias += gdc;
                g.points_conf_bias += gpc;
                for k in 0..3 {
                    g.points_bias[k] += dp[3 * q + k];
                }
                for c in 0..d {
                    let z = x[(r, c)];
                    g.depth[c] += z * dd[q];
                    g.depth_conf[c] += z * gdc;
                    g.points_conf[c] += z * gpc;
                    let mut acc = params.depth[c] * dd[q] + params.depth_conf[c] * gdc + params.points_conf[c] * gpc;
                    for k in 0..3 {
                        g.points[(c, k)] += z * dp[3 * q + k];
                        acc += params.points[(c, k)] * dp[3 * q + k];
                    }
                    dt.data[b][(r, c)] += acc;
                }
            }
        }
    }
    (g, dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_positive_confidence() {
        let t = TokenSet::random(2, 3, 4, (2, 3), 8, 1);
        let out = decode(&t, &DecoderParams::init(8, 2));
        assert_eq!(out.cameras.len(), 6);
        assert_eq!(out.depth[0].values.len(), 6);
        assert_eq!(out.points[5].values.len(), 18);
        for p in out.depth.iter().chain(&out.points) {
            p.validate().unwrap();
            assert!(p.confidence.iter().all(|c| *c > 1.0));
        }
    }
}
