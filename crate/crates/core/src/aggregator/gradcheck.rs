//! Central finite-difference verification of every analytic gradient.
//!
//! The aggregator and decoders are checked against a smooth scalar
//! objective (random linear functionals of the output tokens, the mask and
//! every decoder output). Each loss is checked w.r.t. its own inputs on
//! fixtures kept away from the kinks of `|x|` and of the Huber branch point.
//!
//! Relative error per entry is `|a - n| / max(|a|, |n|, floor)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::decoder::{decode, decode_backward, DecoderOutputGrad, DecoderParams};
use super::model::{aggregator_backward, aggregator_forward_cached};
use super::{AggregatorConfig, AggregatorError, AggregatorParams, TokenSet};
use crate::losses::{self, CameraEncoding, DensePrediction, LossWeights};
use crate::rng::{stream, Domain, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub n_configs: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
    pub batch: usize,
    pub n_frames: usize,
    pub grid: [usize; 2],
    /// Corrupt the analytic gradient of every group whose name starts with
    /// this prefix (fault-injection fixture).
    pub fault: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            n_configs: 10,
            step: 1e-6,
            tolerance: 1e-5,
            floor: 1e-2,
            seed: 0,
            batch: 1,
            n_frames: 2,
            grid: [2, 3],
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub name: String,
    pub n_checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub n_configs: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.name.as_str())
            .collect()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Accumulates per-group errors across configurations, keeping first-seen
/// order.
#[derive(Default)]
struct Tally {
    groups: Vec<GroupReport>,
}

impl Tally {
    fn record(&mut self, name: &str, analytic: &[f64], numeric: &[f64], cfg: &GradcheckConfig) {
        let idx = match self.groups.iter().position(|g| g.name == name) {
            Some(i) => i,
            None => {
                self.groups.push(GroupReport {
                    name: name.to_string(),
                    n_checked: 0,
                    max_rel_err: 0.0,
                    max_abs_err: 0.0,
                    passed: true,
                });
                self.groups.len() - 1
            }
        };
        let g = &mut self.groups[idx];
        let faulty = cfg.fault.as_deref().is_some_and(|f| name.starts_with(f));
        for (&a, &n) in analytic.iter().zip(numeric) {
            let a = if faulty { a * 1.1 + 1e-2 } else { a };
            g.n_checked += 1;
            g.max_rel_err = g.max_rel_err.max(rel_err(a, n, cfg.floor));
            g.max_abs_err = g.max_abs_err.max((a - n).abs());
        }
        g.passed = g.max_rel_err < cfg.tolerance;
    }

    fn finish(self, n_configs: usize) -> GradcheckReport {
        GradcheckReport {
            groups: self.groups,
            n_configs,
        }
    }
}

/// Everything the objective depends on.
#[derive(Debug, Clone)]
struct Bundle {
    agg: AggregatorParams,
    dec: DecoderParams,
    tokens: TokenSet,
}

impl Bundle {
    fn for_each_group_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        self.agg.for_each_group_mut(&mut f);
        self.dec.for_each_group_mut(&mut f);
        for m in &mut self.tokens.data {
            f("tokens", m.as_mut_slice());
        }
    }

    fn flat(&mut self) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = Vec::new();
        self.for_each_group_mut(|n, g| match out.last_mut() {
            Some((last, v)) if last == n => v.extend_from_slice(g),
            _ => out.push((n.to_string(), g.to_vec())),
        });
        out
    }

    fn perturbed(&self, group: usize, index: usize, delta: f64) -> Self {
        let mut b = self.clone();
        let mut gi = 0usize;
        let mut offset = 0usize;
        let mut prev: Option<String> = None;
        b.for_each_group_mut(|n, g| {
            if prev.as_deref().is_some_and(|p| p != n) {
                gi += 1;
                offset = 0;
            }
            if gi == group && index >= offset && index < offset + g.len() {
                g[index - offset] += delta;
            }
            offset += g.len();
            prev = Some(n.to_string());
        });
        b
    }
}

/// Random linear functional over every output.
struct Objective {
    tokens: Vec<DMatrix<f64>>,
    mask: Vec<Vec<f64>>,
    dout: DecoderOutputGrad,
}

fn randn(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

impl Objective {
    fn random(tokens: &TokenSet, rng: &mut StreamRng) -> Self {
        let hw = tokens.n_patches();
        let frames = tokens.batch() * tokens.n_frames;
        let mut vec_of = |n: usize| (0..n).map(|_| randn(rng)).collect::<Vec<f64>>();
        let mask = tokens.data.iter().map(|m| vec_of(m.nrows())).collect();
        let dout = DecoderOutputGrad {
            cameras: (0..frames)
                .map(|_| {
                    let v = vec_of(9);
                    std::array::from_fn(|i| v[i])
                })
                .collect(),
            depth: (0..frames).map(|_| (vec_of(hw), vec_of(hw))).collect(),
            points: (0..frames).map(|_| (vec_of(3 * hw), vec_of(hw))).collect(),
        };
        let tokens = tokens
            .data
            .iter()
            .map(|m| DMatrix::from_fn(m.nrows(), m.ncols(), |_, _| randn(rng)))
            .collect();
        Self { tokens, mask, dout }
    }

    /// Every output the functional touches, flattened.
    fn outputs(b: &Bundle, config: &AggregatorConfig) -> Result<Vec<f64>, AggregatorError> {
        let (out, mask, _) = aggregator_forward_cached(&b.tokens, config, &b.agg)?;
        let dec = decode(&out, &b.dec);
        let mut v = Vec::new();
        for y in &out.data {
            v.extend_from_slice(y.as_slice());
        }
        for m in &mask.values {
            v.extend_from_slice(m);
        }
        for (f, cam) in dec.cameras.iter().enumerate() {
            v.extend_from_slice(&cam.0);
            v.extend_from_slice(&dec.depth[f].values);
            v.extend_from_slice(&dec.depth[f].confidence);
            v.extend_from_slice(&dec.points[f].values);
            v.extend_from_slice(&dec.points[f].confidence);
        }
        Ok(v)
    }

    /// Weights in the order of [`Objective::outputs`].
    fn weights(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for g in &self.tokens {
            v.extend_from_slice(g.as_slice());
        }
        for m in &self.mask {
            v.extend_from_slice(m);
        }
        let d = &self.dout;
        for f in 0..d.cameras.len() {
            v.extend_from_slice(&d.cameras[f]);
            v.extend_from_slice(&d.depth[f].0);
            v.extend_from_slice(&d.depth[f].1);
            v.extend_from_slice(&d.points[f].0);
            v.extend_from_slice(&d.points[f].1);
        }
        v
    }

    /// Functional value relative to the outputs `base` of the unperturbed
    /// bundle; subtracting first keeps the summation roundoff far below the
    /// finite-difference signal.
    fn eval(&self, b: &Bundle, config: &AggregatorConfig, weights: &[f64], base: &[f64]) -> Result<f64, AggregatorError> {
        let y = Self::outputs(b, config)?;
        Ok(y.iter().zip(base).zip(weights).map(|((y, y0), w)| w * (y - y0)).sum())
    }

    fn grad(&self, b: &Bundle, config: &AggregatorConfig) -> Result<Bundle, AggregatorError> {
        let (out, _, cache) = aggregator_forward_cached(&b.tokens, config, &b.agg)?;
        let dec = decode(&out, &b.dec);
        let (gdec, dt_dec) = decode_backward(&out, &b.dec, &dec, &self.dout);
        let mut d_out = out.zeros_like();
        for (d, g) in d_out.data.iter_mut().zip(&self.tokens) {
            d.copy_from(g);
        }
        d_out.add_assign(&dt_dec);
        let (gagg, dtokens) = aggregator_backward(&cache, config, &b.agg, &d_out, Some(&self.mask));
        Ok(Bundle {
            agg: gagg,
            dec: gdec,
            tokens: dtokens,
        })
    }
}

/// Random aggregator config for trial `i`: shapes vary with the trial.
fn trial_config(i: usize) -> AggregatorConfig {
    AggregatorConfig {
        n_stage1: 1 + i % 2,
        n_stage2: 1 + (i / 2) % 2,
        n_stage3: i % 2,
        n_reg: 1 + i % 3,
        d_model: 4 + 4 * (i % 2),
        ..Default::default()
    }
}

/// Checks the aggregator, mask head and decoders on `cfg.n_configs` random
/// configurations.
pub fn gradcheck_aggregator(cfg: &GradcheckConfig) -> Result<GradcheckReport, AggregatorError> {
    let mut tally = Tally::default();
    for trial in 0..cfg.n_configs {
        let mut rng = stream(cfg.seed, Domain::Fixture, &[0x6772, trial as u64]);
        let config = trial_config(trial);
        let mut agg = AggregatorParams::init(&config, rng.random());
        agg.mask_head.tau_logit = randn(&mut rng);
        agg.mask_head.alpha_logit = randn(&mut rng);
        let tokens = TokenSet::random(
            cfg.batch,
            cfg.n_frames,
            config.n_reg,
            (cfg.grid[0], cfg.grid[1]),
            config.d_model,
            rng.random(),
        );
        let dec = DecoderParams::init(config.d_model, rng.random());
        let objective = Objective::random(&tokens, &mut rng);
        let mut bundle = Bundle { agg, dec, tokens };
        let mut analytic = objective.grad(&bundle, &config)?;
        let weights = objective.weights();
        let base = Objective::outputs(&bundle, &config)?;
        let analytic = analytic.flat();
        for (gi, (name, values)) in bundle.flat().iter().enumerate() {
            let mut numeric = Vec::with_capacity(values.len());
            for idx in 0..values.len() {
                let fp = objective.eval(&bundle.perturbed(gi, idx, cfg.step), &config, &weights, &base)?;
                let fm = objective.eval(&bundle.perturbed(gi, idx, -cfg.step), &config, &weights, &base)?;
                numeric.push((fp - fm) / (2.0 * cfg.step));
            }
            debug_assert_eq!(&analytic[gi].0, name);
            tally.record(name, &analytic[gi].1, &numeric, cfg);
        }
    }
    Ok(tally.finish(cfg.n_configs))
}

fn central(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// Uniform in `±[lo, hi]`.
fn away_from_zero(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    let m = rng.random_range(lo..hi);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

/// Checks every loss w.r.t. its prediction inputs.
pub fn gradcheck_losses(cfg: &GradcheckConfig) -> GradcheckReport {
    let mut tally = Tally::default();
    let h = cfg.step;
    let w = LossWeights::default();
    for trial in 0..cfg.n_configs {
        let mut rng = stream(cfg.seed, Domain::Fixture, &[0x6c6f, trial as u64]);

        // Huber on both branches, away from the branch point.
        let delta = w.huber_delta;
        let rs: Vec<f64> = (0..16)
            .map(|i| {
                if i % 2 == 0 {
                    away_from_zero(&mut rng, 0.01, 0.09) * delta / 0.1
                } else {
                    away_from_zero(&mut rng, 0.11, 1.0) * delta / 0.1
                }
            })
            .collect();
        let a: Vec<f64> = rs.iter().map(|r| losses::huber_grad(*r, delta)).collect();
        let n: Vec<f64> = rs
            .iter()
            .map(|r| (losses::huber(r + h, delta) - losses::huber(r - h, delta)) / (2.0 * h))
            .collect();
        tally.record("loss.huber", &a, &n, cfg);

        // Camera loss, including a sign-flipped quaternion.
        let q: [f64; 4] = std::array::from_fn(|_| randn(&mut rng));
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut gt = [0.0; 9];
        for i in 0..4 {
            gt[i] = q[i] / qn;
        }
        for v in &mut gt[4..7] {
            *v = randn(&mut rng);
        }
        gt[7] = rng.random_range(0.5..1.5);
        gt[8] = rng.random_range(0.5..1.5);
        let gt = CameraEncoding(gt);
        let flip = if trial % 2 == 0 { 1.0 } else { -1.0 };
        let pred: Vec<f64> = (0..9)
            .map(|i| {
                let r = if i % 3 == 0 {
                    away_from_zero(&mut rng, 0.11, 0.3)
                } else {
                    away_from_zero(&mut rng, 0.005, 0.09)
                };
                let v = gt.0[i] + r;
                if i < 4 {
                    flip * v
                } else {
                    v
                }
            })
            .collect();
        let cam = |p: &[f64]| {
            let e = CameraEncoding(std::array::from_fn(|i| p[i]));
            losses::camera_loss(&e, &gt, delta)
        };
        let a = losses::camera_loss_grad(&CameraEncoding(std::array::from_fn(|i| pred[i])), &gt, delta);
        tally.record("loss.camera", &a, &central(cam, &pred, h), cfg);

        // Confidence-weighted loss on a point map with some invalid pixels.
        let (hh, ww, ch) = (4, 5, 3);
        let npx = hh * ww;
        let gt_map: Vec<f64> = (0..npx * ch).map(|_| randn(&mut rng)).collect();
        let values: Vec<f64> = gt_map
            .iter()
            .map(|g| g + away_from_zero(&mut rng, 0.05, 1.0))
            .collect();
        let conf: Vec<f64> = (0..npx).map(|_| rng.random_range(0.5..3.0)).collect();
        let valid: Vec<bool> = (0..npx).map(|i| i % 7 != 3).collect();
        let mk = |v: &[f64], c: &[f64]| DensePrediction {
            height: hh,
            width: ww,
            channels: ch,
            values: v.to_vec(),
            confidence: c.to_vec(),
        };
        let (dv, dc) = losses::conf_weighted_loss_grad(&mk(&values, &conf), &gt_map, &valid, w.conf_reg).unwrap();
        let fv = |v: &[f64]| losses::conf_weighted_loss(&mk(v, &conf), &gt_map, &valid, w.conf_reg).unwrap();
        let fc = |c: &[f64]| losses::conf_weighted_loss(&mk(&values, c), &gt_map, &valid, w.conf_reg).unwrap();
        tally.record("loss.conf_weighted.values", &dv, &central(fv, &values, h), cfg);
        tally.record("loss.conf_weighted.confidence", &dc, &central(fc, &conf, h), cfg);

        // Gradient regularizer on a depth map: build differences with no
        // near-zero forward difference at any scale.
        let (gh, gw) = (9, 10);
        let gtd: Vec<f64> = (0..gh * gw).map(|_| randn(&mut rng)).collect();
        let gvalid: Vec<bool> = (0..gh * gw).map(|i| i % 11 != 5).collect();
        let pred_d = loop {
            let cand: Vec<f64> = gtd.iter().map(|g| g + randn(&mut rng)).collect();
            let ok = w.grad_scales.iter().all(|&s| {
                losses::gradient_pairs(gh, gw, &gvalid, s).iter().all(|&(a, b)| {
                    ((cand[b] - gtd[b]) - (cand[a] - gtd[a])).abs() > 1e-3
                })
            });
            if ok {
                break cand;
            }
        };
        let a = losses::gradient_regularizer_grad(&pred_d, &gtd, &gvalid, gh, gw, 1, &w.grad_scales).unwrap();
        let f = |p: &[f64]| losses::gradient_regularizer(p, &gtd, &gvalid, gh, gw, 1, &w.grad_scales).unwrap();
        tally.record("loss.gradient_regularizer", &a, &central(f, &pred_d, h), cfg);

        // Total: linear in its three terms.
        let terms = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let ft = |t: &[f64]| losses::total_loss(t[0], t[1], t[2], &w);
        tally.record("loss.total", &[w.lambda_c, 1.0, 1.0], &central(ft, &terms, h), cfg);
    }
    tally.finish(cfg.n_configs)
}

/// Aggregator and loss checks in one report.
pub fn gradcheck_all(cfg: &GradcheckConfig) -> Result<GradcheckReport, AggregatorError> {
    let mut report = gradcheck_aggregator(cfg)?;
    report.groups.extend(gradcheck_losses(cfg).groups);
    Ok(report)
}
