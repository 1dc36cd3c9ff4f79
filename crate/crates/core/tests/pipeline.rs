use dyn4d_core::aggregator::decoder::{decode, decode_backward, DecoderOutput, DecoderOutputGrad, DecoderParams};
use dyn4d_core::aggregator::serialize::{read_params, write_params};
use dyn4d_core::aggregator::{
    aggregator_backward, aggregator_forward, aggregator_forward_cached, AggregatorConfig, AggregatorParams, TokenSet,
};
use dyn4d_core::geometry::rotation_angle_between;
use dyn4d_core::losses::{
    camera_loss, camera_loss_grad, dense_loss, dense_loss_grad, total_loss, CameraEncoding, LossWeights,
};
use dyn4d_core::metrics::{ate, Trajectory};
use dyn4d_core::pose::experiment::{median, run_paired_trial, TrialSpec};
use dyn4d_core::pose::{ransac_pose, MaskMode, MaskPolicy, RansacConfig};
use dyn4d_core::rng::{stream, Domain};
use dyn4d_core::scene_sim::{generate_scene, render_correspondences, SceneConfig};
use rand::Rng;

#[test]
fn static_scene_pose_is_accurate() {
    let cfg = SceneConfig {
        n_static: 200,
        n_dynamic: 0,
        ..Default::default()
    };
    let scene = generate_scene(&cfg).unwrap();
    let solve = |t: usize, noise: f64, seed: u64| {
        let obs = render_correspondences(&scene, 0, t, noise, seed).unwrap();
        let est = ransac_pose(&obs.correspondences, &scene.intrinsics, &RansacConfig::default(), &MaskPolicy::none())
            .unwrap();
        rotation_angle_between(&est.pose.rotation, &obs.relative_pose.rotation).to_degrees()
    };
    for t in 1..cfg.n_frames {
        assert!(solve(t, 0.0, 0) < 1e-6);
        let mut errs: Vec<f64> = (0..9).map(|s| solve(t, 0.5, s)).collect();
        let m = median(&mut errs).unwrap();
        assert!(m < 2.0, "frame {t}: median {m} deg");
    }
}

#[test]
fn excluding_dynamic_points_helps_under_contamination() {
    let base = SceneConfig::default();
    let ransac = RansacConfig {
        n_iterations: 150,
        ..Default::default()
    };
    let (mut none, mut hard) = (Vec::new(), Vec::new());
    for seed in 0..16 {
        let spec = TrialSpec {
            dynamic_ratio: 0.3,
            noise_px: 0.5,
            seed,
        };
        let out = run_paired_trial(&base, &ransac, &spec, &[MaskMode::None, MaskMode::HardExclude]).unwrap();
        none.push(out[0].as_ref().unwrap().rot_err_rad);
        hard.push(out[1].as_ref().unwrap().rot_err_rad);
    }
    assert!(median(&mut hard).unwrap() < median(&mut none).unwrap());
}

#[test]
fn ground_truth_trajectory_scores_zero_ate() {
    let scene = generate_scene(&SceneConfig {
        n_frames: 8,
        ..Default::default()
    })
    .unwrap();
    let poses = scene.camera_to_world();
    let t = Trajectory::new((0..poses.len()).map(|i| i as f64).collect(), poses).unwrap();
    assert!(ate(&t, &t).unwrap() < 1e-12);
}

fn targets(out: &DecoderOutput, seed: u64) -> (Vec<CameraEncoding>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut r = stream(seed, Domain::Fixture, &[77]);
    let cams = out
        .cameras
        .iter()
        .map(|_| {
            let mut c = [0.0; 9];
            let q = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 0.3, 1.0];
            let n = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            for k in 0..4 {
                c[k] = q[k] / n;
            }
            for v in &mut c[4..7] {
                *v = r.random_range(-1.0..1.0);
            }
            c[7] = 0.9;
            c[8] = 1.2;
            CameraEncoding(c)
        })
        .collect();
    let mut dense = |maps: &[dyn4d_core::losses::DensePrediction]| -> Vec<Vec<f64>> {
        maps.iter()
            .map(|m| m.values.iter().map(|_| r.random_range(0.5..2.0)).collect())
            .collect()
    };
    let depth = dense(&out.depth);
    let points = dense(&out.points);
    (cams, depth, points)
}

fn objective(
    out: &DecoderOutput,
    gt: &(Vec<CameraEncoding>, Vec<Vec<f64>>, Vec<Vec<f64>>),
    w: &LossWeights,
) -> (f64, DecoderOutputGrad) {
    let n = out.cameras.len() as f64;
    let valid = vec![true; out.depth[0].confidence.len()];
    let mut cam = 0.0;
    let mut dcam = Vec::new();
    for (p, g) in out.cameras.iter().zip(&gt.0) {
        cam += camera_loss(p, g, w.huber_delta) / n;
        dcam.push(camera_loss_grad(p, g, w.huber_delta).map(|v| v / n));
    }
    let (mut depth, mut pmap) = (0.0, 0.0);
    let (mut dd, mut dp) = (Vec::new(), Vec::new());
    for (p, g) in out.depth.iter().zip(&gt.1) {
        depth += dense_loss(p, g, &valid, w).unwrap() / n;
        let (a, b) = dense_loss_grad(p, g, &valid, w).unwrap();
        dd.push((a.iter().map(|v| v / n).collect(), b.iter().map(|v| v / n).collect()));
    }
    for (p, g) in out.points.iter().zip(&gt.2) {
        pmap += dense_loss(p, g, &valid, w).unwrap() / n;
        let (a, b) = dense_loss_grad(p, g, &valid, w).unwrap();
        dp.push((a.iter().map(|v| v / n).collect(), b.iter().map(|v| v / n).collect()));
    }
    let lc = w.lambda_c;
    for g in &mut dcam {
        for v in g.iter_mut() {
            *v *= lc;
        }
    }
    (
        total_loss(cam, depth, pmap, w),
        DecoderOutputGrad {
            cameras: dcam,
            depth: dd,
            points: dp,
        },
    )
}

#[test]
fn gradient_step_lowers_the_training_loss() {
    let cfg = AggregatorConfig::default();
    let mut agg = AggregatorParams::init(&cfg, 3);
    let mut dec = DecoderParams::init(cfg.d_model, 3);
    let tokens = TokenSet::random(1, 3, cfg.n_reg, (4, 5), cfg.d_model, 9);
    let w = LossWeights::default();

    let run = |agg: &AggregatorParams, dec: &DecoderParams| {
        let (x, _, cache) = aggregator_forward_cached(&tokens, &cfg, agg).unwrap();
        let out = decode(&x, dec);
        (x, out, cache)
    };
    let (x, out, cache) = run(&agg, &dec);
    let gt = targets(&out, 1);
    let (l0, dout) = objective(&out, &gt, &w);
    let (gdec, dx) = decode_backward(&x, &dec, &out, &dout);
    let (gagg, _) = aggregator_backward(&cache, &cfg, &agg, &dx, None);

    let mut grads = Vec::new();
    gagg.clone().for_each_group_mut(|_, g| grads.extend_from_slice(g));
    gdec.clone().for_each_group_mut(|_, g| grads.extend_from_slice(g));
    let norm2: f64 = grads.iter().map(|g| g * g).sum();
    assert!(norm2 > 0.0);

    let lr = 1e-3 / norm2.sqrt();
    let mut it = grads.into_iter();
    agg.for_each_group_mut(|_, p| p.iter_mut().for_each(|v| *v -= lr * it.next().unwrap()));
    dec.for_each_group_mut(|_, p| p.iter_mut().for_each(|v| *v -= lr * it.next().unwrap()));
    let (_, out1, _) = run(&agg, &dec);
    let (l1, _) = objective(&out1, &gt, &w);
    // First-order prediction of the decrease is lr * |g|^2.
    let predicted = lr * norm2;
    assert!(l1 < l0, "{l1} !< {l0}");
    assert!(((l0 - l1) - predicted).abs() < 0.05 * predicted);
}

#[test]
fn serialized_parameters_reproduce_the_forward_pass() {
    let cfg = AggregatorConfig::default();
    let params = AggregatorParams::init(&cfg, 21);
    let mut buf = Vec::new();
    write_params(&mut buf, &params).unwrap();
    let back = read_params(&mut buf.as_slice()).unwrap();
    let tokens = TokenSet::random(2, 2, cfg.n_reg, (2, 3), cfg.d_model, 4);
    let (a, ma) = aggregator_forward(&tokens, &cfg, &params).unwrap();
    let (b, mb) = aggregator_forward(&tokens, &cfg, &back).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}
