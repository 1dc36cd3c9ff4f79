use dyn4d_core::geometry::PoseSE3;
use dyn4d_core::metrics::{
    ate, pointcloud_metrics, rpe, sample_frames, umeyama_sim3, NnMethod, Sim3Transform, Trajectory,
};
use dyn4d_core::rng::{stream, Domain};
use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss3(r: &mut impl Rng, sigma: f64) -> Vector3<f64> {
    let mut g = || -> f64 { StandardNormal.sample(r) };
    Vector3::new(g(), g(), g()) * sigma
}

fn random_rotation(r: &mut impl Rng, max_angle: f64) -> Matrix3<f64> {
    let axis = Unit::new_normalize(gauss3(r, 1.0));
    *Rotation3::from_axis_angle(&axis, r.random_range(-max_angle..max_angle)).matrix()
}

fn wobbly_trajectory(seed: u64, n: usize) -> Trajectory {
    let mut r = stream(seed, Domain::Fixture, &[900]);
    let poses = (0..n)
        .map(|i| {
            let a = i as f64 * 0.25;
            PoseSE3 {
                rotation: random_rotation(&mut r, 3.0),
                translation: Vector3::new(2.0 * a.cos(), 0.3 * a.sin(), 1.5 * a.sin()) + gauss3(&mut r, 0.05),
            }
        })
        .collect();
    Trajectory::new((0..n).map(|i| i as f64 / 30.0).collect(), poses).unwrap()
}

/// Closed-form absolute orientation with unit quaternions: the rotation is the
/// dominant eigenvector of a 4x4 symmetric matrix built from cross-covariances.
fn horn_sim3(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Sim3Transform {
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vector3<f64>>() / n;
    let md = dst.iter().sum::<Vector3<f64>>() / n;
    let mut m = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        m += (s - ms) * (d - md).transpose();
    }
    let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    #[rustfmt::skip]
    let big = Matrix4::new(
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,        -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,        -sxx - syy + szz,
    );
    let eig = big.symmetric_eigen();
    let q = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    let r = *rot.to_rotation_matrix().matrix();
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, d) in src.iter().zip(dst) {
        num += (d - md).dot(&(r * (s - ms)));
        den += (s - ms).norm_squared();
    }
    let scale = num / den;
    Sim3Transform {
        scale,
        rotation: r,
        translation: md - r * ms * scale,
    }
}

fn rmse(s: &Sim3Transform, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    let sq: f64 = src.iter().zip(dst).map(|(a, b)| (s.apply(a) - b).norm_squared()).sum();
    (sq / src.len() as f64).sqrt()
}

fn perturbed(traj: &Trajectory, seed: u64, sigma: f64) -> Trajectory {
    let mut r = stream(seed, Domain::Fixture, &[901]);
    let truth = Sim3Transform {
        scale: 0.6,
        rotation: random_rotation(&mut r, 3.0),
        translation: gauss3(&mut r, 2.0),
    };
    let mut out = traj.transformed(&truth);
    for p in &mut out.poses {
        p.translation += gauss3(&mut r, sigma);
    }
    out
}

#[test]
fn ate_matches_quaternion_alignment() {
    for seed in 0..10 {
        let gt = wobbly_trajectory(seed, 25);
        let pred = perturbed(&gt, seed, 0.05);
        let horn = horn_sim3(&pred.positions(), &gt.positions());
        let expected = rmse(&horn, &pred.positions(), &gt.positions());
        let got = ate(&pred, &gt).unwrap();
        assert!((got - expected).abs() < 1e-9, "seed {seed}: {got} vs {expected}");
        assert!(got > 1e-3);
    }
}

#[test]
fn umeyama_beats_random_perturbations() {
    for seed in 0..5 {
        let gt = wobbly_trajectory(seed, 30);
        let pred = perturbed(&gt, seed + 50, 0.1);
        let (src, dst) = (pred.positions(), gt.positions());
        let best = umeyama_sim3(&src, &dst).unwrap();
        let base = rmse(&best, &src, &dst);
        let mut r = stream(seed, Domain::Fixture, &[902]);
        for _ in 0..100 {
            let other = Sim3Transform {
                scale: best.scale * (1.0 + r.random_range(-0.05..0.05)),
                rotation: random_rotation(&mut r, 0.05) * best.rotation,
                translation: best.translation + gauss3(&mut r, 0.05),
            };
            assert!(base <= rmse(&other, &src, &dst) + 1e-15);
        }
    }
}

#[test]
fn single_pose_offset() {
    let gt = wobbly_trajectory(3, 20);
    let mut pred = gt.clone();
    let v = Vector3::new(0.3, -0.2, 0.1);
    pred.poses[7].translation += v;
    let got = ate(&pred, &gt).unwrap();
    let horn = horn_sim3(&pred.positions(), &gt.positions());
    assert!((got - rmse(&horn, &pred.positions(), &gt.positions())).abs() < 1e-12);
    // The identity is feasible, so the optimum cannot exceed it.
    assert!(got <= v.norm() / (20f64).sqrt() + 1e-15);
    assert!(got > 0.0);
}

#[test]
fn ate_gauge_invariance() {
    let gt = wobbly_trajectory(4, 18);
    let pred = perturbed(&gt, 4, 0.03);
    let base = ate(&pred, &gt).unwrap();
    let mut r = stream(4, Domain::Fixture, &[903]);
    let rigid = Sim3Transform {
        scale: 1.0,
        rotation: random_rotation(&mut r, 3.0),
        translation: gauss3(&mut r, 5.0),
    };
    let both = ate(&pred.transformed(&rigid), &gt.transformed(&rigid)).unwrap();
    assert!((both - base).abs() < 1e-9);
    let sim = Sim3Transform {
        scale: 3.3,
        ..rigid
    };
    assert!((ate(&pred.transformed(&sim), &gt).unwrap() - base).abs() < 1e-9);
}

fn geodesic_deg(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

#[test]
fn rpe_rotation_with_alternating_perturbation() {
    let gt = wobbly_trajectory(5, 16);
    let theta = 0.04;
    let kick = *Rotation3::from_axis_angle(&Vector3::z_axis(), theta).matrix();
    let mut pred = gt.clone();
    for (i, p) in pred.poses.iter_mut().enumerate() {
        if i % 2 == 1 {
            p.rotation *= kick;
        }
    }
    let (rt, rr) = rpe(&pred, &gt, 1).unwrap();
    // Brute force over consecutive pairs; camera centres are untouched so the
    // alignment is the identity.
    let (mut st, mut sr) = (0.0, 0.0);
    for i in 0..15 {
        let (g0, g1, p0, p1) = (&gt.poses[i], &gt.poses[i + 1], &pred.poses[i], &pred.poses[i + 1]);
        let rg = g0.rotation.transpose() * g1.rotation;
        let rp = p0.rotation.transpose() * p1.rotation;
        let tg = g0.rotation.transpose() * (g1.translation - g0.translation);
        let tp = p0.rotation.transpose() * (p1.translation - p0.translation);
        sr += geodesic_deg(&(rg.transpose() * rp)).powi(2);
        st += (rg.transpose() * (tp - tg)).norm_squared();
    }
    assert!((rr - (sr / 15.0).sqrt()).abs() < 1e-6);
    assert!((rr - theta.to_degrees()).abs() < 1e-6);
    assert!((rt - (st / 15.0).sqrt()).abs() < 1e-9);
}

#[test]
fn pointcloud_random_exhaustive() {
    let mut r = stream(11, Domain::Fixture, &[904]);
    let a: Vec<_> = (0..200).map(|_| gauss3(&mut r, 1.0)).collect();
    let b: Vec<_> = (0..200).map(|_| gauss3(&mut r, 1.0) + Vector3::new(0.2, 0.0, 0.0)).collect();
    let m = pointcloud_metrics(&a, &b, NnMethod::Grid).unwrap();
    let nn = |q: &Vector3<f64>, t: &[Vector3<f64>]| t.iter().map(|x| (q - x).norm()).fold(f64::MAX, f64::min);
    let mut acc: Vec<f64> = a.iter().map(|q| nn(q, &b)).collect();
    let mut comp: Vec<f64> = b.iter().map(|q| nn(q, &a)).collect();
    acc.sort_by(f64::total_cmp);
    comp.sort_by(f64::total_cmp);
    let acc_mean = acc.iter().sum::<f64>() / 200.0;
    let comp_mean = comp.iter().sum::<f64>() / 200.0;
    // Sorted summation order differs from query order.
    assert!((m.acc_mean - acc_mean).abs() < 1e-12);
    assert!((m.comp_mean - comp_mean).abs() < 1e-12);
    assert_eq!(m.acc_median, 0.5 * (acc[99] + acc[100]));
    assert_eq!(m.comp_median, 0.5 * (comp[99] + comp[100]));
    assert_eq!(m.overall_mean, 0.5 * (m.acc_mean + m.comp_mean));
}

proptest! {
    #[test]
    fn sampled_frames_are_spread(n_total in 1usize..500, n_sample in 2usize..40) {
        let s = sample_frames(n_total, n_sample);
        prop_assert!(!s.is_empty());
        prop_assert_eq!(s[0], 0);
        prop_assert_eq!(*s.last().unwrap(), n_total - 1);
        prop_assert!(s.len() <= n_sample.min(n_total));
        prop_assert!(s.windows(2).all(|w| w[1] > w[0]));
        if n_total > n_sample {
            let step = (n_total - 1) as f64 / (n_sample - 1) as f64;
            let gaps_ok = s.windows(2).all(|w| ((w[1] - w[0]) as f64 - step).abs() <= 1.0 + 1e-9);
            prop_assert!(gaps_ok);
        }
    }

    #[test]
    fn grid_and_brute_force_agree(seed in 0u64..1000, n in 1usize..60, m in 1usize..60) {
        let mut r = stream(seed, Domain::Fixture, &[905]);
        let a: Vec<_> = (0..n).map(|_| gauss3(&mut r, 2.0)).collect();
        let b: Vec<_> = (0..m).map(|_| gauss3(&mut r, 0.5)).collect();
        prop_assert_eq!(
            pointcloud_metrics(&a, &b, NnMethod::Grid).unwrap(),
            pointcloud_metrics(&a, &b, NnMethod::BruteForce).unwrap()
        );
    }
}
