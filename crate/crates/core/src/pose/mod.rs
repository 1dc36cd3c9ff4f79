//! Relative pose from calibrated correspondences.
//!
//! The pipeline is the classical one: Hartley-normalized 8-point fit of the
//! essential matrix, projection onto the essential manifold, four-fold
//! decomposition resolved by cheirality voting, all wrapped in RANSAC.
//!
//! [`MaskPolicy`] lets the caller suppress correspondences believed to be on
//! moving objects, either by dropping them (`HardExclude`) or by
//! down-weighting them in sampling and scoring (`SoftWeight`).

pub mod experiment;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, EssentialMatrix, PixelHomogeneous, PoseSE3};
use crate::rng::{stream, Domain};
use crate::scene_sim::Correspondence;

/// Minimal sample size of the linear solver.
pub const SAMPLE_SIZE: usize = 8;
/// Weight below which `HardExclude` drops a correspondence.
pub const HARD_EXCLUDE_THRESHOLD: f64 = 0.5;
/// Rays closer than this angle (radians) are treated as parallel.
pub const MIN_RAY_ANGLE: f64 = 1e-10;
/// Relative singular-value floor of the 8-point design matrix.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("need at least {SAMPLE_SIZE} correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("design matrix rank is below 8 (σ8/σ1 = {0:e})")]
    DegenerateConfiguration(f64),
    #[error("no decomposition has a strict cheirality majority ({best} of {total})")]
    CheiralityAmbiguous { best: usize, total: usize },
    #[error("rays are parallel (angle {0:e} rad)")]
    ParallelRays(f64),
    #[error("best consensus has {found} inliers, {required} required")]
    NotEnoughInliers { found: usize, required: usize },
    #[error("invalid RANSAC config: {0}")]
    InvalidConfig(String),
    #[error("invalid mask policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub n_iterations: usize,
    /// Threshold on `|x̃_t^T E x̃_r|` with `E` scaled to unit singular values.
    pub inlier_threshold: f64,
    pub seed: u64,
    pub min_inliers: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            n_iterations: 300,
            inlier_threshold: 1e-3,
            seed: 0,
            min_inliers: SAMPLE_SIZE,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PoseError> {
        if self.n_iterations == 0 {
            return Err(PoseError::InvalidConfig("n_iterations must be >= 1".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(PoseError::InvalidConfig(format!(
                "inlier_threshold = {} must be > 0",
                self.inlier_threshold
            )));
        }
        if self.min_inliers < SAMPLE_SIZE {
            return Err(PoseError::InvalidConfig(format!(
                "min_inliers = {} must be >= {SAMPLE_SIZE}",
                self.min_inliers
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    None,
    HardExclude,
    SoftWeight,
}

impl MaskMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskMode::None => "none",
            MaskMode::HardExclude => "hard",
            MaskMode::SoftWeight => "soft",
        }
    }
}

/// Per-correspondence staticness weights in `[0, 1]` (0 = fully dynamic).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPolicy {
    pub mode: MaskMode,
    pub weights: Option<Vec<f64>>,
}

impl MaskPolicy {
    pub fn none() -> Self {
        Self {
            mode: MaskMode::None,
            weights: None,
        }
    }

    pub fn hard(weights: Vec<f64>) -> Self {
        Self {
            mode: MaskMode::HardExclude,
            weights: Some(weights),
        }
    }

    pub fn soft(weights: Vec<f64>) -> Self {
        Self {
            mode: MaskMode::SoftWeight,
            weights: Some(weights),
        }
    }

    fn validate(&self, n: usize) -> Result<(), PoseError> {
        match (&self.mode, &self.weights) {
            (MaskMode::None, _) => {}
            (_, None) => {
                return Err(PoseError::InvalidPolicy(format!(
                    "mode {:?} needs weights",
                    self.mode
                )))
            }
            (_, Some(_)) => {}
        }
        if let Some(w) = &self.weights {
            if w.len() != n {
                return Err(PoseError::InvalidPolicy(format!(
                    "{} weights for {n} correspondences",
                    w.len()
                )));
            }
            if let Some(bad) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(PoseError::InvalidPolicy(format!("weight {bad} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    /// `t <- r` with unit-length translation.
    pub pose: PoseSE3,
    pub essential: EssentialMatrix,
    /// One entry per input correspondence.
    pub inlier_mask: Vec<bool>,
    pub n_inliers: usize,
}

/// A correspondence on the normalized image plane (`w = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPair {
    pub r: Vector3<f64>,
    pub t: Vector3<f64>,
}

impl NormalizedPair {
    pub fn from_pixels(x_r: &PixelHomogeneous, x_t: &PixelHomogeneous, k: &CameraIntrinsics) -> Self {
        Self {
            r: k.normalize(x_r),
            t: k.normalize(x_t),
        }
    }

    pub fn residual(&self, e: &EssentialMatrix) -> f64 {
        self.t.dot(&(e.0 * self.r))
    }
}

fn normalize_pairs(corrs: &[Correspondence], k: &CameraIntrinsics) -> Vec<NormalizedPair> {
    corrs
        .iter()
        .map(|c| NormalizedPair::from_pixels(&c.x_r, &c.x_t, k))
        .collect()
}

/// Similarity moving the centroid to the origin with mean distance `sqrt(2)`.
fn hartley_transform<'a>(pts: impl Iterator<Item = &'a Vector3<f64>> + Clone) -> Option<Matrix3<f64>> {
    let n = pts.clone().count() as f64;
    let (sx, sy) = pts.clone().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = pts.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean_dist > 0.0) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Normalized 8-point solver on normalized-plane pairs.
pub fn eight_point_normalized(pairs: &[NormalizedPair]) -> Result<EssentialMatrix, PoseError> {
    if pairs.len() < SAMPLE_SIZE {
        return Err(PoseError::TooFewCorrespondences(pairs.len()));
    }
    let degenerate = || PoseError::DegenerateConfiguration(0.0);
    let tr = hartley_transform(pairs.iter().map(|p| &p.r)).ok_or_else(degenerate)?;
    let tt = hartley_transform(pairs.iter().map(|p| &p.t)).ok_or_else(degenerate)?;

    // Pad to at least 9 rows so the SVD exposes the full right null space.
    let rows = pairs.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, pair) in pairs.iter().enumerate() {
        let p = tr * pair.r;
        let q = tt * pair.t;
        let row = [
            q.x * p.x,
            q.x * p.y,
            q.x,
            q.y * p.x,
            q.y * p.y,
            q.y,
            p.x,
            p.y,
            1.0,
        ];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = |k: usize| svd.singular_values[order[k]];
    let ratio = s(7) / s(0);
    if !(ratio > RANK_TOL) {
        return Err(PoseError::DegenerateConfiguration(ratio));
    }
    let null = v_t.row(order[8]);
    let en = Matrix3::from_row_slice(null.transpose().as_slice());
    let e = tt.transpose() * en * tr;
    Ok(EssentialMatrix(e).enforce_constraints())
}

/// Normalized 8-point fit of `E` from at least eight correspondences.
pub fn eight_point(
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<EssentialMatrix, PoseError> {
    eight_point_normalized(&normalize_pairs(correspondences, k))
}

/// Midpoint triangulation in the reference camera frame.
pub fn triangulate(
    x_r: &PixelHomogeneous,
    x_t: &PixelHomogeneous,
    k: &CameraIntrinsics,
    pose: &PoseSE3,
) -> Result<Vector3<f64>, PoseError> {
    triangulate_normalized(&NormalizedPair::from_pixels(x_r, x_t, k), pose)
}

pub fn triangulate_normalized(pair: &NormalizedPair, pose: &PoseSE3) -> Result<Vector3<f64>, PoseError> {
    let rt = pose.rotation.transpose();
    let d1 = pair.r;
    let d2 = rt * pair.t;
    let c2 = -(rt * pose.translation);
    let angle = d1.cross(&d2).norm().atan2(d1.dot(&d2));
    if angle < MIN_RAY_ANGLE {
        return Err(PoseError::ParallelRays(angle));
    }
    // Closest points o1 + a d1 and c2 + b d2.
    let w = -c2;
    let (aa, bb, cc) = (d1.dot(&d1), d1.dot(&d2), d2.dot(&d2));
    let (dd, ee) = (d1.dot(&w), d2.dot(&w));
    let den = aa * cc - bb * bb;
    let a = (bb * ee - cc * dd) / den;
    let b = (aa * ee - bb * dd) / den;
    Ok((d1 * a + (c2 + d2 * b)) * 0.5)
}

/// The four `(R, t)` factorizations of `E`, `t` unit length.
pub fn pose_candidates(e: &EssentialMatrix) -> [PoseSE3; 4] {
    let svd = e.0.svd(true, true);
    let mut u = svd.u.expect("requested U");
    let mut v_t = svd.v_t.expect("requested V^T");
    // Column of U / row of V^T belonging to the smallest singular value.
    let null = (0..3)
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .unwrap();
    if null != 2 {
        u.swap_columns(null, 2);
        v_t.swap_rows(null, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)].map(|(rotation, translation)| PoseSE3 {
        rotation,
        translation,
    })
}

fn cheirality_count(pose: &PoseSE3, pairs: &[NormalizedPair]) -> usize {
    pairs
        .iter()
        .filter(|p| match triangulate_normalized(p, pose) {
            Ok(x) => x.z > 0.0 && pose.transform_point(&x).z > 0.0,
            Err(_) => false,
        })
        .count()
}

/// Selects the decomposition of `e` that puts a strict majority of points in
/// front of both cameras.
pub fn decompose_essential(
    e: &EssentialMatrix,
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<PoseSE3, PoseError> {
    decompose_normalized(e, &normalize_pairs(correspondences, k))
}

pub fn decompose_normalized(e: &EssentialMatrix, pairs: &[NormalizedPair]) -> Result<PoseSE3, PoseError> {
    if pairs.is_empty() {
        return Err(PoseError::TooFewCorrespondences(0));
    }
    let (best, count) = pose_candidates(e)
        .into_iter()
        .map(|p| {
            let c = cheirality_count(&p, pairs);
            (p, c)
        })
        .fold(None, |acc: Option<(PoseSE3, usize)>, (p, c)| match acc {
            Some((_, bc)) if bc >= c => acc,
            _ => Some((p, c)),
        })
        .expect("four candidates");
    if 2 * count <= pairs.len() {
        return Err(PoseError::CheiralityAmbiguous {
            best: count,
            total: pairs.len(),
        });
    }
    Ok(best)
}

/// RANSAC over 8-point hypotheses with an optional dynamics mask.
///
/// Iteration `i` samples from its own stream `(config.seed, Ransac, [i])`, so
/// the result does not depend on evaluation order. The best hypothesis is the
/// one with the most inliers, ties going to the lowest iteration index. The
/// consensus set is re-fit with [`eight_point`] and decomposed.
pub fn ransac_pose(
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
    config: &RansacConfig,
    policy: &MaskPolicy,
) -> Result<PoseEstimate, PoseError> {
    config.validate()?;
    let n = correspondences.len();
    policy.validate(n)?;
    let pairs = normalize_pairs(correspondences, k);
    let weights = policy.weights.as_deref();

    let usable: Vec<usize> = match policy.mode {
        MaskMode::None => (0..n).collect(),
        MaskMode::HardExclude => {
            let w = weights.expect("validated");
            (0..n).filter(|&i| w[i] >= HARD_EXCLUDE_THRESHOLD).collect()
        }
        MaskMode::SoftWeight => {
            let w = weights.expect("validated");
            (0..n).filter(|&i| w[i] > 0.0).collect()
        }
    };
    if usable.len() < SAMPLE_SIZE {
        return Err(PoseError::TooFewCorrespondences(usable.len()));
    }
    let thresholds: Vec<f64> = usable
        .iter()
        .map(|&i| match policy.mode {
            MaskMode::SoftWeight => config.inlier_threshold * weights.unwrap()[i],
            _ => config.inlier_threshold,
        })
        .collect();

    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut sample = Vec::with_capacity(SAMPLE_SIZE);
    for iter in 0..config.n_iterations {
        let mut rng = stream(config.seed, Domain::Ransac, &[iter as u64]);
        let picks: Vec<usize> = match policy.mode {
            MaskMode::SoftWeight => {
                let w = weights.unwrap();
                match index::sample_weighted(&mut rng, usable.len(), |j| w[usable[j]], SAMPLE_SIZE) {
                    Ok(ix) => ix.into_iter().collect(),
                    Err(_) => continue,
                }
            }
            _ => index::sample(&mut rng, usable.len(), SAMPLE_SIZE).into_vec(),
        };
        sample.clear();
        sample.extend(picks.iter().map(|&j| pairs[usable[j]]));
        let Ok(e) = eight_point_normalized(&sample) else {
            continue;
        };
        let consensus: Vec<usize> = usable
            .iter()
            .zip(&thresholds)
            .filter(|(&i, &thr)| pairs[i].residual(&e).abs() < thr)
            .map(|(&i, _)| i)
            .collect();
        if best.as_ref().is_none_or(|(_, b)| consensus.len() > b.len()) {
            best = Some((iter, consensus));
        }
    }

    let consensus = best.map(|(_, c)| c).unwrap_or_default();
    if consensus.len() < config.min_inliers {
        return Err(PoseError::NotEnoughInliers {
            found: consensus.len(),
            required: config.min_inliers,
        });
    }
    let inlier_pairs: Vec<NormalizedPair> = consensus.iter().map(|&i| pairs[i]).collect();
    let essential = eight_point_normalized(&inlier_pairs)?;
    let pose = decompose_normalized(&essential, &inlier_pairs)?;
    let mut inlier_mask = vec![false; n];
    for &i in &consensus {
        inlier_mask[i] = true;
    }
    Ok(PoseEstimate {
        pose,
        essential,
        n_inliers: consensus.len(),
        inlier_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{essential_from_pose, rotation_angle_between};
    use crate::scene_sim::{generate_scene, render_correspondences, FrameObservation, SceneConfig};

    fn static_obs(seed: u64, noise: f64) -> (FrameObservation, CameraIntrinsics) {
        let cfg = SceneConfig {
            n_static: 80,
            n_dynamic: 0,
            seed,
            ..Default::default()
        };
        let s = generate_scene(&cfg).unwrap();
        (render_correspondences(&s, 0, 2, noise, seed).unwrap(), s.intrinsics)
    }

    fn direction_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.cross(b).norm().atan2(a.dot(b))
    }

    #[test]
    fn eight_point_on_exact_points() {
        let (obs, k) = static_obs(3, 0.0);
        let e = eight_point(&obs.correspondences, &k).unwrap();
        let max = obs
            .correspondences
            .iter()
            .map(|c| crate::geometry::epipolar_residual(&c.x_r, &c.x_t, &k, &e).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-10, "{max}");
        // Same line through the origin as the ground-truth E.
        let gt = essential_from_pose(&obs.relative_pose).unwrap().to_vector();
        let got = e.to_vector();
        let dot: f64 = gt.iter().zip(&got).map(|(a, b)| a * b).sum();
        let n1 = gt.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n2 = got.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos = (dot / (n1 * n2)).abs();
        let sin = (1.0 - cos * cos).max(0.0).sqrt();
        assert!(sin.atan2(cos) < 1e-6);
    }

    #[test]
    fn duplicated_points_are_degenerate() {
        let (obs, k) = static_obs(3, 0.0);
        let dup = vec![obs.correspondences[0]; 12];
        assert!(matches!(
            eight_point(&dup, &k),
            Err(PoseError::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            eight_point(&obs.correspondences[..7], &k),
            Err(PoseError::TooFewCorrespondences(7))
        ));
    }

    #[test]
    fn decomposition_recovers_ground_truth() {
        let (obs, k) = static_obs(5, 0.0);
        let e = essential_from_pose(&obs.relative_pose).unwrap();
        let p = decompose_essential(&e, &obs.correspondences, &k).unwrap();
        assert!(rotation_angle_between(&p.rotation, &obs.relative_pose.rotation) < 1e-6);
        assert!(direction_angle(&p.translation, &obs.relative_pose.translation) < 1e-6);
        assert!((p.translation.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_flipped_translation_fails_cheirality() {
        let (obs, k) = static_obs(5, 0.0);
        let gt = obs.relative_pose;
        let flipped = PoseSE3 {
            rotation: gt.rotation,
            translation: -gt.translation,
        };
        // Both satisfy the algebraic constraint up to sign ...
        let e1 = essential_from_pose(&gt).unwrap();
        let e2 = essential_from_pose(&flipped).unwrap();
        assert!((e1.0 + e2.0).abs().max() < 1e-15);
        // ... but only one keeps the points in front.
        let pairs = normalize_pairs(&obs.correspondences, &k);
        let n = pairs.len();
        assert_eq!(cheirality_count(&gt, &pairs), n);
        assert!(cheirality_count(&flipped, &pairs) < n / 2);
    }

    #[test]
    fn single_point_behind_camera_is_ambiguous() {
        let (obs, k) = static_obs(5, 0.0);
        let e = essential_from_pose(&obs.relative_pose).unwrap();
        // A point behind the reference camera, imaged through both projections.
        let gt = obs.relative_pose;
        let x = Vector3::new(0.2, -0.1, -3.0);
        let x_r = PixelHomogeneous(k.matrix() * x);
        let x_t = PixelHomogeneous(k.matrix() * gt.transform_point(&x));
        let c = Correspondence {
            x_r,
            x_t,
            ..obs.correspondences[0]
        };
        assert_eq!(cheirality_count(&gt, &normalize_pairs(&[c], &k)), 0);
        let res = decompose_essential(&e, &[c], &k);
        match res {
            Err(PoseError::CheiralityAmbiguous { .. }) => {}
            Ok(p) => {
                // A winner exists only if it disagrees with the true pose.
                let rot_err = rotation_angle_between(&p.rotation, &obs.relative_pose.rotation);
                let dir_err = direction_angle(&p.translation, &obs.relative_pose.translation);
                assert!(rot_err > 1e-3 || dir_err > 1e-3);
            }
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn triangulation_recovers_depth() {
        let (obs, k) = static_obs(8, 0.0);
        for c in &obs.correspondences {
            let x = triangulate(&c.x_r, &c.x_t, &k, &obs.relative_pose).unwrap();
            assert!(((x.z - c.depth_r) / c.depth_r).abs() < 1e-8);
            let back = k.project(&x).normalized();
            assert!((k.normalize(&back) - k.normalize(&c.x_r)).abs().max() < 1e-8);
        }
    }

    #[test]
    fn identical_rays_are_parallel() {
        let k = CameraIntrinsics::default();
        let x = PixelHomogeneous::from_image(100.0, 100.0);
        let pose = PoseSE3::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.0)).unwrap();
        assert!(matches!(
            triangulate(&x, &x, &k, &pose),
            Err(PoseError::ParallelRays(_))
        ));
    }

    #[test]
    fn noisy_triangulation_stays_in_envelope() {
        let (exact, k) = static_obs(8, 0.0);
        let (noisy, _) = static_obs(8, 0.5);
        assert_eq!(exact.correspondences.len(), noisy.correspondences.len());
        let mut rel = Vec::new();
        for c in &noisy.correspondences {
            if let Ok(x) = triangulate(&c.x_r, &c.x_t, &k, &noisy.relative_pose) {
                rel.push(((x.z - c.depth_r) / c.depth_r).abs());
            }
        }
        rel.sort_by(f64::total_cmp);
        // Loose sanity bound: half-pixel noise over a short baseline.
        assert!(rel[rel.len() / 2] < 0.2);
    }

    #[test]
    fn ransac_recovers_static_pose_for_every_policy() {
        let (obs, k) = static_obs(11, 0.0);
        let n = obs.correspondences.len();
        let cfg = RansacConfig {
            n_iterations: 20,
            ..Default::default()
        };
        for policy in [
            MaskPolicy::none(),
            MaskPolicy::hard(vec![1.0; n]),
            MaskPolicy::soft(vec![0.9; n]),
        ] {
            let est = ransac_pose(&obs.correspondences, &k, &cfg, &policy).unwrap();
            assert!(rotation_angle_between(&est.pose.rotation, &obs.relative_pose.rotation) < 1e-6);
            assert!((est.pose.translation.norm() - 1.0).abs() < 1e-12);
            assert_eq!(est.n_inliers, est.inlier_mask.iter().filter(|b| **b).count());
            assert_eq!(est.n_inliers, n);
        }
    }

    #[test]
    fn ransac_is_deterministic() {
        let (obs, k) = static_obs(12, 0.7);
        let cfg = RansacConfig {
            n_iterations: 50,
            inlier_threshold: 3e-3,
            seed: 9,
            ..Default::default()
        };
        let a = ransac_pose(&obs.correspondences, &k, &cfg, &MaskPolicy::none()).unwrap();
        let b = ransac_pose(&obs.correspondences, &k, &cfg, &MaskPolicy::none()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unsatisfiable_min_inliers() {
        let (obs, k) = static_obs(11, 0.0);
        let cfg = RansacConfig {
            n_iterations: 5,
            min_inliers: obs.correspondences.len() + 1,
            ..Default::default()
        };
        assert!(matches!(
            ransac_pose(&obs.correspondences, &k, &cfg, &MaskPolicy::none()),
            Err(PoseError::NotEnoughInliers { .. })
        ));
    }

    #[test]
    fn hard_exclusion_never_marks_dropped_points() {
        let (obs, k) = static_obs(11, 0.0);
        let n = obs.correspondences.len();
        let w: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.2 } else { 1.0 }).collect();
        let est = ransac_pose(
            &obs.correspondences,
            &k,
            &RansacConfig::default(),
            &MaskPolicy::hard(w.clone()),
        )
        .unwrap();
        for i in 0..n {
            if w[i] < HARD_EXCLUDE_THRESHOLD {
                assert!(!est.inlier_mask[i]);
            }
        }
    }

    #[test]
    fn policy_validation() {
        let (obs, k) = static_obs(11, 0.0);
        let cfg = RansacConfig::default();
        let bad_len = MaskPolicy::hard(vec![1.0; 3]);
        assert!(matches!(
            ransac_pose(&obs.correspondences, &k, &cfg, &bad_len),
            Err(PoseError::InvalidPolicy(_))
        ));
        let missing = MaskPolicy {
            mode: MaskMode::SoftWeight,
            weights: None,
        };
        assert!(ransac_pose(&obs.correspondences, &k, &cfg, &missing).is_err());
        let all_dynamic = MaskPolicy::hard(vec![0.0; obs.correspondences.len()]);
        assert!(matches!(
            ransac_pose(&obs.correspondences, &k, &cfg, &all_dynamic),
            Err(PoseError::TooFewCorrespondences(0))
        ));
    }

    #[test]
    fn scene_scale_does_not_change_rotation() {
        // Scaling the whole scene scales the translation and depths only.
        let base = SceneConfig {
            n_static: 60,
            n_dynamic: 0,
            seed: 21,
            ..Default::default()
        };
        let scaled = SceneConfig {
            volume_min: [-3.0; 3],
            volume_max: [3.0; 3],
            trajectory: crate::scene_sim::CameraPath::Orbit {
                radius: 18.0,
                height: 1.5,
                start_deg: 0.0,
                step_deg: 4.0,
            },
            ..base.clone()
        };
        let a = generate_scene(&base).unwrap();
        let b = generate_scene(&scaled).unwrap();
        let oa = render_correspondences(&a, 0, 1, 0.0, 0).unwrap();
        let ob = render_correspondences(&b, 0, 1, 0.0, 0).unwrap();
        let cfg = RansacConfig {
            n_iterations: 10,
            ..Default::default()
        };
        let ea = ransac_pose(&oa.correspondences, &a.intrinsics, &cfg, &MaskPolicy::none()).unwrap();
        let eb = ransac_pose(&ob.correspondences, &b.intrinsics, &cfg, &MaskPolicy::none()).unwrap();
        assert!(rotation_angle_between(&ea.pose.rotation, &eb.pose.rotation) < 1e-8);
        assert!(direction_angle(&ea.pose.translation, &eb.pose.translation) < 1e-8);
    }
}
