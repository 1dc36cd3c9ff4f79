//! Paired-seed contamination trials: the same scene and noise draw is solved
//! under each mask policy so policies can be compared seed by seed.

use serde::{Deserialize, Serialize};

use super::{ransac_pose, MaskMode, MaskPolicy, PoseError, PoseEstimate, RansacConfig};
use crate::geometry::{rotation_angle_between, PoseSE3};
use crate::scene_sim::{generate_scene, render_correspondences, FrameObservation, SceneConfig, SceneError};

#[derive(Debug, thiserror::Error)]
pub enum TrialError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

/// One cell of a contamination sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub dynamic_ratio: f64,
    pub noise_px: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOutcome {
    pub rot_err_rad: f64,
    pub trans_dir_err_rad: f64,
    /// Fraction of dynamic correspondences inside the consensus set.
    pub dyn_coverage: f64,
    /// Fraction of static correspondences inside the consensus set.
    pub static_coverage: f64,
}

/// Angle between two translation directions.
pub fn direction_error(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Scene config for a cell: the point budget of `base` split by `dynamic_ratio`.
pub fn trial_scene_config(base: &SceneConfig, spec: &TrialSpec) -> SceneConfig {
    let total = base.n_static + base.n_dynamic;
    let n_dynamic = ((spec.dynamic_ratio * total as f64).round() as usize).min(total);
    SceneConfig {
        n_static: total - n_dynamic,
        n_dynamic,
        noise_px: spec.noise_px,
        seed: spec.seed,
        ..base.clone()
    }
}

/// Ground-truth staticness weights for `mode`, `None` for plain RANSAC.
pub fn policy_for(mode: MaskMode, observation: &FrameObservation) -> MaskPolicy {
    match mode {
        MaskMode::None => MaskPolicy::none(),
        MaskMode::HardExclude => MaskPolicy::hard(observation.ground_truth_weights()),
        MaskMode::SoftWeight => MaskPolicy::soft(observation.ground_truth_weights()),
    }
}

pub fn score_estimate(observation: &FrameObservation, estimate: &PoseEstimate) -> PairOutcome {
    let gt: &PoseSE3 = &observation.relative_pose;
    let (mut dyn_in, mut dyn_n, mut st_in, mut st_n) = (0usize, 0usize, 0usize, 0usize);
    for (c, &inl) in observation.correspondences.iter().zip(&estimate.inlier_mask) {
        if c.is_dynamic {
            dyn_n += 1;
            dyn_in += usize::from(inl);
        } else {
            st_n += 1;
            st_in += usize::from(inl);
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    PairOutcome {
        rot_err_rad: rotation_angle_between(&estimate.pose.rotation, &gt.rotation),
        trans_dir_err_rad: direction_error(&estimate.pose.translation, &gt.translation),
        dyn_coverage: frac(dyn_in, dyn_n),
        static_coverage: frac(st_in, st_n),
    }
}

/// Solves frames `(0, 1)` of the cell's scene under every mode in `modes`.
///
/// All modes share the scene, the noise draw and the RANSAC seed.
pub fn run_paired_trial(
    base: &SceneConfig,
    ransac: &RansacConfig,
    spec: &TrialSpec,
    modes: &[MaskMode],
) -> Result<Vec<Result<PairOutcome, PoseError>>, TrialError> {
    let cfg = SceneConfig {
        n_frames: base.n_frames.max(2),
        ..trial_scene_config(base, spec)
    };
    let scene = generate_scene(&cfg)?;
    let obs = render_correspondences(&scene, 0, 1, spec.noise_px, spec.seed)?;
    let ransac = RansacConfig {
        seed: spec.seed,
        ..ransac.clone()
    };
    Ok(modes
        .iter()
        .map(|&mode| {
            let policy = policy_for(mode, &obs);
            ransac_pose(&obs.correspondences, &scene.intrinsics, &ransac, &policy)
                .map(|est| score_estimate(&obs, &est))
        })
        .collect())
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}
