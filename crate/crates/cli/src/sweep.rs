//! Contamination sweep over dynamic ratio, pixel noise, seed and mask policy.
//!
//! Each `(ratio, noise, seed)` cell renders one scene and solves it under
//! every policy with the same correspondences and RANSAC seed, so rows can
//! be compared seed by seed. Rotation and translation-direction errors refer
//! to frames `(0, 1)`. The cell's `ate` chains the `(0, t)` estimates into a
//! trajectory anchored at the true first camera, with each translation
//! rescaled to the true baseline (two-view scale is unobservable), and
//! scores it after Sim(3) alignment.

use std::fmt::Write as _;

use dyn4d_core::geometry::PoseSE3;
use dyn4d_core::metrics::{ate, Trajectory};
use dyn4d_core::pose::experiment::{median, policy_for, score_estimate, trial_scene_config, TrialSpec};
use dyn4d_core::pose::{ransac_pose, MaskMode, PoseError, RansacConfig};
use dyn4d_core::scene_sim::{generate_scene, render_correspondences, SceneConfig};
use log::{debug, warn};
use rayon::prelude::*;

use crate::config::SweepConfig;
use crate::error::{CliError, Result};

pub const SWEEP_HEADER: &str =
    "dynamic_ratio,noise_px,policy,seed,rot_err_deg,trans_dir_err_deg,ate,dyn_coverage,ok";
pub const SUMMARY_HEADER: &str = "dynamic_ratio,noise_px,policy,n_ok,n_failed,median_rot_err_deg,median_trans_dir_err_deg,median_ate,median_dyn_coverage";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub dynamic_ratio: f64,
    pub noise_px: f64,
    pub policy: MaskMode,
    pub seed: u64,
    pub rot_err_deg: f64,
    pub trans_dir_err_deg: f64,
    pub ate: f64,
    pub dyn_coverage: f64,
    pub ok: bool,
}

fn policy_rank(m: MaskMode) -> u8 {
    match m {
        MaskMode::None => 0,
        MaskMode::HardExclude => 1,
        MaskMode::SoftWeight => 2,
    }
}

fn run_cell(base: &SceneConfig, ransac: &RansacConfig, spec: TrialSpec, policies: &[MaskMode]) -> Result<Vec<SweepRow>> {
    let cfg = SceneConfig {
        n_frames: base.n_frames.max(2),
        ..trial_scene_config(base, &spec)
    };
    let scene = generate_scene(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let observations = (1..scene.n_frames())
        .map(|t| render_correspondences(&scene, 0, t, spec.noise_px, spec.seed))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let ransac = RansacConfig {
        seed: spec.seed,
        ..ransac.clone()
    };
    let world_to_cam0 = scene.camera_poses[0];
    let gt_traj = Trajectory::new(
        (0..scene.n_frames()).map(|f| f as f64).collect(),
        scene.camera_to_world(),
    )
    .expect("frame indices increase");

    let mut rows = Vec::with_capacity(policies.len());
    for &mode in policies {
        let estimates: Vec<std::result::Result<_, PoseError>> = observations
            .iter()
            .map(|obs| ransac_pose(&obs.correspondences, &scene.intrinsics, &ransac, &policy_for(mode, obs)))
            .collect();
        let first = estimates[0].as_ref().map(|e| score_estimate(&observations[0], e));
        let ate_value = if estimates.iter().all(|e| e.is_ok()) {
            let mut poses = vec![gt_traj.poses[0]];
            for (obs, est) in observations.iter().zip(&estimates) {
                let est = est.as_ref().expect("checked above");
                let scale = obs.relative_pose.translation.norm();
                let rel = PoseSE3 {
                    rotation: est.pose.rotation,
                    translation: est.pose.translation * scale,
                };
                poses.push(rel.compose(&world_to_cam0).inverse());
            }
            let pred = Trajectory {
                timestamps: gt_traj.timestamps.clone(),
                poses,
            };
            ate(&pred, &gt_traj).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        let row = match first {
            Ok(o) => SweepRow {
                dynamic_ratio: spec.dynamic_ratio,
                noise_px: spec.noise_px,
                policy: mode,
                seed: spec.seed,
                rot_err_deg: o.rot_err_rad.to_degrees(),
                trans_dir_err_deg: o.trans_dir_err_rad.to_degrees(),
                ate: ate_value,
                dyn_coverage: o.dyn_coverage,
                ok: ate_value.is_finite(),
            },
            Err(e) => {
                warn!("ratio {} noise {} seed {} policy {}: {e}", spec.dynamic_ratio, spec.noise_px, spec.seed, mode.as_str());
                SweepRow {
                    dynamic_ratio: spec.dynamic_ratio,
                    noise_px: spec.noise_px,
                    policy: mode,
                    seed: spec.seed,
                    rot_err_deg: f64::NAN,
                    trans_dir_err_deg: f64::NAN,
                    ate: f64::NAN,
                    dyn_coverage: f64::NAN,
                    ok: false,
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Runs every cell in parallel; rows come back sorted by
/// `(ratio, noise, policy, seed)`.
pub fn run_sweep(base: &SceneConfig, ransac: &RansacConfig, sweep: &SweepConfig, seed: u64) -> Result<Vec<SweepRow>> {
    let mut cells = Vec::new();
    for &dynamic_ratio in &sweep.dynamic_ratios {
        for &noise_px in &sweep.noise_px {
            for k in 0..sweep.n_seeds {
                cells.push(TrialSpec {
                    dynamic_ratio,
                    noise_px,
                    seed: seed + k,
                });
            }
        }
    }
    debug!("sweep: {} cells x {} policies", cells.len(), sweep.policies.len());
    let mut rows: Vec<SweepRow> = cells
        .into_par_iter()
        .map(|spec| run_cell(base, ransac, spec, &sweep.policies))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| {
        a.dynamic_ratio
            .total_cmp(&b.dynamic_ratio)
            .then(a.noise_px.total_cmp(&b.noise_px))
            .then(policy_rank(a.policy).cmp(&policy_rank(b.policy)))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

pub fn rows_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.dynamic_ratio,
            r.noise_px,
            r.policy.as_str(),
            r.seed,
            r.rot_err_deg,
            r.trans_dir_err_deg,
            r.ate,
            r.dyn_coverage,
            u8::from(r.ok)
        )
        .expect("write to String");
    }
    s
}

/// Per `(ratio, noise, policy)` group: medians over successful rows.
pub fn summary_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    let mut i = 0;
    while i < rows.len() {
        let key = (rows[i].dynamic_ratio, rows[i].noise_px, rows[i].policy);
        let mut j = i;
        while j < rows.len() && (rows[j].dynamic_ratio, rows[j].noise_px, rows[j].policy) == key {
            j += 1;
        }
        let group = &rows[i..j];
        let ok: Vec<&SweepRow> = group.iter().filter(|r| r.ok).collect();
        let med = |f: fn(&SweepRow) -> f64| median(&mut ok.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(f64::NAN);
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            key.0,
            key.1,
            key.2.as_str(),
            ok.len(),
            group.len() - ok.len(),
            med(|r| r.rot_err_deg),
            med(|r| r.trans_dir_err_deg),
            med(|r| r.ate),
            med(|r| r.dyn_coverage)
        )
        .expect("write to String");
        i = j;
    }
    s
}
