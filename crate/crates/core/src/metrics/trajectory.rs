//! Camera trajectories, Sim(3)-aligned ATE and RPE, frame subsampling.

use nalgebra::Vector3;

use super::{umeyama_sim3, MetricsError, Sim3Transform};
use crate::geometry::{rotation_angle, PoseSE3};

/// Camera-to-world poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub poses: Vec<PoseSE3>,
}

impl Trajectory {
    pub fn new(timestamps: Vec<f64>, poses: Vec<PoseSE3>) -> Result<Self, MetricsError> {
        if timestamps.len() != poses.len() {
            return Err(MetricsError::InvalidTrajectory(format!(
                "{} timestamps for {} poses",
                timestamps.len(),
                poses.len()
            )));
        }
        if let Some(w) = timestamps.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(MetricsError::InvalidTrajectory(format!(
                "timestamps not increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { timestamps, poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.translation).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            timestamps: indices.iter().map(|&i| self.timestamps[i]).collect(),
            poses: indices.iter().map(|&i| self.poses[i]).collect(),
        }
    }

    pub fn transformed(&self, s: &Sim3Transform) -> Self {
        Self {
            timestamps: self.timestamps.clone(),
            poses: self.poses.iter().map(|p| s.apply_pose(p)).collect(),
        }
    }
}

/// Nearest-timestamp matching within `tolerance`, each gt pose used once.
/// Returns the matched `(pred, gt)` sub-trajectories.
pub fn associate(pred: &Trajectory, gt: &Trajectory, tolerance: f64) -> Result<(Trajectory, Trajectory), MetricsError> {
    let mut used = vec![false; gt.len()];
    let mut pi = Vec::new();
    let mut gi = Vec::new();
    for (i, &t) in pred.timestamps.iter().enumerate() {
        // Timestamps are sorted: binary search for the insertion point.
        let k = gt.timestamps.partition_point(|&g| g < t);
        let best = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&j| j < gt.len() && !used[j])
            .min_by(|&a, &b| (gt.timestamps[a] - t).abs().total_cmp(&(gt.timestamps[b] - t).abs()));
        if let Some(j) = best {
            if (gt.timestamps[j] - t).abs() <= tolerance {
                used[j] = true;
                pi.push(i);
                gi.push(j);
            }
        }
    }
    if pi.len() < 3 {
        return Err(MetricsError::AssociationFailure(pi.len()));
    }
    Ok((pred.subset(&pi), gt.subset(&gi)))
}

fn check_lengths(pred: &Trajectory, gt: &Trajectory) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(format!("{} vs {} poses", pred.len(), gt.len())));
    }
    Ok(())
}

/// Sim(3) alignment of `pred` camera centres onto `gt`.
pub fn align_trajectory(pred: &Trajectory, gt: &Trajectory) -> Result<Sim3Transform, MetricsError> {
    check_lengths(pred, gt)?;
    umeyama_sim3(&pred.positions(), &gt.positions())
}

/// RMSE of camera-centre residuals after Sim(3) alignment.
pub fn ate(pred: &Trajectory, gt: &Trajectory) -> Result<f64, MetricsError> {
    let s = align_trajectory(pred, gt)?;
    let n = pred.len() as f64;
    let sq: f64 = pred
        .poses
        .iter()
        .zip(&gt.poses)
        .map(|(p, g)| (s.apply(&p.translation) - g.translation).norm_squared())
        .sum();
    Ok((sq / n).sqrt())
}

/// `(rpe_trans, rpe_rot_deg)` at frame gap `delta` after Sim(3) alignment.
pub fn rpe(pred: &Trajectory, gt: &Trajectory, delta: usize) -> Result<(f64, f64), MetricsError> {
    check_lengths(pred, gt)?;
    if delta == 0 || delta >= pred.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "frame gap {delta} for {} poses",
            pred.len()
        )));
    }
    let aligned = pred.transformed(&align_trajectory(pred, gt)?);
    let m = pred.len() - delta;
    let (mut st, mut sr) = (0.0, 0.0);
    for i in 0..m {
        let rel_gt = gt.poses[i].inverse().compose(&gt.poses[i + delta]);
        let rel_pred = aligned.poses[i].inverse().compose(&aligned.poses[i + delta]);
        let e = rel_gt.inverse().compose(&rel_pred);
        st += e.translation.norm_squared();
        sr += rotation_angle(&e.rotation).powi(2);
    }
    Ok(((st / m as f64).sqrt(), (sr / m as f64).sqrt().to_degrees()))
}

/// Up to `n_sample` evenly spaced indices including both ends, rounded and
/// deduplicated; every frame when `n_total <= n_sample`.
pub fn sample_frames(n_total: usize, n_sample: usize) -> Vec<usize> {
    if n_total <= n_sample {
        return (0..n_total).collect();
    }
    if n_sample == 0 {
        return Vec::new();
    }
    if n_sample == 1 {
        return vec![0];
    }
    let step = (n_total - 1) as f64 / (n_sample - 1) as f64;
    let mut out: Vec<usize> = Vec::with_capacity(n_sample);
    for k in 0..n_sample {
        let idx = (k as f64 * step).round() as usize;
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3, Unit};

    fn traj(n: usize) -> Trajectory {
        let poses = (0..n)
            .map(|i| {
                let a = i as f64 * 0.3;
                PoseSE3 {
                    rotation: *Rotation3::from_euler_angles(0.1 * a, a, 0.05).matrix(),
                    translation: Vector3::new(3.0 * a.cos(), 0.2 * a, 3.0 * a.sin()),
                }
            })
            .collect();
        Trajectory::new((0..n).map(|i| i as f64 * 0.1).collect(), poses).unwrap()
    }

    #[test]
    fn self_errors_are_zero() {
        let t = traj(12);
        assert!(ate(&t, &t).unwrap() < 1e-12);
        let (a, b) = rpe(&t, &t, 1).unwrap();
        assert!(a < 1e-12 && b < 1e-6);
    }

    #[test]
    fn similarity_of_prediction_is_absorbed() {
        let gt = traj(15);
        let s = Sim3Transform {
            scale: 0.37,
            rotation: *Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, 3.0)), 0.8).matrix(),
            translation: Vector3::new(1.0, -2.0, 5.0),
        };
        let pred = gt.transformed(&s);
        assert!(ate(&pred, &gt).unwrap() < 1e-9);
        let (rt, rr) = rpe(&pred, &gt, 1).unwrap();
        assert!(rt < 1e-9 && rr < 1e-6);
    }

    #[test]
    fn gap_too_large() {
        let t = traj(4);
        assert!(matches!(rpe(&t, &t, 4), Err(MetricsError::LengthMismatch(_))));
        assert!(ate(&t, &traj(5)).is_err());
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_frames(10, 10), (0..10).collect::<Vec<_>>());
        assert_eq!(sample_frames(5, 10), (0..5).collect::<Vec<_>>());
        let s = sample_frames(91, 10);
        assert_eq!(s, vec![0, 10, 20, 30, 40, 50, 60, 70, 80, 90]);
        let s = sample_frames(23, 10);
        assert_eq!((s[0], *s.last().unwrap(), s.len()), (0, 22, 10));
        let gaps: Vec<usize> = s.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| *g == 2 || *g == 3));
    }

    #[test]
    fn association_with_jitter() {
        let gt = traj(10);
        let mut pred = gt.clone();
        for (i, t) in pred.timestamps.iter_mut().enumerate() {
            *t += if i % 2 == 0 { 0.01 } else { -0.015 };
        }
        let (p, g) = associate(&pred, &gt, 0.02).unwrap();
        assert_eq!(p.len(), 10);
        assert_eq!(g.timestamps, gt.timestamps);
        let far = Trajectory {
            timestamps: gt.timestamps.iter().map(|t| t + 5.0).collect(),
            poses: gt.poses.clone(),
        };
        assert!(matches!(associate(&far, &gt, 0.02), Err(MetricsError::AssociationFailure(0))));
    }

    #[test]
    fn unsorted_timestamps_rejected() {
        let p = PoseSE3 {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        };
        assert!(Trajectory::new(vec![0.0, 0.0], vec![p, p]).is_err());
    }
}
