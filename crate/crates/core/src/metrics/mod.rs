//! Evaluation: Sim(3) alignment, trajectory errors, depth and point-cloud
//! metrics.

pub mod depth;
pub mod pointcloud;
pub mod trajectory;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PoseSE3;

pub use depth::{align_depth, depth_metrics, evaluate_depth, DepthAlignment, DepthEvalConfig, DepthMap};
pub use pointcloud::{pointcloud_metrics, NnMethod, PointCloudMetrics};
pub use trajectory::{associate, ate, rpe, sample_frames, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no valid pixels")]
    EmptyValidSet,
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("only {0} timestamps matched, need at least 3")]
    AssociationFailure(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// `x -> s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3Transform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// Maps a camera-to-world pose into the transformed world frame.
    pub fn apply_pose(&self, pose: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * pose.rotation,
            translation: self.apply(&pose.translation),
        }
    }
}

/// Closed-form least-squares similarity mapping `src` onto `dst`.
pub fn umeyama_sim3(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Sim3Transform, MetricsError> {
    if src.len() != dst.len() {
        return Err(MetricsError::LengthMismatch(format!("{} vs {} points", src.len(), dst.len())));
    }
    let n = src.len();
    if n < 3 {
        return Err(MetricsError::DegenerateGeometry(format!("{n} points, need 3")));
    }
    let nf = n as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / nf;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let cs = s - mu_s;
        cov += (d - mu_d) * cs.transpose();
        scatter += cs * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov /= nf;
    var_s /= nf;
    let spread = scatter.symmetric_eigenvalues();
    let (lo, hi) = (spread.min(), spread.max());
    // Second-largest eigenvalue of the scatter is zero for collinear points.
    let mid = spread.sum() - lo - hi;
    if !(hi > 0.0) || mid < 1e-12 * hi {
        return Err(MetricsError::DegenerateGeometry("source points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut sgn = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        let smallest = svd.singular_values.imin();
        sgn[smallest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&sgn) * v_t;
    let scale = svd.singular_values.dot(&sgn) / var_s;
    let translation = mu_d - rotation * mu_s * scale;
    Ok(Sim3Transform {
        scale,
        rotation,
        translation,
    })
}

/// Median with the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Named scalar results with string metadata, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub values: Vec<(String, f64)>,
    pub metadata: Vec<(String, String)>,
}

impl MetricsReport {
    pub fn push(&mut self, name: &str, value: f64) {
        self.values.push((name.to_string(), value));
    }

    pub fn meta(&mut self, key: &str, value: impl Into<String>) {
        self.metadata.push((key.to_string(), value.into()));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|(_, v)| v.is_finite())
    }

    /// `metric,value` rows after a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (n, v) in &self.values {
            s.push_str(&format!("{n},{v}\n"));
        }
        s
    }
}
