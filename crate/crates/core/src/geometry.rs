//! Two-view projective geometry for rigid and dynamic scenes.
//!
//! Pixels are homogeneous 3-vectors. Projection helpers return *unnormalized*
//! homogeneous pixels whose third component is the target-frame depth; divide
//! by it (see [`PixelHomogeneous::normalized`]) to obtain image coordinates.
//!
//! Conventions:
//! - A [`PoseSE3`] maps points of a source frame into a destination frame,
//!   `X_dst = R * X_src + t`. The relative pose between a reference and a
//!   target camera is therefore written `t <- r`.
//! - Normalized pixels are `K^{-1} x` with `w = 1`; the essential matrix acts
//!   on normalized pixels only.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest translation norm accepted when building an essential matrix.
pub const MIN_BASELINE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate pose: translation norm {0:e} is too small")]
    DegeneratePose(f64),
    #[error("point lands behind the camera (depth {0:e})")]
    BehindCamera(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with det +1 (deviation {0:e})")]
    InvalidRotation(f64),
    #[error("non-positive depth {0:e}")]
    NonPositiveDepth(f64),
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 800.0,
            fy: 800.0,
            cx: 320.0,
            cy: 240.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "fx={}, fy={}, cx={}, cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form inverse of [`Self::matrix`].
    pub fn inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a camera-frame point to an unnormalized homogeneous pixel.
    pub fn project(&self, point: &Vector3<f64>) -> PixelHomogeneous {
        PixelHomogeneous(self.matrix() * point)
    }

    /// Maps a pixel to the normalized image plane (`w = 1`).
    pub fn normalize(&self, pixel: &PixelHomogeneous) -> Vector3<f64> {
        let p = pixel.normalized();
        self.inverse() * p.0
    }
}

/// Rigid transform `X_dst = R * X_src + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseSE3 {
    /// Tolerance for the orthonormality check in [`Self::new`].
    pub const ROTATION_TOL: f64 = 1e-10;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let dev = rotation_deviation(&rotation);
        if !(dev <= Self::ROTATION_TOL) {
            return Err(GeometryError::InvalidRotation(dev));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Max-abs deviation of `R^T R` from identity plus `|det R - 1|`.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    ortho.max((r.determinant() - 1.0).abs())
}

/// Geodesic angle (radians) between two rotations.
///
/// Uses `atan2` on the axis/trace parts, which stays accurate for angles far
/// below `sqrt(eps)` where `acos` loses all precision.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a.transpose() * b))
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin2 = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    let cos2 = r.trace() - 1.0;
    sin2.atan2(cos2)
}

/// Homogeneous pixel `(u, v, w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHomogeneous(pub Vector3<f64>);

impl PixelHomogeneous {
    pub fn new(u: f64, v: f64, w: f64) -> Self {
        Self(Vector3::new(u, v, w))
    }

    pub fn from_image(u: f64, v: f64) -> Self {
        Self::new(u, v, 1.0)
    }

    pub fn u(&self) -> f64 {
        self.0.x
    }

    pub fn v(&self) -> f64 {
        self.0.y
    }

    pub fn w(&self) -> f64 {
        self.0.z
    }

    /// Divides through by `w`.
    pub fn normalized(&self) -> Self {
        Self(self.0 / self.0.z)
    }
}

/// Object-motion displacement `M_{t<-r}` expressed in the target camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DynamicDisplacement(pub Vector3<f64>);

impl DynamicDisplacement {
    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn is_zero(&self) -> bool {
        self.0 == Vector3::zeros()
    }
}

/// Essential matrix acting on normalized pixels: `x_t^T E x_r = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(pub Matrix3<f64>);

impl EssentialMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn singular_values(&self) -> Vector3<f64> {
        let mut s = self.0.svd(false, false).singular_values;
        s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Projects onto the essential manifold with singular values `(s, s, 0)`,
    /// `s` the mean of the two leading values, then rescales so `s = 1`.
    pub fn enforce_constraints(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut sv: Vec<(f64, usize)> = svd
            .singular_values
            .iter()
            .copied()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        sv.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut diag = Vector3::zeros();
        diag[sv[0].1] = 1.0;
        diag[sv[1].1] = 1.0;
        Self(u * Matrix3::from_diagonal(&diag) * v_t)
    }

    /// Flattened row-major 9-vector.
    pub fn to_vector(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

/// Cross-product matrix: `skew(t) * v == t × v`.
pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// `E = [t]_× R` for the relative pose `t <- r`.
pub fn essential_from_pose(pose: &PoseSE3) -> Result<EssentialMatrix, GeometryError> {
    let n = pose.translation.norm();
    if !(n >= MIN_BASELINE) {
        return Err(GeometryError::DegeneratePose(n));
    }
    Ok(EssentialMatrix(skew(&pose.translation) * pose.rotation))
}

/// Camera-frame point `depth * K^{-1} x`.
///
/// `x` is normalized by its `w` first, so the returned point has `z = depth`.
pub fn backproject(x: &PixelHomogeneous, depth: f64, k: &CameraIntrinsics) -> Vector3<f64> {
    k.normalize(x) * depth
}

/// Rigid reprojection `x_t = K [R D_r K^{-1} x_r + t]`.
///
/// Returns the unnormalized homogeneous target pixel; its `w` is the target
/// depth of the point.
pub fn rigid_reproject(
    x_r: &PixelHomogeneous,
    depth: f64,
    k: &CameraIntrinsics,
    pose: &PoseSE3,
) -> Result<PixelHomogeneous, GeometryError> {
    dynamic_reproject(x_r, depth, k, pose, &DynamicDisplacement::zero())
}

/// Dynamic reprojection: the rigid term plus `K M_{t<-r}`.
pub fn dynamic_reproject(
    x_r: &PixelHomogeneous,
    depth: f64,
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    m: &DynamicDisplacement,
) -> Result<PixelHomogeneous, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    let kmat = k.matrix();
    let rigid = kmat * (pose.rotation * (k.inverse() * x_r.0) * depth + pose.translation);
    let out = if m.is_zero() { rigid } else { rigid + kmat * m.0 };
    if !(out.z > 0.0) {
        return Err(GeometryError::BehindCamera(out.z));
    }
    Ok(PixelHomogeneous(out))
}

/// Epipolar residual `δ = x̃_t^T E x̃_r` on normalized pixels.
pub fn epipolar_residual(
    x_r: &PixelHomogeneous,
    x_t: &PixelHomogeneous,
    k: &CameraIntrinsics,
    e: &EssentialMatrix,
) -> f64 {
    let nr = k.normalize(x_r);
    let nt = k.normalize(x_t);
    nt.dot(&(e.0 * nr))
}

/// Components of the first-order residual model, exposed for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualDecomposition {
    /// Unit normal of the epipolar line in the normalized target plane.
    pub normal: [f64; 2],
    /// First-order image-plane displacement caused by `m`.
    pub image_displacement: [f64; 2],
    /// `‖(ℓ₁, ℓ₂)‖` of the depth-scaled epipolar line `ℓ = E X_r`.
    pub line_gain: f64,
    /// Reference-frame depth `Z_r`.
    pub depth_r: f64,
}

impl ResidualDecomposition {
    /// Displacement component along the line normal.
    pub fn perpendicular(&self) -> f64 {
        self.normal[0] * self.image_displacement[0] + self.normal[1] * self.image_displacement[1]
    }

    /// `(1/Z_r) · nᵀ ΔX_⊥` with `ΔX_⊥` carried in line-gain units.
    pub fn residual(&self) -> f64 {
        self.line_gain * self.perpendicular() / self.depth_r
    }
}

/// First-order model of the epipolar residual induced by a dynamic
/// displacement `m`.
///
/// The epipolar line of `x_r` is built in the normalized target plane, its
/// unit normal `n` is taken from the first two line coefficients, and the
/// image-plane displacement is linearized around the rigid target point
/// `X_t = R D_r K^{-1} x_r + t`:
/// `Δ = (m_x/Z_t - X_t m_z/Z_t², m_y/Z_t - Y_t m_z/Z_t²)`.
/// The projection `nᵀΔ` is scaled by `‖(ℓ₁, ℓ₂)‖ / Z_r` where
/// `ℓ = E X_r = Z_r E x̃_r`, which makes the model agree with
/// [`epipolar_residual`] to first order in `‖m‖`.
pub fn epipolar_residual_approx(
    x_r: &PixelHomogeneous,
    depth_r: f64,
    m: &DynamicDisplacement,
    k: &CameraIntrinsics,
    pose: &PoseSE3,
) -> Result<f64, GeometryError> {
    decompose_residual(x_r, depth_r, m, k, pose).map(|d| d.residual())
}

pub fn decompose_residual(
    x_r: &PixelHomogeneous,
    depth_r: f64,
    m: &DynamicDisplacement,
    k: &CameraIntrinsics,
    pose: &PoseSE3,
) -> Result<ResidualDecomposition, GeometryError> {
    if !(depth_r > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth_r));
    }
    let e = essential_from_pose(pose)?;
    let xr_norm = k.normalize(x_r);
    let line = e.0 * xr_norm;
    let planar = line.x.hypot(line.y);
    if !(planar > 0.0) {
        // x_r sits on the epipole direction; no line is defined.
        return Err(GeometryError::DegeneratePose(planar));
    }
    let normal = [line.x / planar, line.y / planar];

    let x_t = pose.transform_point(&(xr_norm * depth_r));
    if !(x_t.z > 0.0) {
        return Err(GeometryError::BehindCamera(x_t.z));
    }
    let zt = x_t.z;
    let d = &m.0;
    let image_displacement = [
        d.x / zt - x_t.x * d.z / (zt * zt),
        d.y / zt - x_t.y * d.z / (zt * zt),
    ];
    Ok(ResidualDecomposition {
        normal,
        image_displacement,
        line_gain: planar * depth_r,
        depth_r,
    })
}
