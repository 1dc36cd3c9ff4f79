//! Deterministic synthetic dynamic scenes.
//!
//! A scene is a set of static world points, a set of dynamic point tracks
//! (one world position per frame) and one world-to-camera pose per frame.
//! [`render_correspondences`] runs the rigid and dynamic reprojection models
//! forward between two frames and adds optional pixel noise.
//!
//! Random streams (see [`crate::rng`]):
//! - static point `i`: `(seed, StaticPoint, [i])`
//! - dynamic point `j`: `(seed, DynamicPoint, [j])` for the start position,
//!   and `(seed, Motion, [j])` for its direction (`[u64::MAX]` when coherent)
//! - pixel noise: `(render_seed, PixelNoise, [frame_r, frame_t, point_id])`

pub mod dump;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    dynamic_reproject, rigid_reproject, CameraIntrinsics, DynamicDisplacement, GeometryError,
    PixelHomogeneous, PoseSE3,
};
use crate::rng::{stream, Domain};

/// Points closer than this to a camera plane are rejected during sampling.
pub const MIN_POINT_DEPTH: f64 = 0.05;
/// Consecutive rejections tolerated before a configuration is declared infeasible.
pub const MAX_REJECTIONS: usize = 1000;
/// Minimum number of correspondences an observation must keep.
pub const MIN_CORRESPONDENCES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("infeasible config: {0}")]
    InfeasibleConfig(String),
    #[error("frame index {index} out of range (n_frames = {n_frames})")]
    FrameOutOfRange { index: usize, n_frames: usize },
    #[error("reference and target frame are both {0}")]
    SameFrame(usize),
    #[error("only {0} correspondences survived visibility checks")]
    EmptyObservation(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    /// `p_f = p_0 + f · motion_scale · dir`
    ConstantVelocity,
    /// `p_f = p_0 + A sin(2π f / period) · dir` with peak speed `motion_scale`.
    Sinusoidal,
}

/// Camera path; every camera looks at the volume center unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CameraPath {
    /// Circle around the vertical axis through the volume center.
    Orbit {
        radius: f64,
        height: f64,
        start_deg: f64,
        step_deg: f64,
    },
    /// Straight line with fixed orientation (aimed at the center from `start`).
    Line { start: [f64; 3], step: [f64; 3] },
    /// Orbit segment that also rises by `rise` per frame.
    Arc {
        radius: f64,
        height: f64,
        start_deg: f64,
        step_deg: f64,
        rise: f64,
    },
}

impl Default for CameraPath {
    fn default() -> Self {
        CameraPath::Orbit {
            radius: 6.0,
            height: 0.5,
            start_deg: 0.0,
            step_deg: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_static: usize,
    pub n_dynamic: usize,
    pub volume_min: [f64; 3],
    pub volume_max: [f64; 3],
    pub motion_model: MotionModel,
    /// Scene units per frame.
    pub motion_scale: f64,
    /// Period in frames of the sinusoidal model.
    pub motion_period: f64,
    /// All dynamic points share one motion direction (a rigidly moving object).
    pub coherent_motion: bool,
    pub trajectory: CameraPath,
    pub n_frames: usize,
    pub intrinsics: CameraIntrinsics,
    /// `(W, H)` in pixels.
    pub image_size: [u32; 2],
    pub noise_px: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_static: 140,
            n_dynamic: 60,
            volume_min: [-1.0, -1.0, -1.0],
            volume_max: [1.0, 1.0, 1.0],
            motion_model: MotionModel::ConstantVelocity,
            motion_scale: 0.02,
            motion_period: 8.0,
            coherent_motion: true,
            trajectory: CameraPath::default(),
            n_frames: 5,
            intrinsics: CameraIntrinsics::default(),
            image_size: [640, 480],
            noise_px: 0.0,
            seed: 42,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidConfig(m));
        if self.n_static + self.n_dynamic < MIN_CORRESPONDENCES {
            return bad(format!(
                "n_static + n_dynamic = {} < {MIN_CORRESPONDENCES}",
                self.n_static + self.n_dynamic
            ));
        }
        if self.n_frames < 2 {
            return bad(format!("n_frames = {} < 2", self.n_frames));
        }
        if !(self.noise_px >= 0.0) {
            return bad(format!("noise_px = {} must be >= 0", self.noise_px));
        }
        if !(self.motion_scale >= 0.0) {
            return bad(format!("motion_scale = {} must be >= 0", self.motion_scale));
        }
        if self.motion_model == MotionModel::Sinusoidal && !(self.motion_period > 0.0) {
            return bad(format!("motion_period = {} must be > 0", self.motion_period));
        }
        for a in 0..3 {
            if !(self.volume_min[a] < self.volume_max[a]) {
                return bad(format!("empty volume along axis {a}"));
            }
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("image_size must be positive".into());
        }
        self.intrinsics.validate()?;
        Ok(())
    }

    pub fn volume_center(&self) -> Vector3<f64> {
        (Vector3::from(self.volume_min) + Vector3::from(self.volume_max)) * 0.5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub static_points: Vec<Vector3<f64>>,
    /// `dynamic_tracks[j][f]` is the world position of dynamic point `j` at frame `f`.
    pub dynamic_tracks: Vec<Vec<Vector3<f64>>>,
    /// World-to-camera pose per frame.
    pub camera_poses: Vec<PoseSE3>,
    pub intrinsics: CameraIntrinsics,
    pub image_size: [u32; 2],
}

impl SyntheticScene {
    pub fn n_frames(&self) -> usize {
        self.camera_poses.len()
    }

    /// Ground-truth `t <- r` pose.
    pub fn relative_pose(&self, frame_r: usize, frame_t: usize) -> PoseSE3 {
        self.camera_poses[frame_t].compose(&self.camera_poses[frame_r].inverse())
    }

    /// Camera-to-world poses, the convention used by trajectory files.
    pub fn camera_to_world(&self) -> Vec<PoseSE3> {
        self.camera_poses.iter().map(PoseSE3::inverse).collect()
    }

    fn world_point(&self, id: usize, frame: usize) -> Vector3<f64> {
        let ns = self.static_points.len();
        if id < ns {
            self.static_points[id]
        } else {
            self.dynamic_tracks[id - ns][frame]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x_r: PixelHomogeneous,
    pub x_t: PixelHomogeneous,
    /// Reference-frame depth of the point.
    pub depth_r: f64,
    pub is_dynamic: bool,
    /// Target-camera-frame displacement; zero for static points.
    pub displacement: DynamicDisplacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_r: usize,
    pub frame_t: usize,
    pub correspondences: Vec<Correspondence>,
    pub relative_pose: PoseSE3,
}

impl FrameObservation {
    /// Staticness weights from the ground-truth labels (1 static, 0 dynamic).
    pub fn ground_truth_weights(&self) -> Vec<f64> {
        self.correspondences
            .iter()
            .map(|c| if c.is_dynamic { 0.0 } else { 1.0 })
            .collect()
    }
}

/// World-to-camera pose of a camera at `center` looking at `target`.
///
/// Camera axes follow the x-right, y-down, z-forward convention with world
/// `-y` as the down hint.
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> PoseSE3 {
    let z = (target - center).normalize();
    let down = Vector3::new(0.0, -1.0, 0.0);
    let mut x = down.cross(&z);
    if x.norm() < 1e-9 {
        x = Vector3::new(0.0, 0.0, 1.0).cross(&z);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    PoseSE3 {
        rotation: r,
        translation: -(r * center),
    }
}

fn camera_poses(config: &SceneConfig) -> Vec<PoseSE3> {
    let c = config.volume_center();
    (0..config.n_frames)
        .map(|f| {
            let f = f as f64;
            match config.trajectory {
                CameraPath::Orbit {
                    radius,
                    height,
                    start_deg,
                    step_deg,
                } => {
                    let th = (start_deg + f * step_deg).to_radians();
                    let center = c + Vector3::new(radius * th.sin(), height, -radius * th.cos());
                    look_at(&center, &c)
                }
                CameraPath::Arc {
                    radius,
                    height,
                    start_deg,
                    step_deg,
                    rise,
                } => {
                    let th = (start_deg + f * step_deg).to_radians();
                    let center =
                        c + Vector3::new(radius * th.sin(), height + rise * f, -radius * th.cos());
                    look_at(&center, &c)
                }
                CameraPath::Line { start, step } => {
                    let start = Vector3::from(start);
                    let base = look_at(&start, &c);
                    let center = start + Vector3::from(step) * f;
                    PoseSE3 {
                        rotation: base.rotation,
                        translation: -(base.rotation * center),
                    }
                }
            }
        })
        .collect()
}

fn in_front_of_all(poses: &[PoseSE3], p: &Vector3<f64>) -> bool {
    poses.iter().all(|c| c.transform_point(p).z > MIN_POINT_DEPTH)
}

fn sample_in_volume<R: Rng>(rng: &mut R, lo: &[f64; 3], hi: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(lo[0]..hi[0]),
        rng.random_range(lo[1]..hi[1]),
        rng.random_range(lo[2]..hi[2]),
    )
}

fn unit_direction<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::from(UnitSphere.sample(rng))
}

fn track(config: &SceneConfig, start: &Vector3<f64>, dir: &Vector3<f64>) -> Vec<Vector3<f64>> {
    (0..config.n_frames)
        .map(|f| {
            let f = f as f64;
            let offset = match config.motion_model {
                MotionModel::ConstantVelocity => f * config.motion_scale,
                MotionModel::Sinusoidal => {
                    let w = std::f64::consts::TAU / config.motion_period;
                    (config.motion_scale / w) * (w * f).sin()
                }
            };
            start + dir * offset
        })
        .collect()
}

/// Builds a scene. Deterministic in `config` (including `config.seed`).
pub fn generate_scene(config: &SceneConfig) -> Result<SyntheticScene, SceneError> {
    config.validate()?;
    let poses = camera_poses(config);
    let seed = config.seed;

    let mut static_points = Vec::with_capacity(config.n_static);
    for i in 0..config.n_static {
        let mut rng = stream(seed, Domain::StaticPoint, &[i as u64]);
        let mut failures = 0;
        loop {
            let p = sample_in_volume(&mut rng, &config.volume_min, &config.volume_max);
            if in_front_of_all(&poses, &p) {
                static_points.push(p);
                break;
            }
            failures += 1;
            if failures >= MAX_REJECTIONS {
                return Err(SceneError::InfeasibleConfig(format!(
                    "static point {i}: {MAX_REJECTIONS} consecutive samples behind a camera"
                )));
            }
        }
    }

    let coherent_dir = unit_direction(&mut stream(seed, Domain::Motion, &[u64::MAX]));
    let mut dynamic_tracks = Vec::with_capacity(config.n_dynamic);
    for j in 0..config.n_dynamic {
        let dir = if config.coherent_motion {
            coherent_dir
        } else {
            unit_direction(&mut stream(seed, Domain::Motion, &[j as u64]))
        };
        let mut rng = stream(seed, Domain::DynamicPoint, &[j as u64]);
        let mut failures = 0;
        loop {
            let p0 = sample_in_volume(&mut rng, &config.volume_min, &config.volume_max);
            let t = track(config, &p0, &dir);
            if t.iter().all(|p| in_front_of_all(&poses, p)) {
                dynamic_tracks.push(t);
                break;
            }
            failures += 1;
            if failures >= MAX_REJECTIONS {
                return Err(SceneError::InfeasibleConfig(format!(
                    "dynamic point {j}: {MAX_REJECTIONS} consecutive tracks behind a camera"
                )));
            }
        }
    }

    Ok(SyntheticScene {
        static_points,
        dynamic_tracks,
        camera_poses: poses,
        intrinsics: config.intrinsics,
        image_size: config.image_size,
    })
}

fn inside(p: &PixelHomogeneous, size: [u32; 2]) -> bool {
    p.u() >= 0.0 && p.v() >= 0.0 && p.u() < size[0] as f64 && p.v() < size[1] as f64
}

/// Renders the correspondences between `frame_r` and `frame_t`.
///
/// Static points go through the rigid model and dynamic points through the
/// dynamic model with `m = R_t (P_t - P_r)`, the world motion rotated into
/// the target camera. Pixel noise (σ = `noise_px`) is added to both pixels
/// after projection; points outside either image or behind either camera are
/// dropped.
pub fn render_correspondences(
    scene: &SyntheticScene,
    frame_r: usize,
    frame_t: usize,
    noise_px: f64,
    seed: u64,
) -> Result<FrameObservation, SceneError> {
    let n_frames = scene.n_frames();
    for index in [frame_r, frame_t] {
        if index >= n_frames {
            return Err(SceneError::FrameOutOfRange { index, n_frames });
        }
    }
    if frame_r == frame_t {
        return Err(SceneError::SameFrame(frame_r));
    }
    if !(noise_px >= 0.0) {
        return Err(SceneError::InvalidConfig(format!("noise_px = {noise_px}")));
    }
    let k = &scene.intrinsics;
    let cam_r = &scene.camera_poses[frame_r];
    let cam_t = &scene.camera_poses[frame_t];
    let rel = scene.relative_pose(frame_r, frame_t);
    let n_static = scene.static_points.len();
    let n_total = n_static + scene.dynamic_tracks.len();

    let mut correspondences = Vec::new();
    for id in 0..n_total {
        let is_dynamic = id >= n_static;
        let p_r = scene.world_point(id, frame_r);
        let x_cam = cam_r.transform_point(&p_r);
        if x_cam.z <= 0.0 {
            continue;
        }
        let x_r = k.project(&x_cam).normalized();
        let depth_r = x_cam.z;
        let displacement = if is_dynamic {
            let p_t = scene.world_point(id, frame_t);
            DynamicDisplacement(cam_t.rotation * (p_t - p_r))
        } else {
            DynamicDisplacement::zero()
        };
        let projected = if is_dynamic {
            dynamic_reproject(&x_r, depth_r, k, &rel, &displacement)
        } else {
            rigid_reproject(&x_r, depth_r, k, &rel)
        };
        let x_t = match projected {
            Ok(p) => p.normalized(),
            Err(GeometryError::BehindCamera(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let (x_r, x_t) = if noise_px > 0.0 {
            let mut rng = stream(
                seed,
                Domain::PixelNoise,
                &[frame_r as u64, frame_t as u64, id as u64],
            );
            let mut n = || -> f64 {
                let z: f64 = StandardNormal.sample(&mut rng);
                noise_px * z
            };
            let a = PixelHomogeneous::from_image(x_r.u() + n(), x_r.v() + n());
            let b = PixelHomogeneous::from_image(x_t.u() + n(), x_t.v() + n());
            (a, b)
        } else {
            (x_r, x_t)
        };
        if !inside(&x_r, scene.image_size) || !inside(&x_t, scene.image_size) {
            continue;
        }
        correspondences.push(Correspondence {
            x_r,
            x_t,
            depth_r,
            is_dynamic,
            displacement,
        });
    }
    if correspondences.len() < MIN_CORRESPONDENCES {
        return Err(SceneError::EmptyObservation(correspondences.len()));
    }
    Ok(FrameObservation {
        frame_r,
        frame_t,
        correspondences,
        relative_pose: rel,
    })
}

/// Fraction of dynamic correspondences.
pub fn dynamic_ratio(observation: &FrameObservation) -> f64 {
    let n = observation.correspondences.len();
    if n == 0 {
        return 0.0;
    }
    let d = observation
        .correspondences
        .iter()
        .filter(|c| c.is_dynamic)
        .count();
    d as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        epipolar_residual, epipolar_residual_approx, essential_from_pose, rotation_deviation,
    };

    fn config() -> SceneConfig {
        SceneConfig {
            n_static: 60,
            n_dynamic: 40,
            ..Default::default()
        }
    }

    #[test]
    fn no_dynamics_means_constant_tracks() {
        let cfg = SceneConfig {
            n_dynamic: 0,
            ..config()
        };
        let s = generate_scene(&cfg).unwrap();
        assert!(s.dynamic_tracks.is_empty());
        let obs = render_correspondences(&s, 0, 1, 0.0, 1).unwrap();
        assert!(obs.correspondences.iter().all(|c| !c.is_dynamic && c.displacement.is_zero()));
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&config()).unwrap();
        let b = generate_scene(&config()).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneConfig {
            seed: 7,
            ..config()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constant_velocity_steps_are_constant() {
        let cfg = SceneConfig {
            motion_scale: 0.05,
            coherent_motion: false,
            ..config()
        };
        let s = generate_scene(&cfg).unwrap();
        for t in &s.dynamic_tracks {
            assert_eq!(t.len(), cfg.n_frames);
            let d0 = t[1] - t[0];
            assert!((d0.norm() - 0.05).abs() < 1e-12);
            for f in 1..t.len() - 1 {
                assert!(((t[f + 1] - t[f]) - d0).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn sinusoidal_tracks_oscillate() {
        let cfg = SceneConfig {
            motion_model: MotionModel::Sinusoidal,
            motion_period: 4.0,
            n_frames: 5,
            ..config()
        };
        let s = generate_scene(&cfg).unwrap();
        for t in &s.dynamic_tracks {
            // Full period: back at the start.
            assert!((t[4] - t[0]).norm() < 1e-12);
            assert!((t[1] - t[0]).norm() > 0.0);
        }
    }

    #[test]
    fn camera_poses_are_rotations_and_see_the_volume() {
        for path in [
            CameraPath::default(),
            CameraPath::Line {
                start: [-0.5, 0.3, -6.0],
                step: [0.2, 0.0, 0.0],
            },
            CameraPath::Arc {
                radius: 6.0,
                height: 0.0,
                start_deg: 10.0,
                step_deg: 3.0,
                rise: 0.1,
            },
        ] {
            let cfg = SceneConfig {
                trajectory: path,
                ..config()
            };
            let s = generate_scene(&cfg).unwrap();
            for p in &s.camera_poses {
                assert!(rotation_deviation(&p.rotation) < 1e-10);
            }
            for f in 1..cfg.n_frames {
                assert!(render_correspondences(&s, 0, f, 0.0, 3).is_ok());
            }
        }
    }

    #[test]
    fn static_correspondences_satisfy_epipolar_constraint() {
        let s = generate_scene(&config()).unwrap();
        let obs = render_correspondences(&s, 0, 3, 0.0, 9).unwrap();
        let e = essential_from_pose(&obs.relative_pose).unwrap();
        for c in obs.correspondences.iter().filter(|c| !c.is_dynamic) {
            assert!(epipolar_residual(&c.x_r, &c.x_t, &s.intrinsics, &e).abs() < 1e-10);
            let back = rigid_reproject(&c.x_r, c.depth_r, &s.intrinsics, &obs.relative_pose)
                .unwrap()
                .normalized();
            assert!((back.0 - c.x_t.0).abs().max() < 1e-10);
        }
    }

    #[test]
    fn dynamic_correspondences_follow_first_order_model() {
        let cfg = SceneConfig {
            motion_scale: 0.01,
            coherent_motion: false,
            ..config()
        };
        let s = generate_scene(&cfg).unwrap();
        let obs = render_correspondences(&s, 0, 1, 0.0, 9).unwrap();
        let e = essential_from_pose(&obs.relative_pose).unwrap();
        let mut checked = 0;
        for c in obs.correspondences.iter().filter(|c| c.is_dynamic) {
            let exact = epipolar_residual(&c.x_r, &c.x_t, &s.intrinsics, &e);
            let approx = epipolar_residual_approx(
                &c.x_r,
                c.depth_r,
                &c.displacement,
                &s.intrinsics,
                &obs.relative_pose,
            )
            .unwrap();
            if exact.abs() > 1e-9 {
                assert!(((exact - approx) / exact).abs() < 0.1);
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn same_frame_rejected() {
        let s = generate_scene(&config()).unwrap();
        assert_eq!(
            render_correspondences(&s, 2, 2, 0.0, 0),
            Err(SceneError::SameFrame(2))
        );
        assert!(matches!(
            render_correspondences(&s, 0, 99, 0.0, 0),
            Err(SceneError::FrameOutOfRange { .. })
        ));
    }

    #[test]
    fn too_few_points_rejected() {
        let cfg = SceneConfig {
            n_static: 4,
            n_dynamic: 3,
            ..config()
        };
        assert!(matches!(
            generate_scene(&cfg),
            Err(SceneError::InvalidConfig(_))
        ));
    }

    #[test]
    fn camera_inside_volume_is_infeasible() {
        let cfg = SceneConfig {
            volume_min: [-10.0, -10.0, -10.0],
            volume_max: [10.0, 10.0, 10.0],
            trajectory: CameraPath::Orbit {
                radius: 0.5,
                height: 0.0,
                start_deg: 0.0,
                step_deg: 90.0,
            },
            ..config()
        };
        assert!(matches!(
            generate_scene(&cfg),
            Err(SceneError::InfeasibleConfig(_))
        ));
    }

    #[test]
    fn noisy_points_stay_inside_image() {
        let s = generate_scene(&config()).unwrap();
        let obs = render_correspondences(&s, 0, 2, 2.0, 5).unwrap();
        for c in &obs.correspondences {
            assert!(inside(&c.x_r, s.image_size) && inside(&c.x_t, s.image_size));
            assert!(c.depth_r > 0.0);
        }
        assert_eq!(obs, render_correspondences(&s, 0, 2, 2.0, 5).unwrap());
        assert_ne!(obs, render_correspondences(&s, 0, 2, 2.0, 6).unwrap());
    }

    #[test]
    fn ratio_counts_dynamic_points() {
        let s = generate_scene(&config()).unwrap();
        let mut obs = render_correspondences(&s, 0, 1, 0.0, 0).unwrap();
        obs.correspondences.truncate(10);
        for (i, c) in obs.correspondences.iter_mut().enumerate() {
            c.is_dynamic = i < 3;
        }
        assert!((dynamic_ratio(&obs) - 0.3).abs() < 1e-15);
        for c in obs.correspondences.iter_mut() {
            c.is_dynamic = false;
        }
        assert_eq!(dynamic_ratio(&obs), 0.0);
        for c in obs.correspondences.iter_mut() {
            c.is_dynamic = true;
        }
        assert_eq!(dynamic_ratio(&obs), 1.0);
    }
}
