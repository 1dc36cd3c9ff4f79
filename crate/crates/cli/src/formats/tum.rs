//! Trajectory text files: `timestamp tx ty tz qx qy qz qw` per line, camera
//! to world, `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use dyn4d_core::geometry::PoseSE3;
use dyn4d_core::metrics::Trajectory;
use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};

use super::read_text;
use crate::error::{CliError, Result};

pub fn parse(text: &str, path: &Path) -> Result<Trajectory> {
    let mut stamps = Vec::new();
    let mut poses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| CliError::parse(path, lineno, format!("{t:?}: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 8 {
            return Err(CliError::parse(path, lineno, format!("expected 8 fields, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(CliError::parse(path, lineno, "non-finite value"));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if q.norm() < 1e-12 {
            return Err(CliError::parse(path, lineno, "zero quaternion"));
        }
        let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        if let Some(&last) = stamps.last() {
            if !(vals[0] > last) {
                return Err(CliError::parse(path, lineno, format!("timestamp {} not after {last}", vals[0])));
            }
        }
        stamps.push(vals[0]);
        poses.push(PoseSE3 {
            rotation: *rot.matrix(),
            translation: Vector3::new(vals[1], vals[2], vals[3]),
        });
    }
    Trajectory::new(stamps, poses).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read(path: &Path) -> Result<Trajectory> {
    parse(&read_text(path)?, path)
}

pub fn format(traj: &Trajectory) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in traj.timestamps.iter().zip(&traj.poses) {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(p.rotation));
        let c = p.translation;
        writeln!(s, "{t} {} {} {} {} {} {} {}", c.x, c.y, c.z, q.i, q.j, q.k, q.w).expect("write to String");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use dyn4d_core::geometry::rotation_angle_between;

    #[test]
    fn round_trip() {
        let poses: Vec<PoseSE3> = (0..4)
            .map(|i| PoseSE3 {
                rotation: *Rotation3::from_euler_angles(0.1 * i as f64, -0.2, 0.3 * i as f64).matrix(),
                translation: Vector3::new(i as f64, 0.5, -1.0 / 3.0),
            })
            .collect();
        let t = Trajectory::new(vec![0.0, 0.1, 0.2, 0.3], poses).unwrap();
        let back = parse(&format(&t), Path::new("t.txt")).unwrap();
        assert_eq!(back.timestamps, t.timestamps);
        for (a, b) in back.poses.iter().zip(&t.poses) {
            assert_eq!(a.translation, b.translation);
            assert!(rotation_angle_between(&a.rotation, &b.rotation) < 1e-12);
        }
    }

    #[test]
    fn errors_name_the_line() {
        let text = "# header\n0 0 0 0 0 0 0 1\n0.1 0 0 x 0 0 0 1\n";
        let err = parse(text, Path::new("p.txt")).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().starts_with("p.txt:3:"));
        let short = parse("0 1 2 3\n", Path::new("p.txt")).unwrap_err();
        assert!(matches!(short, CliError::Parse { line: 1, .. }));
        let back = parse("1 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n", Path::new("p.txt")).unwrap_err();
        assert!(matches!(back, CliError::Parse { line: 2, .. }));
    }
}
