//! Plain-text dumps of scenes and observations.
//!
//! Correspondence dump, one record per line:
//!
//! ```text
//! frame_r frame_t u_r v_r u_t v_t depth_r is_dynamic mx my mz
//! ```
//!
//! Fields are whitespace separated; `is_dynamic` is `0` or `1`; floats use
//! Rust's shortest round-trip formatting so a dump parses back bit-exactly.
//! Lines starting with `#` are comments.
//!
//! Scene dump records (first token is the record tag):
//!
//! ```text
//! intrinsics fx fy cx cy width height
//! pose f r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz   # world-to-camera
//! static i x y z
//! track j f x y z
//! ```

use std::io::{self, BufRead, Write};

use nalgebra::Vector3;
use thiserror::Error;

use super::{Correspondence, FrameObservation, SyntheticScene};
use crate::geometry::{DynamicDisplacement, PixelHomogeneous};

pub const CORRESPONDENCE_HEADER: &str =
    "# frame_r frame_t u_r v_r u_t v_t depth_r is_dynamic mx my mz";

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One parsed correspondence line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondenceRecord {
    pub frame_r: usize,
    pub frame_t: usize,
    pub correspondence: Correspondence,
}

pub fn write_header<W: Write>(w: &mut W) -> io::Result<()> {
    writeln!(w, "{CORRESPONDENCE_HEADER}")
}

pub fn write_observation<W: Write>(w: &mut W, obs: &FrameObservation) -> io::Result<()> {
    for c in &obs.correspondences {
        let m = &c.displacement.0;
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {} {}",
            obs.frame_r,
            obs.frame_t,
            c.x_r.u(),
            c.x_r.v(),
            c.x_t.u(),
            c.x_t.v(),
            c.depth_r,
            u8::from(c.is_dynamic),
            m.x,
            m.y,
            m.z
        )?;
    }
    Ok(())
}

pub fn read_correspondences<R: BufRead>(r: R) -> Result<Vec<CorrespondenceRecord>, DumpError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let err = |message: String| DumpError::Parse {
            line: lineno,
            message,
        };
        let toks: Vec<&str> = t.split_whitespace().collect();
        if toks.len() != 11 {
            return Err(err(format!("expected 11 fields, found {}", toks.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
        let flt = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let is_dynamic = match toks[7] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("is_dynamic must be 0 or 1, got {other:?}"))),
        };
        let depth_r = flt(toks[6])?;
        if !(depth_r > 0.0) {
            return Err(err(format!("depth_r must be positive, got {depth_r}")));
        }
        let m = Vector3::new(flt(toks[8])?, flt(toks[9])?, flt(toks[10])?);
        if !is_dynamic && m != Vector3::zeros() {
            return Err(err("static correspondence with nonzero displacement".into()));
        }
        out.push(CorrespondenceRecord {
            frame_r: int(toks[0])?,
            frame_t: int(toks[1])?,
            correspondence: Correspondence {
                x_r: PixelHomogeneous::from_image(flt(toks[2])?, flt(toks[3])?),
                x_t: PixelHomogeneous::from_image(flt(toks[4])?, flt(toks[5])?),
                depth_r,
                is_dynamic,
                displacement: DynamicDisplacement(m),
            },
        });
    }
    Ok(out)
}

pub fn write_scene<W: Write>(w: &mut W, scene: &SyntheticScene) -> io::Result<()> {
    let k = &scene.intrinsics;
    writeln!(w, "# dyn4d scene dump")?;
    writeln!(
        w,
        "intrinsics {} {} {} {} {} {}",
        k.fx, k.fy, k.cx, k.cy, scene.image_size[0], scene.image_size[1]
    )?;
    for (f, p) in scene.camera_poses.iter().enumerate() {
        let r = &p.rotation;
        let t = &p.translation;
        writeln!(
            w,
            "pose {f} {} {} {} {} {} {} {} {} {} {} {} {}",
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z
        )?;
    }
    for (i, p) in scene.static_points.iter().enumerate() {
        writeln!(w, "static {i} {} {} {}", p.x, p.y, p.z)?;
    }
    for (j, track) in scene.dynamic_tracks.iter().enumerate() {
        for (f, p) in track.iter().enumerate() {
            writeln!(w, "track {j} {f} {} {} {}", p.x, p.y, p.z)?;
        }
    }
    Ok(())
}
