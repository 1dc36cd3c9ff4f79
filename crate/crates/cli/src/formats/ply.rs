//! ASCII PLY point clouds. Only the `x y z` vertex properties are read.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::read_text;
use crate::error::{CliError, Result};

struct Element {
    name: String,
    count: usize,
    n_props: usize,
    /// Column of x, y, z for the vertex element.
    xyz: [Option<usize>; 3],
    has_list: bool,
}

pub fn parse(text: &str, path: &Path) -> Result<Vec<Vector3<f64>>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(CliError::parse(path, 1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        let (no, line) = lines.next().ok_or_else(|| CliError::parse(path, 0, "header without end_header"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => return Err(CliError::parse(path, no, format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| CliError::parse(path, no, format!("bad element count {count:?}")))?,
                n_props: 0,
                xyz: [None; 3],
                has_list: false,
            }),
            ["property", "list", ..] => {
                let e = elements.last_mut().ok_or_else(|| CliError::parse(path, no, "property before element"))?;
                e.has_list = true;
                e.n_props += 1;
            }
            ["property", _ty, name] => {
                let e = elements.last_mut().ok_or_else(|| CliError::parse(path, no, "property before element"))?;
                if let Some(k) = ["x", "y", "z"].iter().position(|a| a == name) {
                    e.xyz[k] = Some(e.n_props);
                }
                e.n_props += 1;
            }
            _ => return Err(CliError::parse(path, no, format!("unrecognised header line {line:?}"))),
        }
    }
    if !saw_format {
        return Err(CliError::parse(path, 1, "missing format line"));
    }
    let mut points = None;
    for e in &elements {
        let is_vertex = e.name == "vertex";
        if is_vertex && e.has_list {
            return Err(CliError::parse(path, 0, "list property on vertex element"));
        }
        let cols = if is_vertex {
            let [Some(x), Some(y), Some(z)] = e.xyz else {
                return Err(CliError::parse(path, 0, "vertex element lacks x, y or z"));
            };
            Some([x, y, z])
        } else {
            None
        };
        let mut pts = Vec::with_capacity(if is_vertex { e.count } else { 0 });
        for _ in 0..e.count {
            let (no, line) = lines
                .next()
                .ok_or_else(|| CliError::parse(path, 0, format!("file ends inside element {}", e.name)))?;
            if let Some(cols) = cols {
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != e.n_props {
                    return Err(CliError::parse(
                        path,
                        no,
                        format!("expected {} values, found {}", e.n_props, toks.len()),
                    ));
                }
                let mut v = [0.0; 3];
                for (k, &c) in cols.iter().enumerate() {
                    v[k] = toks[c]
                        .parse()
                        .map_err(|_| CliError::parse(path, no, format!("bad number {:?}", toks[c])))?;
                }
                pts.push(Vector3::from(v));
            }
        }
        if is_vertex {
            points = Some(pts);
        }
    }
    points.ok_or_else(|| CliError::parse(path, 0, "no vertex element"))
}

pub fn read(path: &Path) -> Result<Vec<Vector3<f64>>> {
    parse(&read_text(path)?, path)
}

pub fn format(points: &[Vector3<f64>]) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    );
    for p in points {
        writeln!(s, "{} {} {}", p.x, p.y, p.z).expect("write to String");
    }
    s
}
