//! Grayscale Portable Float Map. The sign of the scale line gives the byte
//! order (negative is little-endian) and rows run bottom to top.

use std::fs;
use std::path::Path;

use dyn4d_core::metrics::DepthMap;

use crate::error::{CliError, Result};

/// Splits off one `\n`-terminated header line.
fn header_line<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path, line: usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::parse(path, line, "truncated header"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end])
        .map(str::trim)
        .map_err(|_| CliError::parse(path, line, "header is not text"))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let mut pos = 0;
    match header_line(bytes, &mut pos, path, 1)? {
        "Pf" => {}
        "PF" => return Err(CliError::parse(path, 1, "colour PFM is not a depth map")),
        other => return Err(CliError::parse(path, 1, format!("bad magic {other:?}"))),
    }
    let dims = header_line(bytes, &mut pos, path, 2)?;
    let wh: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| CliError::parse(path, 2, format!("bad dimension {t:?}"))))
        .collect::<Result<_>>()?;
    let [width, height] = wh[..] else {
        return Err(CliError::parse(path, 2, "expected width and height"));
    };
    let scale_text = header_line(bytes, &mut pos, path, 3)?;
    let scale: f64 = scale_text
        .parse()
        .map_err(|_| CliError::parse(path, 3, format!("bad scale {scale_text:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(CliError::parse(path, 3, "scale must be nonzero"));
    }
    let little = scale < 0.0;
    let data = &bytes[pos..];
    let n = width * height;
    if data.len() != 4 * n {
        return Err(CliError::Data(format!(
            "{}: {} data bytes for {width}x{height}",
            path.display(),
            data.len()
        )));
    }
    let mut out = vec![0.0; n];
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("chunk of 4");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (k / width, k % width);
        out[(height - 1 - file_row) * width + col] = f64::from(v);
    }
    DepthMap::new(height, width, out).map_err(|e| CliError::Data(e.to_string()))
}

pub fn read(path: &Path) -> Result<DepthMap> {
    decode(&fs::read(path).map_err(CliError::io(path))?, path)
}

/// Little-endian encoding; values are narrowed to `f32`.
pub fn encode(map: &DepthMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    for row in (0..map.height).rev() {
        for v in &map.data[row * map.width..(row + 1) * map.width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}
