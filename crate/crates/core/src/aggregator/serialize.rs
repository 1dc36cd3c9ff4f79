//! Binary parameter format.
//!
//! ```text
//! b"DAGG"  u32 version (= 1)
//! array: u64 length, then `length` little-endian f64
//! ```
//!
//! Arrays in order: a header `[d, d_low, kernel_size, n_layers, epsilon]`,
//! then for each layer the global `wq wk wv wo` and frame `wq wk wv wo`
//! (each `d*d`, column-major), then the mask head `proj` (`d*d_low`,
//! column-major), `conv_kernel`, `conv_bias`, `out_mix`, `tau_logit`,
//! `alpha_logit`. This is the order of
//! [`AggregatorParams::for_each_group_mut`].

use std::io::{self, Read, Write};

use nalgebra::DMatrix;
use thiserror::Error;

use super::{AggregatorParams, AttentionParams, LayerParams, MaskHeadParams};

pub const MAGIC: &[u8; 4] = b"DAGG";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SerializeError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed parameter file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn write_array<W: Write>(w: &mut W, a: &[f64]) -> io::Result<()> {
    w.write_all(&(a.len() as u64).to_le_bytes())?;
    for v in a {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<R: Read>(r: &mut R) -> Result<Vec<f64>, SerializeError> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8);
    if n > (1 << 32) {
        return Err(SerializeError::Malformed(format!("array length {n}")));
    }
    (0..n)
        .map(|_| {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        })
        .collect()
}

pub fn write_params<W: Write>(w: &mut W, params: &AggregatorParams) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let mh = &params.mask_head;
    write_array(
        w,
        &[
            params.d_model() as f64,
            mh.d_low() as f64,
            mh.kernel_size as f64,
            params.layers.len() as f64,
            mh.epsilon,
        ],
    )?;
    let mut result = Ok(());
    params.clone().for_each_group_mut(|_, g| {
        if result.is_ok() {
            result = write_array(w, g);
        }
    });
    result
}

pub fn read_params<R: Read>(r: &mut R) -> Result<AggregatorParams, SerializeError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SerializeError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(SerializeError::UnsupportedVersion(version));
    }
    let header = read_array(r)?;
    if header.len() != 5 {
        return Err(SerializeError::Malformed(format!("header has {} entries", header.len())));
    }
    let dim = |v: f64, what: &str| -> Result<usize, SerializeError> {
        if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
            Ok(v as usize)
        } else {
            Err(SerializeError::Malformed(format!("{what} = {v}")))
        }
    };
    let d = dim(header[0], "d")?;
    let d_low = dim(header[1], "d_low")?;
    let k = dim(header[2], "kernel_size")?;
    let n_layers = dim(header[3], "n_layers")?;
    let mut params = AggregatorParams {
        layers: vec![
            LayerParams {
                global: AttentionParams::zeros(d),
                frame: AttentionParams::zeros(d),
            };
            n_layers
        ],
        mask_head: MaskHeadParams {
            proj: DMatrix::zeros(d, d_low),
            conv_kernel: vec![0.0; k * k * d_low],
            conv_bias: vec![0.0; d_low],
            out_mix: vec![0.0; d_low],
            tau_logit: 0.0,
            alpha_logit: 0.0,
            kernel_size: k,
            epsilon: header[4],
        },
    };
    let mut err = None;
    params.for_each_group_mut(|name, g| {
        if err.is_some() {
            return;
        }
        match read_array(r) {
            Ok(a) if a.len() == g.len() => g.copy_from_slice(&a),
            Ok(a) => {
                err = Some(SerializeError::Malformed(format!(
                    "{name}: {} values, expected {}",
                    a.len(),
                    g.len()
                )))
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(params)
}
