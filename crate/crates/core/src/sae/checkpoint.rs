//! `SAECKPT1` checkpoints.
//!
//! ```text
//! magic      8 bytes  "SAECKPT1"
//! d, l, k    u32 each
//! tied       u8
//! enc_weight l*d f32  (l x d row-major)
//! enc_bias   l f32
//! dec_bias   d f32
//! dec_weight d*l f32  (d x l row-major), only when untied
//! ```
//!
//! Parameters are held in `f64` while training and stored as `f32`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::first_non_finite;
use crate::store::check_magic;

use super::params::SaeParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAECKPT1";
const HEADER_LEN: usize = 8 + 4 * 3 + 1;

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn checkpoint_bytes(params: &SaeParams) -> Vec<u8> {
    let (d, l) = (params.d(), params.l());
    let floats = l * d + l + d + if params.tied() { 0 } else { d * l };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * floats);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(l as u32).to_le_bytes());
    out.extend_from_slice(&(params.k() as u32).to_le_bytes());
    out.push(u8::from(params.tied()));
    put_f32s(&mut out, params.enc_weight());
    put_f32s(&mut out, params.enc_bias());
    put_f32s(&mut out, params.dec_bias());
    if !params.tied() {
        put_f32s(&mut out, &params.dec_weight());
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<SaeParams> {
    check_magic(bytes, CHECKPOINT_MAGIC, path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (d, l, k) = (word(8), word(12), word(16));
    let tied = match bytes[20] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::InvalidArgument(format!(
                "{}: tied flag must be 0 or 1, found {other}",
                path.display()
            )))
        }
    };
    let floats = (l as u64 * d as u64) * if tied { 1 } else { 2 } + l as u64 + d as u64;
    let expected = HEADER_LEN as u64 + 4 * floats;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            actual: actual - expected,
        });
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(index) = first_non_finite(&values) {
        return Err(Error::NonFinite {
            what: format!("{} parameters", path.display()),
            index,
        });
    }
    let mut it = values.into_iter().map(f64::from);
    let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
    let enc_weight = take(l * d);
    let enc_bias = take(l);
    let dec_bias = take(d);
    let dec_weight = (!tied).then(|| take(d * l));
    SaeParams::from_parts(d, l, k, enc_weight, enc_bias, dec_bias, dec_weight)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &SaeParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SaeParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}
