//! `PFE1` feature files.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `PFE1`                           |
//! | 4      | 4    | version (`u32`, currently 1)           |
//! | 8      | 4    | layers `L` (`u32`)                     |
//! | 12     | 4    | steps `T` (`u32`)                      |
//! | 16     | 4    | dim `D` (`u32`)                        |
//! | 20     | 4    | axis kind (`u32`, 0 = frame, 1 = phoneme) |
//! | 24     | 4·L·T·D | `f32` payload, layer-major `[l][t][d]` |

use std::path::Path;

use super::{AxisKind, FeatureError, FeatureTensor};

pub const MAGIC: &[u8; 4] = b"PFE1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_features(t: &FeatureTensor) -> Result<Vec<u8>, FeatureError> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data().len());
    out.extend_from_slice(MAGIC);
    for field in [
        VERSION,
        dim_u32(t.layers())?,
        dim_u32(t.steps())?,
        dim_u32(t.dim())?,
        t.axis() as u32,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    for (i, &v) in t.data().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(FeatureError::NonFiniteValue { index: i });
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

fn dim_u32(n: usize) -> Result<u32, FeatureError> {
    u32::try_from(n).map_err(|_| FeatureError::InvalidShape(format!("dimension {n} exceeds u32")))
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureTensor, FeatureError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FeatureError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FeatureError::HeaderShapeMismatch {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let field = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
    };
    let version = field(0);
    if version != VERSION {
        return Err(FeatureError::UnsupportedVersion(version));
    }
    let (layers, steps, dim) = (field(1) as usize, field(2) as usize, field(3) as usize);
    let axis = match field(4) {
        0 => AxisKind::Frame,
        1 => AxisKind::Phoneme,
        other => {
            return Err(FeatureError::InvalidShape(format!("unknown axis kind {other}")));
        }
    };
    let count = layers
        .checked_mul(steps)
        .and_then(|n| n.checked_mul(dim))
        .ok_or_else(|| FeatureError::InvalidShape("L*T*D overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    let expected = count.checked_mul(4).ok_or_else(|| FeatureError::InvalidShape("payload size overflows".into()))?;
    if payload.len() != expected {
        return Err(FeatureError::HeaderShapeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    FeatureTensor::new(layers, steps, dim, axis, data)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureTensor, FeatureError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_features(&bytes)
}

pub fn write_features(t: &FeatureTensor, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let bytes = encode_features(t)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| FeatureError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}
