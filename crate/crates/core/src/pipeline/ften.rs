//! FTEN: a minimal dense-tensor container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "FTEN"
//! 4       4           version, u32 little-endian (currently 1)
//! 8       4           rank r, u32 little-endian
//! 12      4 * r       dims, u32 little-endian each
//! 12+4r   8 * prod    payload, f64 little-endian, row-major
//! ```
//!
//! Feature tensors are stored as `H x W x F` (one frame) or
//! `N x H x W x F` (a stack of frames); label maps as `H x W` or
//! `N x H x W` with integral values.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::toymodel::FeatureTensor;

pub const MAGIC: &[u8; 4] = b"FTEN";
pub const VERSION: u32 = 1;

pub fn encode(tensor: &ArrayD<f64>) -> Result<Vec<u8>> {
    let rank = u32::try_from(tensor.ndim()).map_err(|_| Error::DimensionOverflow)?;
    let mut out = Vec::with_capacity(12 + 4 * tensor.ndim() + 8 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rank.to_le_bytes());
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| Error::DimensionOverflow)?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in tensor.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let chunk = bytes.get(at..at + 4).ok_or(Error::TruncatedFile {
        expected: at as u64 + 4,
        actual: bytes.len() as u64,
    })?;
    Ok(u32::from_le_bytes(chunk.try_into().expect("4 bytes")))
}

pub fn decode(bytes: &[u8]) -> Result<ArrayD<f64>> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile {
            expected: 4,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let rank = read_u32(bytes, 8)? as u64;
    let header = 12 + 4 * rank;
    if (bytes.len() as u64) < header {
        return Err(Error::TruncatedFile {
            expected: header,
            actual: bytes.len() as u64,
        });
    }
    let dims: Vec<usize> = (0..rank as usize)
        .map(|i| read_u32(bytes, 12 + 4 * i).map(|d| d as usize))
        .collect::<Result<_>>()?;

    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or(Error::DimensionOverflow)?;
    let total = count
        .checked_mul(8)
        .and_then(|p| p.checked_add(header))
        .ok_or(Error::DimensionOverflow)?;
    if usize::try_from(count).is_err() {
        return Err(Error::DimensionOverflow);
    }
    let actual = bytes.len() as u64;
    if actual < total {
        return Err(Error::TruncatedFile {
            expected: total,
            actual,
        });
    }
    if actual > total {
        return Err(Error::TrailingData(actual - total));
    }

    let data: Vec<f64> = bytes[header as usize..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(ArrayD::from_shape_vec(IxDyn(&dims), data).expect("payload length checked"))
}

pub fn write_tensor(tensor: &ArrayD<f64>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(tensor)?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ArrayD<f64>> {
    decode(&std::fs::read(path)?)
}

/// Stores the `H x W x F` logits of a feature tensor.
pub fn store_features(ft: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(&ft.features.clone().into_dyn(), path)
}

/// Loads `H x W x F` logits and rebuilds probabilities and predictions.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let t = read_tensor(path)?;
    if t.ndim() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "feature tensor must have rank 3 (H x W x F), got rank {}",
            t.ndim()
        )));
    }
    let features = t.into_dimensionality().expect("rank checked");
    FeatureTensor::from_features(features)
}
