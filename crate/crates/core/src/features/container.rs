//! Binary feature container:
//!
//! ```text
//! magic     4 bytes  "MSFT"
//! kind      u32 LE   0 cqt, 1 chroma, 2 pitch, 3 stacked
//! frames    u32 LE
//! dim       u32 LE
//! frame_rate f64 LE
//! data      frames * dim f32 LE, row-major
//! ```

use std::path::Path;

use ndarray::Array2;

use super::{FeatureKind, FeatureSequence, FeaturesError};

const MAGIC: &[u8; 4] = b"MSFT";
const HEADER: usize = 24;

pub fn encode_features(seq: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * seq.frames.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&seq.kind.code().to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    out.extend_from_slice(&seq.frame_rate.to_le_bytes());
    for v in seq.frames.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSequence, FeaturesError> {
    let bad = |m: &str| FeaturesError::Container(m.to_string());
    if bytes.len() < HEADER {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let kind = FeatureKind::from_code(u32_at(4)).ok_or_else(|| bad("unknown kind"))?;
    let (frames, dim) = (u32_at(8) as usize, u32_at(12) as usize);
    let frame_rate = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() - HEADER != expected {
        return Err(bad("payload length does not match header"));
    }
    let data: Vec<f32> = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let frames = Array2::from_shape_vec((frames, dim), data).map_err(|e| bad(&e.to_string()))?;
    Ok(FeatureSequence::new(kind, frame_rate, frames))
}

pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<(), FeaturesError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, encode_features(seq))?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureSequence, FeaturesError> {
    decode_features(&std::fs::read(path)?)
}
