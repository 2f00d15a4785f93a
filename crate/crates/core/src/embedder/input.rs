//! Assembles the 97-dimensional encoder input from chroma, CQT and f0.
//!
//! Each stream is pooled over windows of `pool` frames. With key
//! normalization on, every segment is transposed so that its estimated key
//! signature becomes that of C major: chroma is rotated, CQT bins shifted
//! down and the f0 track lowered by the same number of semitones.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::features::{pool_frames, FeatureKind, FeatureSequence};

/// Pitch classes of the C major scale, shared by all of its modes.
const DIATONIC: [usize; 7] = [0, 2, 4, 5, 7, 9, 11];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    pub pool: usize,
    pub key_normalize: bool,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            pool: 10,
            key_normalize: true,
        }
    }
}

/// Transposition that brings the key signature to that of C major: the
/// rotation of the diatonic set holding the most chroma energy. Modes of one
/// scale (major, relative minor, dorian, ...) share a signature, so the
/// estimate does not depend on which note the music treats as tonic.
/// Returns 0 for a flat profile.
pub fn key_signature_shift(mean_chroma: &[f64; 12]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for shift in 0..12 {
        let energy: f64 = DIATONIC
            .iter()
            .map(|&d| mean_chroma[(d + shift) % 12])
            .sum();
        if energy > best.1 + 1e-12 {
            best = (shift, energy);
        }
    }
    best.0
}

fn f0_to_feature(f0: f32, shift: usize) -> Option<f32> {
    (f0 > 0.0).then(|| {
        let midi = 69.0 + 12.0 * (f0 as f64 / 440.0).log2() - shift as f64;
        ((midi - 24.0) / 84.0) as f32
    })
}

/// Builds the stacked encoder input from unpooled feature sequences of one
/// segment, estimating the key from the segment itself. Sequences may
/// differ in length by a frame; the shortest wins.
pub fn encoder_input(
    cqt: &FeatureSequence,
    chroma: &FeatureSequence,
    pitch: &FeatureSequence,
    config: &InputConfig,
) -> Result<FeatureSequence, EmbedError> {
    for (seq, kind) in [
        (cqt, FeatureKind::Cqt),
        (chroma, FeatureKind::Chroma),
        (pitch, FeatureKind::Pitch),
    ] {
        if seq.kind != kind {
            return Err(EmbedError::Input(format!(
                "expected {kind} features, got {}",
                seq.kind
            )));
        }
    }
    if chroma.dim() != 12 || pitch.dim() != 1 {
        return Err(EmbedError::Input(
            "chroma must have 12 and pitch 1 columns".into(),
        ));
    }
    let n = cqt.len().min(chroma.len()).min(pitch.len());
    if n == 0 {
        return Err(EmbedError::Input("empty feature sequence".into()));
    }
    let trim = |seq: &FeatureSequence| {
        FeatureSequence::new(
            seq.kind,
            seq.frame_rate,
            seq.frames.slice(s![..n, ..]).to_owned(),
        )
    };
    let pooled_chroma = pool_frames(&trim(chroma), config.pool, config.pool)?;
    let pooled_cqt = pool_frames(&trim(cqt), config.pool, config.pool)?;

    let shift = if !config.key_normalize {
        0
    } else {
        let mean = pooled_chroma
            .frames
            .mean_axis(ndarray::Axis(0))
            .expect("non-empty");
        key_signature_shift(&std::array::from_fn(|i| mean[i] as f64))
    };

    let rows = pooled_chroma.len();
    let bins = cqt.dim();
    let dim = 12 + bins + 1;
    let mut out = Array2::<f32>::zeros((rows, dim));
    for t in 0..rows {
        for i in 0..12 {
            out[[t, i]] = 4.0 * pooled_chroma.frames[[t, (i + shift) % 12]];
        }
        for k in 0..bins {
            let src = k + shift;
            if src < bins {
                out[[t, 12 + k]] = 0.5 * (100.0 * pooled_cqt.frames[[t, src]]).ln_1p();
            }
        }
        let start = t * config.pool;
        let end = (start + config.pool).min(n);
        let voiced: Vec<f32> = (start..end)
            .filter_map(|i| f0_to_feature(pitch.frames[[i, 0]], shift))
            .collect();
        if !voiced.is_empty() {
            out[[t, dim - 1]] = voiced.iter().sum::<f32>() / voiced.len() as f32;
        }
    }
    Ok(FeatureSequence::new(
        FeatureKind::Stacked,
        pooled_chroma.frame_rate,
        out,
    ))
}
