//! Framed acoustic features: constant-Q magnitudes, chroma, f0 contour.
//!
//! All three extractors centre frame `t` on sample `t * hop` and zero-pad
//! outside the buffer, so a buffer of `n` samples yields `n / hop + 1`
//! frames of each kind and the sequences line up frame for frame.

mod container;
mod cqt;
mod pitch;

use ndarray::{s, Array2, Axis};
use thiserror::Error;

pub use container::{decode_features, encode_features, read_features, write_features};
pub use cqt::{chroma, cqt, cqt_with, CqtKernel, CqtParams};
pub use pitch::{pitch_contour, pitch_contour_with, PitchParams};

#[derive(Debug, Error)]
pub enum FeaturesError {
    #[error("buffer of {got} samples is shorter than the {needed}-sample lowest-bin window")]
    TooShort { needed: usize, got: usize },
    #[error("expected {expected} features, got {got}")]
    WrongKind {
        expected: FeatureKind,
        got: FeatureKind,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("feature container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Cqt,
    Chroma,
    Pitch,
    /// Chroma, log-compressed CQT and log-f0 side by side.
    Stacked,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::Cqt => "cqt",
            FeatureKind::Chroma => "chroma",
            FeatureKind::Pitch => "pitch",
            FeatureKind::Stacked => "stacked",
        }
    }

    pub fn code(&self) -> u32 {
        match self {
            FeatureKind::Cqt => 0,
            FeatureKind::Chroma => 1,
            FeatureKind::Pitch => 2,
            FeatureKind::Stacked => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Cqt),
            1 => Some(FeatureKind::Chroma),
            2 => Some(FeatureKind::Pitch),
            3 => Some(FeatureKind::Stacked),
            _ => None,
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = FeaturesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cqt" => Ok(FeatureKind::Cqt),
            "chroma" => Ok(FeatureKind::Chroma),
            "pitch" => Ok(FeatureKind::Pitch),
            "stacked" => Ok(FeatureKind::Stacked),
            other => Err(FeaturesError::InvalidParameter(format!(
                "unknown feature kind '{other}'"
            ))),
        }
    }
}

/// `frames` is `(n_frames, dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub kind: FeatureKind,
    pub frame_rate: f64,
    pub frames: Array2<f32>,
}

impl FeatureSequence {
    pub fn new(kind: FeatureKind, frame_rate: f64, frames: Array2<f32>) -> Self {
        FeatureSequence {
            kind,
            frame_rate,
            frames,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    fn expect_kind(&self, kind: FeatureKind) -> Result<(), FeaturesError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(FeaturesError::WrongKind {
                expected: kind,
                got: self.kind,
            })
        }
    }
}

/// Window means over `size` frames every `stride` frames. Trailing partial
/// windows average over the frames they actually hold.
pub fn pool_frames(
    seq: &FeatureSequence,
    size: usize,
    stride: usize,
) -> Result<FeatureSequence, FeaturesError> {
    if size == 0 || stride == 0 {
        return Err(FeaturesError::InvalidParameter(
            "pool size and stride must be positive".into(),
        ));
    }
    let n = seq.len();
    let count = n.div_ceil(stride);
    let mut out = Array2::<f32>::zeros((count, seq.dim()));
    for (w, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let start = w * stride;
        let end = (start + size).min(n);
        let block = seq.frames.slice(s![start..end, ..]);
        row.assign(&block.mean_axis(Axis(0)).expect("non-empty window"));
    }
    Ok(FeatureSequence::new(
        seq.kind,
        seq.frame_rate / stride as f64,
        out,
    ))
}
