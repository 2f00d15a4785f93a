//! Additive synthesis, audio-stage transforms and fixed-window segmentation.

mod synth;
mod transform;
mod wav;

use std::path::PathBuf;

use thiserror::Error;

pub use synth::{
    synthesize, synthesize_with, PartialRecipe, ATTACK_SECONDS, PEAK_LEVEL, RELEASE_SECONDS,
};
pub use transform::{
    apply_audio_transforms, pitch_shift, resample_linear, tempo_change, time_shift, time_stretch,
};
pub use wav::{read_wav, write_wav};

pub const DEFAULT_SAMPLE_RATE: u32 = 22_050;
pub const WINDOW_SECONDS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("time shift of {shift} s exceeds buffer length {length} s")]
    TimeShiftTooLong { shift: f64, length: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Self {
        AudioBuffer {
            sample_rate,
            samples,
        }
    }

    pub fn silence(sample_rate: u32, seconds: f64) -> Self {
        let n = (seconds * sample_rate as f64).round() as usize;
        AudioBuffer::new(sample_rate, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// One fixed-length window of a rendered version.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub track_id: String,
    pub version_id: String,
    pub segment_index: usize,
    pub audio: AudioBuffer,
}

impl AudioSegment {
    /// Relative path `{track}/{version}/segment{index:04}.wav`.
    pub fn relative_path(&self) -> PathBuf {
        segment_path(&self.track_id, &self.version_id, self.segment_index)
    }
}

pub fn segment_path(track_id: &str, version_id: &str, index: usize) -> PathBuf {
    PathBuf::from(track_id)
        .join(version_id)
        .join(format!("segment{index:04}.wav"))
}

/// Cuts a buffer into consecutive windows. A trailing partial window is kept
/// when it is at least half full.
pub fn segment_audio(
    buffer: &AudioBuffer,
    window_seconds: f64,
    track_id: &str,
    version_id: &str,
) -> Vec<AudioSegment> {
    let window = (window_seconds * buffer.sample_rate as f64).round() as usize;
    if window == 0 {
        return Vec::new();
    }
    buffer
        .samples
        .chunks(window)
        .filter(|chunk| 2 * chunk.len() >= window)
        .enumerate()
        .map(|(i, chunk)| AudioSegment {
            track_id: track_id.to_string(),
            version_id: version_id.to_string(),
            segment_index: i,
            audio: AudioBuffer::new(buffer.sample_rate, chunk.to_vec()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seconds(s: f64) -> AudioBuffer {
        let sr = 100;
        let n = (s * sr as f64) as usize;
        AudioBuffer::new(sr, (0..n).map(|i| (i as f32 * 0.01).sin()).collect())
    }

    #[test]
    fn segmentation_boundaries() {
        assert_eq!(segment_audio(&seconds(35.0), 10.0, "t", "v").len(), 4);
        assert_eq!(
            segment_audio(&seconds(35.0), 10.0, "t", "v")[3].audio.len(),
            500
        );
        assert_eq!(segment_audio(&seconds(10.0), 10.0, "t", "v").len(), 1);
        assert_eq!(segment_audio(&seconds(12.0), 10.0, "t", "v").len(), 1);
        assert_eq!(segment_audio(&seconds(4.0), 10.0, "t", "v").len(), 0);
    }

    #[test]
    fn segments_reconstruct_prefix() {
        let buffer = seconds(27.3);
        let segments = segment_audio(&buffer, 10.0, "t", "v");
        let joined: Vec<f32> = segments
            .iter()
            .flat_map(|s| s.audio.samples.clone())
            .collect();
        assert_eq!(&buffer.samples[..joined.len()], &joined[..]);
        assert!(segments
            .iter()
            .enumerate()
            .all(|(i, s)| s.segment_index == i));
    }

    #[test]
    fn segment_naming() {
        let seg = &segment_audio(&seconds(10.0), 10.0, "song01", "v002")[0];
        assert_eq!(
            seg.relative_path(),
            PathBuf::from("song01/v002/segment0000.wav")
        );
    }
}
