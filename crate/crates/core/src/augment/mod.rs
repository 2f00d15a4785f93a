//! Melody-preserving variations of a piece, replayable from a seed.
//!
//! [`generate_version`] runs instrument replacement, track removal and the
//! per-track note operations in that order, then samples the parameters the
//! audio stage will apply (pitch shift, time shift, tempo factor).

pub mod ensemble;
pub mod ops;
pub mod rng;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ensemble::{Ensemble, EnsembleTable, Register};
pub use ops::{
    arpeggiate_chords, invert_chords, remove_tracks, remove_tracks_recorded, replace_instruments,
    replace_instruments_recorded, split_notes, ReplacePolicy, Replacement,
};

use crate::midi::MidiPiece;
use crate::midi::TrackRole;
use rng::{pick, stream, uniform, Operation};

pub const NOTE_PROB_RANGE: (f64, f64) = (0.3, 0.85);
pub const MAX_PITCH_SHIFT: i32 = 4;
pub const MAX_TIME_SHIFT: f64 = 3.0;
pub const TEMPO_RANGE: (f64, f64) = (0.9, 1.1);

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("ensemble table: {0}")]
    Table(String),
    #[error("piece has no track with the melody role")]
    MissingMelody,
    #[error("record: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Transformations applied to rendered audio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AudioParams {
    /// Semitones.
    pub pitch_shift: i32,
    /// Seconds; positive delays the audio, negative trims its start.
    pub time_shift: f64,
    pub tempo_factor: f64,
}

impl AudioParams {
    pub const IDENTITY: AudioParams = AudioParams {
        pitch_shift: 0,
        time_shift: 0.0,
        tempo_factor: 1.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl Default for AudioParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Everything sampled while producing one version. Per-track vectors are
/// indexed by the track order of the input piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub seed: u64,
    pub replacements: Vec<Replacement>,
    pub muted: Vec<bool>,
    pub p_note: Vec<f64>,
    pub p_chinv: Vec<f64>,
    pub p_charg: Vec<f64>,
    pub track_removal_p: f64,
    pub pitch_shift: i32,
    pub time_shift: f64,
    pub tempo_factor: f64,
}

impl AugmentationRecord {
    pub fn audio_params(&self) -> AudioParams {
        AudioParams {
            pitch_shift: self.pitch_shift,
            time_shift: self.time_shift,
            tempo_factor: self.tempo_factor,
        }
    }

    pub fn to_json(&self) -> Result<String, AugmentError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, AugmentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), AugmentError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Draws the audio-stage parameters for `seed`.
pub fn sample_audio_params(seed: u64) -> AudioParams {
    let mut rng = stream(seed, None, Operation::AudioParameters);
    let span = (2 * MAX_PITCH_SHIFT + 1) as usize;
    AudioParams {
        pitch_shift: pick(&mut rng, span) as i32 - MAX_PITCH_SHIFT,
        time_shift: uniform(&mut rng, -MAX_TIME_SHIFT, MAX_TIME_SHIFT),
        tempo_factor: uniform(&mut rng, TEMPO_RANGE.0, TEMPO_RANGE.1),
    }
}

/// Produces one augmented version of a role-annotated piece.
pub fn generate_version(
    piece: &MidiPiece,
    seed: u64,
    table: &EnsembleTable,
) -> Result<(MidiPiece, AugmentationRecord), AugmentError> {
    piece.melody_index().ok_or(AugmentError::MissingMelody)?;
    let (replaced, replacements) = replace_instruments_recorded(
        piece,
        table,
        &mut stream(seed, None, Operation::ReplaceInstruments),
    );
    let (mut reduced, removal) =
        remove_tracks_recorded(&replaced, &mut stream(seed, None, Operation::RemoveTracks));

    let n = piece.tracks.len();
    let (mut p_note, mut p_chinv, mut p_charg) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let mut rng = stream(seed, Some(i), Operation::TrackProbabilities);
        p_note.push(uniform(&mut rng, NOTE_PROB_RANGE.0, NOTE_PROB_RANGE.1));
        p_chinv.push(uniform(&mut rng, NOTE_PROB_RANGE.0, NOTE_PROB_RANGE.1));
        p_charg.push(uniform(&mut rng, NOTE_PROB_RANGE.0, NOTE_PROB_RANGE.1));
    }

    let tpq = piece.ticks_per_quarter;
    let survivors = (0..n).filter(|&i| !removal.muted[i]);
    for (track, i) in reduced.tracks.iter_mut().zip(survivors) {
        if track.is_percussion {
            continue;
        }
        let mut out = split_notes(
            track,
            p_note[i],
            &mut stream(seed, Some(i), Operation::SplitNotes),
            tpq,
        );
        if track.role != Some(TrackRole::Melody) {
            out = invert_chords(
                &out,
                p_chinv[i],
                &mut stream(seed, Some(i), Operation::InvertChords),
            );
            out = arpeggiate_chords(
                &out,
                p_charg[i],
                &mut stream(seed, Some(i), Operation::ArpeggiateChords),
                tpq,
            );
        }
        *track = out;
    }

    let audio = sample_audio_params(seed);
    let record = AugmentationRecord {
        seed,
        replacements,
        muted: removal.muted,
        p_note,
        p_chinv,
        p_charg,
        track_removal_p: removal.p,
        pitch_shift: audio.pitch_shift,
        time_shift: audio.time_shift,
        tempo_factor: audio.tempo_factor,
    };
    Ok((reduced, record))
}
