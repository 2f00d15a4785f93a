//! Symbolic score representation: notes, tracks, tempo map.
//!
//! A [`MidiPiece`] is an immutable-after-construction view of a Standard MIDI
//! File with note-on/note-off pairs already matched into [`NoteEvent`]s.
//! Reading and writing live in [`smf`], block-chord detection in [`chords`].

pub mod chords;
pub mod smf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chords::{detect_block_chords, ChordGroup};
pub use smf::{parse_midi, write_midi};

/// Default tempo when a file carries no tempo meta event (120 BPM).
pub const DEFAULT_MICROS_PER_QUARTER: u32 = 500_000;

/// MIDI channel carrying General MIDI percussion (channel 10, zero-based 9).
pub const PERCUSSION_CHANNEL: u8 = 9;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),

    #[error("SMPTE time division is not supported")]
    SmpteDivision,

    #[error("serialization error: {0}")]
    Serialize(String),

    #[error("invalid piece: {0}")]
    InvalidPiece(String),
}

impl MidiError {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        MidiError::Parse {
            offset,
            message: message.into(),
        }
    }
}

/// A single sounding note, in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset: u64,
    pub duration: u64,
    pub velocity: u8,
    pub channel: u8,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset: u64, duration: u64, velocity: u8) -> Self {
        NoteEvent {
            pitch,
            onset,
            duration,
            velocity,
            channel: 0,
        }
    }

    pub fn with_channel(mut self, channel: u8) -> Self {
        self.channel = channel;
        self
    }

    /// Exclusive end tick.
    pub fn end(&self) -> u64 {
        self.onset + self.duration
    }

    pub fn is_valid(&self) -> bool {
        self.pitch <= 127
            && self.duration >= 1
            && (1..=127).contains(&self.velocity)
            && self.channel <= 15
    }
}

/// Functional role of a track inside a piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackRole {
    Melody,
    Bass,
    Accompaniment,
    Percussion,
    Other,
}

impl TrackRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackRole::Melody => "melody",
            TrackRole::Bass => "bass",
            TrackRole::Accompaniment => "accompaniment",
            TrackRole::Percussion => "percussion",
            TrackRole::Other => "other",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim() {
            "melody" => Some(TrackRole::Melody),
            "bass" => Some(TrackRole::Bass),
            "accompaniment" => Some(TrackRole::Accompaniment),
            "percussion" => Some(TrackRole::Percussion),
            "other" => Some(TrackRole::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Track {
    /// General MIDI program, 0-127.
    pub program: u8,
    pub is_percussion: bool,
    /// Sorted by `(onset, pitch)`.
    pub notes: Vec<NoteEvent>,
    pub role: Option<TrackRole>,
}

impl Track {
    pub fn new(program: u8, is_percussion: bool) -> Self {
        Track {
            program,
            is_percussion,
            notes: Vec::new(),
            role: None,
        }
    }

    pub fn with_notes(mut self, notes: Vec<NoteEvent>) -> Self {
        self.notes = notes;
        self.sort_notes();
        self
    }

    pub fn sort_notes(&mut self) {
        self.notes.sort_by_key(note_order);
    }

    pub fn is_sorted(&self) -> bool {
        self.notes
            .windows(2)
            .all(|w| note_order(&w[0]) <= note_order(&w[1]))
    }

    /// Last tick at which any note of this track is still sounding.
    pub fn end_tick(&self) -> u64 {
        self.notes.iter().map(NoteEvent::end).max().unwrap_or(0)
    }

    /// Length of the union of all note intervals, in ticks.
    pub fn sounding_ticks(&self) -> u64 {
        let mut spans: Vec<(u64, u64)> = self.notes.iter().map(|n| (n.onset, n.end())).collect();
        spans.sort_unstable();
        let mut total = 0;
        let mut current: Option<(u64, u64)> = None;
        for (start, end) in spans {
            match current {
                Some((s, e)) if start <= e => current = Some((s, e.max(end))),
                Some((s, e)) => {
                    total += e - s;
                    current = Some((start, end));
                }
                None => current = Some((start, end)),
            }
        }
        if let Some((s, e)) = current {
            total += e - s;
        }
        total
    }

    pub fn pitch_mean(&self) -> f64 {
        if self.notes.is_empty() {
            return 0.0;
        }
        self.notes.iter().map(|n| n.pitch as f64).sum::<f64>() / self.notes.len() as f64
    }
}

fn note_order(n: &NoteEvent) -> (u64, u8, u64, u8, u8) {
    (n.onset, n.pitch, n.duration, n.channel, n.velocity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TempoChange {
    pub tick: u64,
    pub micros_per_quarter: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MidiPiece {
    pub ticks_per_quarter: u16,
    /// Sorted by tick with an entry at tick 0; ticks strictly increasing.
    pub tempo_map: Vec<TempoChange>,
    pub tracks: Vec<Track>,
}

impl MidiPiece {
    /// An empty piece at a constant tempo.
    pub fn new(ticks_per_quarter: u16, micros_per_quarter: u32) -> Self {
        MidiPiece {
            ticks_per_quarter,
            tempo_map: vec![TempoChange {
                tick: 0,
                micros_per_quarter,
            }],
            tracks: Vec::new(),
        }
    }

    pub fn from_bpm(ticks_per_quarter: u16, bpm: f64) -> Self {
        Self::new(ticks_per_quarter, (60_000_000.0 / bpm).round() as u32)
    }

    pub fn validate(&self) -> Result<(), MidiError> {
        if self.ticks_per_quarter == 0 || self.ticks_per_quarter > 0x7fff {
            return Err(MidiError::InvalidPiece(
                "ticks_per_quarter out of range".into(),
            ));
        }
        match self.tempo_map.first() {
            Some(t) if t.tick == 0 => {}
            _ => {
                return Err(MidiError::InvalidPiece(
                    "tempo map must start at tick 0".into(),
                ))
            }
        }
        if self.tempo_map.windows(2).any(|w| w[0].tick >= w[1].tick) {
            return Err(MidiError::InvalidPiece(
                "tempo map ticks must strictly increase".into(),
            ));
        }
        if self
            .tempo_map
            .iter()
            .any(|t| t.micros_per_quarter == 0 || t.micros_per_quarter > 0xff_ffff)
        {
            return Err(MidiError::InvalidPiece("tempo out of range".into()));
        }
        for (i, track) in self.tracks.iter().enumerate() {
            if track.program > 127 {
                return Err(MidiError::InvalidPiece(format!(
                    "track {i}: program out of range"
                )));
            }
            if let Some(n) = track.notes.iter().find(|n| !n.is_valid()) {
                return Err(MidiError::InvalidPiece(format!(
                    "track {i}: invalid note {n:?}"
                )));
            }
            if !track.is_sorted() {
                return Err(MidiError::InvalidPiece(format!(
                    "track {i}: notes not sorted"
                )));
            }
        }
        Ok(())
    }

    pub fn end_tick(&self) -> u64 {
        self.tracks.iter().map(Track::end_tick).max().unwrap_or(0)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.ticks_to_seconds(self.end_tick())
    }

    /// Wall-clock time of `tick`, accumulated piecewise over the tempo map.
    pub fn ticks_to_seconds(&self, tick: u64) -> f64 {
        ticks_to_seconds(self, tick)
    }

    pub fn seconds_per_tick_at(&self, tick: u64) -> f64 {
        let tempo = self
            .tempo_map
            .iter()
            .take_while(|t| t.tick <= tick)
            .last()
            .map(|t| t.micros_per_quarter)
            .unwrap_or(DEFAULT_MICROS_PER_QUARTER);
        tempo as f64 * 1e-6 / self.ticks_per_quarter as f64
    }

    pub fn melody_index(&self) -> Option<usize> {
        self.tracks
            .iter()
            .position(|t| t.role == Some(TrackRole::Melody))
    }
}

/// Converts an absolute tick to seconds using the piece's tempo map.
pub fn ticks_to_seconds(piece: &MidiPiece, tick: u64) -> f64 {
    let tpq = piece.ticks_per_quarter as f64;
    let mut seconds = 0.0;
    let mut last_tick = 0u64;
    let mut tempo = DEFAULT_MICROS_PER_QUARTER;
    for change in &piece.tempo_map {
        if change.tick >= tick {
            break;
        }
        seconds += (change.tick - last_tick) as f64 * tempo as f64 * 1e-6 / tpq;
        last_tick = change.tick;
        tempo = change.micros_per_quarter;
    }
    seconds + (tick - last_tick) as f64 * tempo as f64 * 1e-6 / tpq
}
