//! Melody track identification.
//!
//! Each track is described by a handful of symbolic statistics plus the
//! mean of the same statistics over every other non-percussion track of the
//! piece (the context block). A histogram gradient-boosted classifier scores
//! every eligible track; the argmax is the melody.

pub mod gbdt;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::midi::{MidiPiece, Track, TrackRole};
pub use gbdt::{BoostConfig, BoostedClassifier};

#[derive(Debug, Error)]
pub enum MelodyError {
    #[error("track {0} has no notes")]
    EmptyTrack(usize),
    #[error("track index {0} out of range")]
    NoSuchTrack(usize),
    #[error("piece has no eligible (non-percussion, non-empty) track")]
    NoEligibleTrack,
    #[error("training failed: {0}")]
    Training(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Number of per-track statistics; the full vector is twice this.
pub const BASE_FEATURES: usize = 8;
pub const FEATURE_COUNT: usize = 2 * BASE_FEATURES;

pub const FEATURE_NAMES: [&str; BASE_FEATURES] = [
    "polyphony_rate",
    "note_density",
    "activation_density",
    "pitch_mean",
    "pitch_std",
    "pitch_range",
    "mean_note_duration",
    "velocity_mean",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackStats {
    /// Fraction of sounding time with two or more simultaneous notes.
    pub polyphony_rate: f64,
    /// Notes per second of piece duration.
    pub note_density: f64,
    /// Fraction of the piece during which at least one note sounds.
    pub activation_density: f64,
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub pitch_range: f64,
    /// Seconds.
    pub mean_note_duration: f64,
    pub velocity_mean: f64,
}

impl TrackStats {
    fn to_array(self) -> [f64; BASE_FEATURES] {
        [
            self.polyphony_rate,
            self.note_density,
            self.activation_density,
            self.pitch_mean,
            self.pitch_std,
            self.pitch_range,
            self.mean_note_duration,
            self.velocity_mean,
        ]
    }

    fn from_array(a: [f64; BASE_FEATURES]) -> Self {
        TrackStats {
            polyphony_rate: a[0],
            note_density: a[1],
            activation_density: a[2],
            pitch_mean: a[3],
            pitch_std: a[4],
            pitch_range: a[5],
            mean_note_duration: a[6],
            velocity_mean: a[7],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackFeatureVector {
    pub own: TrackStats,
    /// Mean of `own` over all other non-percussion tracks with notes; zeros if none.
    pub context: TrackStats,
}

impl TrackFeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.own.to_array().to_vec();
        v.extend_from_slice(&self.context.to_array());
        v
    }
}

fn track_stats(piece: &MidiPiece, track: &Track) -> TrackStats {
    let duration = piece.duration_seconds().max(1e-9);
    let n = track.notes.len() as f64;

    // sweep over note boundaries in seconds
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(track.notes.len() * 2);
    for note in &track.notes {
        events.push((piece.ticks_to_seconds(note.onset), 1));
        events.push((piece.ticks_to_seconds(note.end()), -1));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut active, mut poly) = (0.0, 0.0);
    let mut depth = 0;
    let mut last = 0.0;
    for (t, delta) in events {
        let span = t - last;
        if depth >= 1 {
            active += span;
        }
        if depth >= 2 {
            poly += span;
        }
        depth += delta;
        last = t;
    }

    let pitches: Vec<f64> = track.notes.iter().map(|n| n.pitch as f64).collect();
    let pitch_mean = pitches.iter().sum::<f64>() / n;
    let pitch_var = pitches
        .iter()
        .map(|p| (p - pitch_mean).powi(2))
        .sum::<f64>()
        / n;
    let (lo, hi) = pitches
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        });
    let total_note_seconds: f64 = track
        .notes
        .iter()
        .map(|note| piece.ticks_to_seconds(note.end()) - piece.ticks_to_seconds(note.onset))
        .sum();

    TrackStats {
        polyphony_rate: if active > 0.0 {
            (poly / active).clamp(0.0, 1.0)
        } else {
            0.0
        },
        note_density: n / duration,
        activation_density: (active / duration).clamp(0.0, 1.0),
        pitch_mean,
        pitch_std: pitch_var.sqrt(),
        pitch_range: hi - lo,
        mean_note_duration: total_note_seconds / n,
        velocity_mean: track.notes.iter().map(|n| n.velocity as f64).sum::<f64>() / n,
    }
}

fn is_candidate(track: &Track) -> bool {
    !track.is_percussion && !track.notes.is_empty()
}

/// Features of one track; the context block averages over all other
/// non-percussion tracks that have notes.
pub fn extract_track_features(
    piece: &MidiPiece,
    track_index: usize,
) -> Result<TrackFeatureVector, MelodyError> {
    let track = piece
        .tracks
        .get(track_index)
        .ok_or(MelodyError::NoSuchTrack(track_index))?;
    if track.notes.is_empty() {
        return Err(MelodyError::EmptyTrack(track_index));
    }
    let own = track_stats(piece, track);
    let others: Vec<[f64; BASE_FEATURES]> = piece
        .tracks
        .iter()
        .enumerate()
        .filter(|(i, t)| *i != track_index && is_candidate(t))
        .map(|(_, t)| track_stats(piece, t).to_array())
        .collect();
    let mut context = [0.0; BASE_FEATURES];
    if !others.is_empty() {
        for o in &others {
            for (c, v) in context.iter_mut().zip(o) {
                *c += v;
            }
        }
        context.iter_mut().for_each(|c| *c /= others.len() as f64);
    }
    Ok(TrackFeatureVector {
        own,
        context: TrackStats::from_array(context),
    })
}

/// Melody classifier: a boosted ensemble over [`TrackFeatureVector`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelodyClassifier {
    pub model: BoostedClassifier,
}

impl MelodyClassifier {
    pub fn score(&self, features: &TrackFeatureVector) -> f64 {
        self.model.predict_proba(&features.to_vec())
    }

    pub fn to_json(&self) -> Result<String, MelodyError> {
        self.model.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self, MelodyError> {
        let model = BoostedClassifier::from_json(text)?;
        if model.n_features != FEATURE_COUNT {
            return Err(MelodyError::Format(format!(
                "classifier expects {} features, melody features have {FEATURE_COUNT}",
                model.n_features
            )));
        }
        Ok(MelodyClassifier { model })
    }

    pub fn save(&self, path: &Path) -> Result<(), MelodyError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MelodyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn train_melody_classifier(
    examples: &[(TrackFeatureVector, bool)],
    config: &BoostConfig,
) -> Result<MelodyClassifier, MelodyError> {
    let rows: Vec<Vec<f64>> = examples.iter().map(|(f, _)| f.to_vec()).collect();
    let labels: Vec<bool> = examples.iter().map(|(_, y)| *y).collect();
    let (model, _) = BoostedClassifier::fit(&rows, &labels, config)?;
    Ok(MelodyClassifier { model })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelodyPrediction {
    pub track_index: usize,
    /// `None` for percussion or empty tracks.
    pub scores: Vec<Option<f64>>,
}

/// Argmax of per-track melody scores over eligible tracks; ties go to the
/// lowest index.
pub fn predict_melody_track(
    classifier: &MelodyClassifier,
    piece: &MidiPiece,
) -> Result<MelodyPrediction, MelodyError> {
    let scores: Vec<Option<f64>> = piece
        .tracks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if is_candidate(t) {
                extract_track_features(piece, i).map(|f| Some(classifier.score(&f)))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_, _>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    let (track_index, _) = best.ok_or(MelodyError::NoEligibleTrack)?;
    Ok(MelodyPrediction {
        track_index,
        scores,
    })
}

/// General MIDI pianos (0-7) and guitars (24-31).
pub fn is_piano_or_guitar(program: u8) -> bool {
    matches!(program, 0..=7 | 24..=31)
}

/// Assigns roles: melody from the classifier, bass as the lowest mean-pitch
/// remaining non-percussion track, piano/guitar tracks as accompaniment,
/// percussion from the channel flag, everything else `Other`.
pub fn assign_roles(
    piece: &MidiPiece,
    classifier: &MelodyClassifier,
) -> Result<MidiPiece, MelodyError> {
    let prediction = predict_melody_track(classifier, piece)?;
    Ok(assign_roles_with_melody(piece, prediction.track_index))
}

pub fn assign_roles_with_melody(piece: &MidiPiece, melody: usize) -> MidiPiece {
    let mut out = piece.clone();
    let bass = out
        .tracks
        .iter()
        .enumerate()
        .filter(|(i, t)| *i != melody && is_candidate(t))
        .min_by(|a, b| a.1.pitch_mean().total_cmp(&b.1.pitch_mean()))
        .map(|(i, _)| i);
    for (i, track) in out.tracks.iter_mut().enumerate() {
        track.role = Some(if i == melody {
            TrackRole::Melody
        } else if track.is_percussion {
            TrackRole::Percussion
        } else if Some(i) == bass {
            TrackRole::Bass
        } else if is_piano_or_guitar(track.program) {
            TrackRole::Accompaniment
        } else {
            TrackRole::Other
        });
    }
    out
}

/// One row of a labeled-corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub file: String,
    pub track_index: usize,
    pub is_melody: bool,
}

pub fn read_label_manifest(path: &Path) -> Result<Vec<LabelRow>, MelodyError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| MelodyError::Manifest(e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| MelodyError::Manifest(e.to_string())))
        .collect()
}

pub fn write_label_manifest(path: &Path, rows: &[LabelRow]) -> Result<(), MelodyError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| MelodyError::Manifest(e.to_string()))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| MelodyError::Manifest(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Labeled examples from pieces whose melody track carries `TrackRole::Melody`.
pub fn labeled_examples(
    pieces: &[MidiPiece],
) -> Result<Vec<(TrackFeatureVector, bool)>, MelodyError> {
    let mut out = Vec::new();
    for piece in pieces {
        for (i, track) in piece.tracks.iter().enumerate() {
            if is_candidate(track) {
                out.push((
                    extract_track_features(piece, i)?,
                    track.role == Some(TrackRole::Melody),
                ));
            }
        }
    }
    Ok(out)
}

/// Trains the default classifier on a built-in synthetic labeled corpus.
pub fn default_classifier() -> MelodyClassifier {
    let config = crate::corpus::CorpusConfig {
        bars: 8,
        ..Default::default()
    };
    let pieces = crate::corpus::generate_corpus(0x6d65_6c6f, 80, &config);
    let examples = labeled_examples(&pieces).expect("synthetic pieces have notes");
    train_melody_classifier(&examples, &BoostConfig::default())
        .expect("synthetic corpus has both classes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::NoteEvent;

    fn piece_with(tracks: Vec<Track>) -> MidiPiece {
        let mut p = MidiPiece::new(480, 500_000);
        p.tracks = tracks;
        p
    }

    #[test]
    fn monophonic_track_has_zero_polyphony() {
        let t = Track::new(0, false).with_notes(
            (0..8)
                .map(|i| NoteEvent::new(60 + i as u8, i * 480, 480, 90))
                .collect(),
        );
        let f = extract_track_features(&piece_with(vec![t]), 0).unwrap();
        assert_eq!(f.own.polyphony_rate, 0.0);
        assert_eq!(f.own.activation_density, 1.0);
        assert_eq!(f.context, TrackStats::default());
    }

    #[test]
    fn whole_notes_cover_the_piece() {
        let t = Track::new(0, false).with_notes(
            (0..4)
                .map(|i| NoteEvent::new(60, i * 1920, 1920, 90))
                .collect(),
        );
        let f = extract_track_features(&piece_with(vec![t]), 0).unwrap();
        assert_eq!(f.own.activation_density, 1.0);
        assert!((f.own.mean_note_duration - 2.0).abs() < 1e-12);
        assert!((f.own.note_density - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_track_context_is_the_other_track() {
        let a = Track::new(0, false).with_notes(vec![NoteEvent::new(72, 0, 480, 90)]);
        let b = Track::new(0, false).with_notes(vec![
            NoteEvent::new(48, 0, 480, 90),
            NoteEvent::new(50, 480, 480, 90),
        ]);
        let p = piece_with(vec![a, b]);
        let f0 = extract_track_features(&p, 0).unwrap();
        let f1 = extract_track_features(&p, 1).unwrap();
        assert_eq!(f0.context.pitch_mean, f1.own.pitch_mean);
        assert_eq!(f1.context.pitch_mean, 72.0);
    }

    #[test]
    fn chord_track_polyphony() {
        let t = Track::new(0, false).with_notes(vec![
            NoteEvent::new(60, 0, 960, 90),
            NoteEvent::new(64, 0, 480, 90),
        ]);
        let f = extract_track_features(&piece_with(vec![t]), 0).unwrap();
        assert!((f.own.polyphony_rate - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_track_is_an_error() {
        let p = piece_with(vec![Track::new(0, false)]);
        assert!(matches!(
            extract_track_features(&p, 0),
            Err(MelodyError::EmptyTrack(0))
        ));
    }

    #[test]
    fn context_ignores_order_of_other_tracks() {
        let mk = |p: u8, n: u64| {
            Track::new(0, false).with_notes(
                (0..n)
                    .map(|i| NoteEvent::new(p, i * 240, 240, 80))
                    .collect(),
            )
        };
        let p1 = piece_with(vec![mk(70, 4), mk(50, 8), mk(60, 2)]);
        let p2 = piece_with(vec![mk(70, 4), mk(60, 2), mk(50, 8)]);
        let a = extract_track_features(&p1, 0).unwrap();
        let b = extract_track_features(&p2, 0).unwrap();
        for (x, y) in a.context.to_array().iter().zip(b.context.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn trained() -> MelodyClassifier {
        default_classifier()
    }

    #[test]
    fn single_track_piece_picks_it() {
        let t = Track::new(0, false).with_notes(vec![NoteEvent::new(60, 0, 480, 90)]);
        let pred = predict_melody_track(&trained(), &piece_with(vec![t])).unwrap();
        assert_eq!(pred.track_index, 0);
    }

    #[test]
    fn percussion_only_piece_is_an_error() {
        let t =
            Track::new(0, true).with_notes(vec![NoteEvent::new(36, 0, 480, 90).with_channel(9)]);
        assert!(matches!(
            predict_melody_track(&trained(), &piece_with(vec![t])),
            Err(MelodyError::NoEligibleTrack)
        ));
    }

    #[test]
    fn roles_are_assigned() {
        let piece = crate::corpus::generate_piece(3, &Default::default());
        let melody = piece.melody_index().unwrap();
        let assigned = assign_roles_with_melody(&piece, melody);
        assert_eq!(assigned.tracks[melody].role, Some(TrackRole::Melody));
        assert_eq!(
            assigned
                .tracks
                .iter()
                .filter(|t| t.role == Some(TrackRole::Bass))
                .count(),
            1
        );
        for t in &assigned.tracks {
            assert_eq!(t.is_percussion, t.role == Some(TrackRole::Percussion));
        }
    }

    #[test]
    fn label_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let rows = vec![
            LabelRow {
                file: "a.mid".into(),
                track_index: 0,
                is_melody: true,
            },
            LabelRow {
                file: "a.mid".into(),
                track_index: 2,
                is_melody: false,
            },
        ];
        write_label_manifest(&path, &rows).unwrap();
        assert_eq!(read_label_manifest(&path).unwrap(), rows);
    }
}
