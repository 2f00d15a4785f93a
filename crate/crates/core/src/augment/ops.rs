use std::collections::BTreeSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::ensemble::EnsembleTable;
use super::rng::{chance, pick, uniform};
use crate::midi::chords::{detect_block_chords, regular_chord_durations};
use crate::midi::{MidiPiece, NoteEvent, Track, TrackRole};

pub const KEEP_PROB: f64 = 0.2;
pub const WITHIN_ENSEMBLE_PROB: f64 = 0.7;
pub const PERCUSSION_MUTE_PROB: f64 = 0.5;
pub const REMOVAL_P_RANGE: (f64, f64) = (0.1, 0.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacePolicy {
    Keep,
    WithinEnsemble,
    CrossEnsemble,
}

/// What happened to one track's instrument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub track: usize,
    pub policy: ReplacePolicy,
    pub from: u8,
    pub to: u8,
    /// Set when no unused target program was available and the track kept
    /// its instrument.
    pub fallback: bool,
}

fn pitch_range(track: &Track) -> Option<(u8, u8)> {
    let lo = track.notes.iter().map(|n| n.pitch).min()?;
    let hi = track.notes.iter().map(|n| n.pitch).max()?;
    Some((lo, hi))
}

fn overlapping(a: Option<(u8, u8)>, b: Option<(u8, u8)>) -> bool {
    match (a, b) {
        (Some((alo, ahi)), Some((blo, bhi))) => alo <= bhi && blo <= ahi,
        _ => true,
    }
}

/// Groups of coupled tracks: same program with overlapping pitch ranges.
fn coupled_groups(piece: &MidiPiece) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, track) in piece.tracks.iter().enumerate() {
        if track.is_percussion {
            continue;
        }
        let range = pitch_range(track);
        let joined = groups.iter_mut().find(|g| {
            g.iter().any(|&j| {
                let other = &piece.tracks[j];
                other.program == track.program && overlapping(pitch_range(other), range)
            })
        });
        match joined {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

pub fn replace_instruments<R: RngCore + ?Sized>(
    piece: &MidiPiece,
    table: &EnsembleTable,
    rng: &mut R,
) -> MidiPiece {
    replace_instruments_recorded(piece, table, rng).0
}

/// Instrument replacement that also reports per-track outcomes.
///
/// Percussion tracks are left alone. Target programs are drawn from those
/// not already used by any source track or by an earlier assignment.
pub fn replace_instruments_recorded<R: RngCore + ?Sized>(
    piece: &MidiPiece,
    table: &EnsembleTable,
    rng: &mut R,
) -> (MidiPiece, Vec<Replacement>) {
    let mut out = piece.clone();
    let mut used: BTreeSet<u8> = piece
        .tracks
        .iter()
        .filter(|t| !t.is_percussion)
        .map(|t| t.program)
        .collect();
    let mut outcomes = Vec::new();
    for group in coupled_groups(piece) {
        let source = piece.tracks[group[0]].program;
        let policy = if chance(rng, KEEP_PROB) {
            ReplacePolicy::Keep
        } else if chance(rng, WITHIN_ENSEMBLE_PROB) {
            ReplacePolicy::WithinEnsemble
        } else {
            ReplacePolicy::CrossEnsemble
        };
        let candidates: Vec<u8> = match policy {
            ReplacePolicy::Keep => Vec::new(),
            ReplacePolicy::WithinEnsemble => table.members(table.ensemble(source)),
            ReplacePolicy::CrossEnsemble => table.cross_candidates(source),
        }
        .into_iter()
        .filter(|p| !used.contains(p))
        .collect();
        let (target, fallback) = match policy {
            ReplacePolicy::Keep => (source, false),
            _ if candidates.is_empty() => (source, true),
            _ => (candidates[pick(rng, candidates.len())], false),
        };
        used.insert(target);
        for &i in &group {
            out.tracks[i].program = target;
            outcomes.push(Replacement {
                track: i,
                policy,
                from: source,
                to: target,
                fallback,
            });
        }
    }
    outcomes.sort_by_key(|r| r.track);
    (out, outcomes)
}

fn is_protected(track: &Track) -> bool {
    matches!(
        track.role,
        Some(TrackRole::Melody) | Some(TrackRole::Bass) | Some(TrackRole::Accompaniment)
    )
}

/// Result of track removal, indexed by the input track order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub p: f64,
    pub muted: Vec<bool>,
}

pub fn remove_tracks<R: RngCore + ?Sized>(piece: &MidiPiece, rng: &mut R) -> MidiPiece {
    remove_tracks_recorded(piece, rng).0
}

pub fn remove_tracks_recorded<R: RngCore + ?Sized>(
    piece: &MidiPiece,
    rng: &mut R,
) -> (MidiPiece, Removal) {
    let p = uniform(rng, REMOVAL_P_RANGE.0, REMOVAL_P_RANGE.1);
    let mut muted: Vec<bool> = piece
        .tracks
        .iter()
        .map(|t| {
            if is_protected(t) {
                false
            } else if t.is_percussion || t.role == Some(TrackRole::Percussion) {
                chance(rng, PERCUSSION_MUTE_PROB)
            } else {
                chance(rng, p)
            }
        })
        .collect();
    if !muted.is_empty() && muted.iter().all(|&m| m) {
        muted[0] = false;
    }
    let mut out = piece.clone();
    out.tracks = piece
        .tracks
        .iter()
        .zip(&muted)
        .filter(|(_, &m)| !m)
        .map(|(t, _)| t.clone())
        .collect();
    (out, Removal { p, muted })
}

fn is_typical_duration(duration: u64, tpq: u64) -> bool {
    duration == tpq || duration == 2 * tpq || duration == 4 * tpq
}

pub fn split_notes<R: RngCore + ?Sized>(
    track: &Track,
    p_note: f64,
    rng: &mut R,
    tpq: u16,
) -> Track {
    let tpq = tpq as u64;
    let mut notes = Vec::with_capacity(track.notes.len());
    for n in &track.notes {
        if is_typical_duration(n.duration, tpq) && n.duration >= 2 && chance(rng, p_note) {
            let half = n.duration / 2;
            notes.push(NoteEvent {
                duration: half,
                ..*n
            });
            notes.push(NoteEvent {
                onset: n.onset + half,
                duration: n.duration - half,
                ..*n
            });
        } else {
            notes.push(*n);
        }
    }
    let mut out = track.clone();
    out.notes = notes;
    out.sort_notes();
    out
}

/// Moves the top chord note down an octave or the bottom note up an octave.
///
/// A direction is infeasible if it leaves 0-127 or lands on a pitch the
/// chord already holds; the other direction is used instead, and the chord
/// is left alone when neither works.
pub fn invert_chords<R: RngCore + ?Sized>(track: &Track, p_chinv: f64, rng: &mut R) -> Track {
    let mut out = track.clone();
    for chord in detect_block_chords(track, None) {
        if !chance(rng, p_chinv) {
            continue;
        }
        let top_down = chance(rng, 0.5);
        let pitches: Vec<u8> = chord
            .indices
            .iter()
            .map(|&i| track.notes[i].pitch)
            .collect();
        let top = *chord.indices.last().unwrap();
        let bottom = chord.indices[0];
        let down = track.notes[top]
            .pitch
            .checked_sub(12)
            .filter(|p| !pitches.contains(p))
            .map(|p| (top, p));
        let up = Some(track.notes[bottom].pitch + 12)
            .filter(|p| *p <= 127 && !pitches.contains(p))
            .map(|p| (bottom, p));
        let choice = if top_down { down.or(up) } else { up.or(down) };
        if let Some((i, pitch)) = choice {
            out.notes[i].pitch = pitch;
        }
    }
    out.sort_notes();
    out
}

pub fn arpeggiate_chords<R: RngCore + ?Sized>(
    track: &Track,
    p_charg: f64,
    rng: &mut R,
    tpq: u16,
) -> Track {
    let regular = regular_chord_durations(tpq);
    let mut out = track.clone();
    for chord in detect_block_chords(track, Some(&regular)) {
        if !chance(rng, p_charg) {
            continue;
        }
        let size = chord.len() as u64;
        let step = chord.duration / size;
        for (k, &i) in chord.indices.iter().enumerate() {
            let k = k as u64;
            let note = &mut out.notes[i];
            note.onset = chord.onset + k * step;
            note.duration = if k + 1 == size {
                chord.duration - k * step
            } else {
                step
            };
        }
    }
    out.sort_notes();
    out
}
