use std::collections::BTreeMap;

use super::Track;

/// Track-local indices of a 3- or 4-note block chord, ascending by pitch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChordGroup {
    pub indices: Vec<usize>,
    pub onset: u64,
    pub duration: u64,
}

impl ChordGroup {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub const MIN_CHORD_SIZE: usize = 3;
pub const MAX_CHORD_SIZE: usize = 4;

/// Finds block chords: 3-4 notes with identical onset and identical duration.
///
/// Simultaneity is exact tick equality. A group with more than four members
/// contributes only its four lowest pitches. When `regular_durations` is
/// given, only chords whose duration is in the set are returned.
pub fn detect_block_chords(track: &Track, regular_durations: Option<&[u64]>) -> Vec<ChordGroup> {
    let mut groups: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for (i, n) in track.notes.iter().enumerate() {
        groups.entry((n.onset, n.duration)).or_default().push(i);
    }
    groups
        .into_iter()
        .filter(|((_, duration), _)| regular_durations.is_none_or(|set| set.contains(duration)))
        .filter_map(|((onset, duration), mut indices)| {
            if indices.len() < MIN_CHORD_SIZE {
                return None;
            }
            indices.sort_by_key(|&i| (track.notes[i].pitch, i));
            indices.truncate(MAX_CHORD_SIZE);
            Some(ChordGroup {
                indices,
                onset,
                duration,
            })
        })
        .collect()
}

/// Durations of 1x, 2x, 3x and 4x a quarter note.
pub fn regular_chord_durations(ticks_per_quarter: u16) -> [u64; 4] {
    let q = ticks_per_quarter as u64;
    [q, 2 * q, 3 * q, 4 * q]
}
