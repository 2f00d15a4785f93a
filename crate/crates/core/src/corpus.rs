//! Synthetic multi-track pieces for desk-scale experiments.
//!
//! Each piece has a planted monophonic melody (the highest-register
//! monophonic track), a bass line, a block-chord accompaniment, an optional
//! pad or counter-melody and a drum track. Roles are set on the returned
//! tracks so they can serve as ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::midi::{MidiPiece, NoteEvent, Track, TrackRole, PERCUSSION_CHANNEL};

pub const TICKS_PER_QUARTER: u16 = 480;

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub bars: u32,
    pub min_bpm: u32,
    pub max_bpm: u32,
    /// Probability of adding a second accompaniment layer.
    pub extra_layer_prob: f64,
    pub drums: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            bars: 16,
            min_bpm: 90,
            max_bpm: 140,
            extra_layer_prob: 0.6,
            drums: true,
        }
    }
}

const MODES: [&[i32]; 7] = [
    &[0, 2, 4, 5, 7, 9, 11], // major
    &[0, 2, 3, 5, 7, 8, 10], // natural minor
    &[0, 2, 3, 5, 7, 9, 10], // dorian
    &[0, 2, 4, 5, 7, 9, 10], // mixolydian
    &[0, 2, 3, 5, 7, 8, 11], // harmonic minor
    &[0, 1, 3, 5, 7, 8, 10], // phrygian
    &[0, 2, 4, 6, 7, 9, 11], // lydian
];

const MELODY_PROGRAMS: [u8; 12] = [40, 41, 56, 57, 64, 65, 68, 71, 73, 80, 81, 11];
const CHORD_PROGRAMS: [u8; 10] = [0, 1, 2, 4, 5, 24, 25, 26, 27, 6];
const BASS_PROGRAMS: [u8; 6] = [32, 33, 34, 35, 38, 39];
const PAD_PROGRAMS: [u8; 8] = [48, 49, 50, 19, 52, 89, 90, 16];
const COUNTER_PROGRAMS: [u8; 6] = [42, 60, 61, 66, 69, 70];

struct Harmony {
    root: i32,
    mode: &'static [i32],
}

impl Harmony {
    /// Absolute pitch of a scale degree (may be negative or > 6) above `base_octave`.
    fn degree_pitch(&self, degree: i32, base_octave: i32) -> i32 {
        let n = self.mode.len() as i32;
        let octave = degree.div_euclid(n);
        let step = degree.rem_euclid(n);
        12 * (base_octave + octave) + self.root + self.mode[step as usize]
    }
}

fn clamp_pitch(p: i32) -> u8 {
    p.clamp(0, 127) as u8
}

/// Generates one synthetic piece, fully determined by `seed`.
pub fn generate_piece(seed: u64, config: &CorpusConfig) -> MidiPiece {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_6c6f_6479_7369);
    let bpm = rng.gen_range(config.min_bpm..=config.max_bpm) as f64;
    let mut piece = MidiPiece::from_bpm(TICKS_PER_QUARTER, bpm);
    let q = TICKS_PER_QUARTER as u64;
    let bar = 4 * q;
    let bars = config.bars.max(1) as u64;

    let harmony = Harmony {
        root: rng.gen_range(0..12),
        mode: MODES[rng.gen_range(0..MODES.len())],
    };

    // chord progression: one chord (scale degree) per bar, 4-bar cycle starting on the tonic
    let mut progression = vec![0i32];
    for _ in 0..3 {
        progression.push(rng.gen_range(1..7));
    }
    let chord_at = |bar_index: u64| progression[(bar_index % 4) as usize];

    // melody: two 2-bar motifs (A, B) arranged as A B A B' ...
    let melody_base = rng.gen_range(5..=6);
    let motif_a = melody_motif(&mut rng, &harmony, &progression, 0, melody_base);
    let motif_b = melody_motif(&mut rng, &harmony, &progression, 2, melody_base);
    let mut melody_notes = Vec::new();
    let velocity_melody = rng.gen_range(100..=115);
    for bar_pair in 0..bars.div_ceil(2) {
        let motif = if bar_pair % 2 == 0 {
            &motif_a
        } else {
            &motif_b
        };
        let start = bar_pair * 2 * bar;
        let vary = bar_pair % 4 == 3;
        for (k, &(offset, duration, pitch)) in motif.iter().enumerate() {
            let onset = start + offset;
            if onset >= bars * bar {
                break;
            }
            let mut p = pitch;
            if vary && k % 3 == 2 {
                p = harmony.degree_pitch(scale_index(&harmony, p) + 1, 0);
            }
            let duration = duration.min(bars * bar - onset);
            melody_notes.push(
                NoteEvent::new(clamp_pitch(p), onset, duration, velocity_melody).with_channel(0),
            );
        }
    }
    let mut melody =
        Track::new(*MELODY_PROGRAMS.choose(&mut rng).unwrap(), false).with_notes(melody_notes);
    melody.role = Some(TrackRole::Melody);

    // bass: root (and fifth) in octave 2-3
    let bass_pattern = rng.gen_range(0..3);
    let mut bass_notes = Vec::new();
    for b in 0..bars {
        let root = harmony.degree_pitch(chord_at(b), 3);
        let fifth = harmony.degree_pitch(chord_at(b) + 4, 3);
        let start = b * bar;
        let hits: Vec<(u64, u64, i32)> = match bass_pattern {
            0 => vec![(0, 2 * q, root), (2 * q, 2 * q, fifth)],
            1 => (0..4)
                .map(|i| (i * q, q, if i % 2 == 0 { root } else { fifth }))
                .collect(),
            _ => vec![(0, 3 * q, root), (3 * q, q, fifth)],
        };
        for (o, d, p) in hits {
            bass_notes.push(NoteEvent::new(clamp_pitch(p), start + o, d, 85).with_channel(1));
        }
    }
    let mut bass =
        Track::new(*BASS_PROGRAMS.choose(&mut rng).unwrap(), false).with_notes(bass_notes);
    bass.role = Some(TrackRole::Bass);

    // block chords in octave 4
    let chord_pattern = rng.gen_range(0..3);
    let seventh = rng.gen_bool(0.4);
    let chord_velocity = rng.gen_range(58..=72);
    let mut chord_notes = Vec::new();
    for b in 0..bars {
        let degree = chord_at(b);
        let mut tones: Vec<i32> = [0, 2, 4]
            .iter()
            .map(|&s| harmony.degree_pitch(degree + s, 4))
            .collect();
        if seventh {
            tones.push(harmony.degree_pitch(degree + 6, 4));
        }
        let start = b * bar;
        let slots: Vec<(u64, u64)> = match chord_pattern {
            0 => vec![(0, 4 * q)],
            1 => vec![(0, 2 * q), (2 * q, 2 * q)],
            _ => vec![(0, q), (q, q), (2 * q, 2 * q)],
        };
        for (o, d) in slots {
            for &p in &tones {
                chord_notes.push(
                    NoteEvent::new(clamp_pitch(p), start + o, d, chord_velocity).with_channel(2),
                );
            }
        }
    }
    let chord_program = *CHORD_PROGRAMS.choose(&mut rng).unwrap();
    let mut chords = Track::new(chord_program, false).with_notes(chord_notes);
    chords.role = Some(TrackRole::Accompaniment);

    piece.tracks.push(melody);
    piece.tracks.push(chords);
    piece.tracks.push(bass);

    if rng.gen_bool(config.extra_layer_prob) {
        if rng.gen_bool(0.5) {
            // sustained pad, three voices in octave 4-5
            let mut notes = Vec::new();
            for b in 0..bars {
                let degree = chord_at(b);
                for s in [2, 4, 7] {
                    let p = harmony.degree_pitch(degree + s, 4);
                    notes.push(NoteEvent::new(clamp_pitch(p), b * bar, bar, 50).with_channel(3));
                }
            }
            let mut pad =
                Track::new(*PAD_PROGRAMS.choose(&mut rng).unwrap(), false).with_notes(notes);
            pad.role = Some(TrackRole::Other);
            piece.tracks.push(pad);
        } else {
            // monophonic counter line below the melody
            let mut notes = Vec::new();
            for b in 0..bars {
                let degree = chord_at(b);
                for (i, s) in [0, 2, 4, 2].iter().enumerate() {
                    let p = harmony.degree_pitch(degree + s, 4);
                    notes.push(
                        NoteEvent::new(clamp_pitch(p), b * bar + i as u64 * q, q, 64)
                            .with_channel(4),
                    );
                }
            }
            let mut counter =
                Track::new(*COUNTER_PROGRAMS.choose(&mut rng).unwrap(), false).with_notes(notes);
            counter.role = Some(TrackRole::Other);
            piece.tracks.push(counter);
        }
    }

    if config.drums {
        let mut notes = Vec::new();
        let eighth = q / 2;
        for b in 0..bars {
            for i in 0..8u64 {
                let t = b * bar + i * eighth;
                notes.push(NoteEvent::new(42, t, eighth / 2, 60).with_channel(PERCUSSION_CHANNEL));
                if i == 0 || i == 4 {
                    notes.push(NoteEvent::new(36, t, eighth, 90).with_channel(PERCUSSION_CHANNEL));
                }
                if i == 2 || i == 6 {
                    notes.push(NoteEvent::new(38, t, eighth, 80).with_channel(PERCUSSION_CHANNEL));
                }
            }
        }
        let mut drums = Track::new(0, true).with_notes(notes);
        drums.role = Some(TrackRole::Percussion);
        piece.tracks.push(drums);
    }

    // shuffle track order so the melody index carries no information
    piece.tracks.shuffle(&mut rng);
    piece
}

fn scale_index(harmony: &Harmony, pitch: i32) -> i32 {
    let n = harmony.mode.len() as i32;
    let rel = pitch - harmony.root;
    let octave = rel.div_euclid(12);
    let pc = rel.rem_euclid(12);
    let step = harmony
        .mode
        .iter()
        .position(|&m| m >= pc)
        .unwrap_or(harmony.mode.len() - 1) as i32;
    octave * n + step
}

/// A two-bar motif of `(offset, duration, pitch)` over bars `first_bar`, `first_bar + 1`.
fn melody_motif(
    rng: &mut ChaCha8Rng,
    harmony: &Harmony,
    progression: &[i32],
    first_bar: usize,
    base_octave: i32,
) -> Vec<(u64, u64, i32)> {
    let q = TICKS_PER_QUARTER as u64;
    let total = 8 * q;
    // durations in eighths
    const CHOICES: [u64; 6] = [1, 2, 2, 3, 4, 8];
    let mut notes = Vec::new();
    let mut t = 0u64;
    let mut degree = progression[first_bar % progression.len()] + rng.gen_range(0..3) * 2;
    while t < total {
        let remaining = (total - t) / (q / 2);
        let mut eighths = *CHOICES.choose(rng).unwrap();
        eighths = eighths.min(remaining);
        let duration = eighths * q / 2;
        let bar_index = first_bar + (t / (4 * q)) as usize;
        let on_strong_beat = t.is_multiple_of(2 * q);
        if on_strong_beat {
            // snap to a chord tone of the current bar
            let chord_root = progression[bar_index % progression.len()];
            let candidates = [chord_root, chord_root + 2, chord_root + 4, chord_root + 7];
            degree = *candidates
                .iter()
                .min_by_key(|&&c| ((c - degree).abs(), c))
                .unwrap();
        } else {
            degree += rng.gen_range(-2..=2);
        }
        degree = degree.clamp(-3, 10);
        // occasional rest
        if !(rng.gen_bool(0.08) && t > 0) {
            notes.push((t, duration, harmony.degree_pitch(degree, base_octave)));
        }
        t += duration;
    }
    notes
}

/// Generates `count` pieces with seeds `base_seed, base_seed + 1, ...`.
pub fn generate_corpus(base_seed: u64, count: usize, config: &CorpusConfig) -> Vec<MidiPiece> {
    (0..count as u64)
        .map(|i| generate_piece(base_seed.wrapping_add(i), config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pieces_are_valid_and_deterministic() {
        let config = CorpusConfig::default();
        for seed in 0..20 {
            let a = generate_piece(seed, &config);
            a.validate().unwrap();
            assert_eq!(a, generate_piece(seed, &config));
        }
    }

    #[test]
    fn melody_is_monophonic_and_highest() {
        let config = CorpusConfig::default();
        for seed in 0..30 {
            let piece = generate_piece(seed, &config);
            let m = piece.melody_index().unwrap();
            let melody = &piece.tracks[m];
            assert!(melody.notes.windows(2).all(|w| w[0].end() <= w[1].onset));
            for (i, t) in piece.tracks.iter().enumerate() {
                if i != m && !t.is_percussion {
                    assert!(
                        t.pitch_mean() < melody.pitch_mean(),
                        "seed {seed} track {i}"
                    );
                }
            }
        }
    }
}
