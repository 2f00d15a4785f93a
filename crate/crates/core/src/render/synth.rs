use std::f64::consts::TAU;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AudioBuffer;
use crate::augment::{Ensemble, EnsembleTable};
use crate::midi::{MidiPiece, NoteEvent};

pub const ATTACK_SECONDS: f64 = 0.010;
pub const RELEASE_SECONDS: f64 = 0.050;
pub const PEAK_LEVEL: f32 = 0.9;

/// Relative amplitudes of harmonics 1-4 plus an exponential decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialRecipe {
    pub amplitudes: [f64; 4],
    /// Per-second decay constant of the sustain; 0 holds the level.
    pub decay: f64,
}

impl PartialRecipe {
    pub fn for_ensemble(ensemble: Ensemble) -> Self {
        let (amplitudes, decay) = match ensemble {
            Ensemble::Pianos => ([1.0, 0.5, 0.3, 0.15], 1.5),
            Ensemble::Guitars => ([1.0, 0.6, 0.35, 0.2], 2.5),
            Ensemble::HighStrings => ([1.0, 0.7, 0.5, 0.35], 0.0),
            Ensemble::LowStrings => ([1.0, 0.8, 0.6, 0.4], 0.0),
            Ensemble::Winds => ([1.0, 0.2, 0.1, 0.05], 0.0),
            Ensemble::Brass => ([1.0, 0.8, 0.7, 0.5], 0.0),
            Ensemble::Organs => ([1.0, 0.9, 0.1, 0.6], 0.0),
            Ensemble::SynthLeads => ([1.0, 0.5, 0.33, 0.25], 0.0),
            Ensemble::SynthPads => ([1.0, 0.3, 0.15, 0.1], 0.0),
            Ensemble::Basses => ([1.0, 0.4, 0.15, 0.05], 1.0),
            Ensemble::Mallets => ([1.0, 0.1, 0.4, 0.05], 4.0),
            Ensemble::Other => ([1.0, 0.4, 0.2, 0.1], 0.5),
        };
        PartialRecipe { amplitudes, decay }
    }
}

fn default_table() -> &'static EnsembleTable {
    static TABLE: OnceLock<EnsembleTable> = OnceLock::new();
    TABLE.get_or_init(EnsembleTable::general_midi)
}

pub fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * 2f64.powf((pitch - 69.0) / 12.0)
}

/// Renders a piece with the bundled ensemble table.
pub fn synthesize(piece: &MidiPiece, sample_rate: u32) -> AudioBuffer {
    synthesize_with(piece, sample_rate, default_table())
}

pub fn synthesize_with(piece: &MidiPiece, sample_rate: u32, table: &EnsembleTable) -> AudioBuffer {
    let sr = sample_rate as f64;
    let end = piece.duration_seconds();
    if end <= 0.0 || piece.tracks.iter().all(|t| t.notes.is_empty()) {
        return AudioBuffer::new(sample_rate, Vec::new());
    }
    let total = ((end + RELEASE_SECONDS) * sr).ceil() as usize;
    let mut mix = vec![0.0f64; total];
    for track in &piece.tracks {
        let recipe = PartialRecipe::for_ensemble(table.ensemble(track.program));
        for note in &track.notes {
            let start = piece.ticks_to_seconds(note.onset);
            let stop = piece.ticks_to_seconds(note.end());
            if track.is_percussion {
                render_drum(&mut mix, note, start, sr);
            } else {
                render_tone(&mut mix, note, start, stop, sr, &recipe);
            }
        }
    }
    let peak = mix.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let gain = if peak > 0.0 {
        PEAK_LEVEL as f64 / peak
    } else {
        0.0
    };
    let samples = mix
        .iter()
        .map(|s| ((s * gain) as f32).clamp(-PEAK_LEVEL, PEAK_LEVEL))
        .collect();
    AudioBuffer::new(sample_rate, samples)
}

fn render_tone(
    mix: &mut [f64],
    note: &NoteEvent,
    start: f64,
    stop: f64,
    sr: f64,
    recipe: &PartialRecipe,
) {
    let f0 = midi_to_hz(note.pitch as f64);
    let first = (start * sr).round() as usize;
    let held = ((stop - start) * sr).round().max(1.0) as usize;
    let release = (RELEASE_SECONDS * sr).round() as usize;
    let attack = (ATTACK_SECONDS * sr).round().max(1.0);
    let len = (held + release).min(mix.len().saturating_sub(first));
    let level = note.velocity as f64 / 127.0;

    let mut phasors: Vec<(f64, f64, f64, f64, f64)> = Vec::with_capacity(4);
    for (h, &amp) in recipe.amplitudes.iter().enumerate() {
        let f = f0 * (h + 1) as f64;
        if amp == 0.0 || f >= sr / 2.0 {
            continue;
        }
        let w = TAU * f / sr;
        phasors.push((amp, 1.0, 0.0, w.cos(), w.sin()));
    }
    let decay_step = (-recipe.decay / sr).exp();
    let mut sustain = 1.0;
    let mut release_from = 1.0;
    for (i, out) in mix[first..first + len].iter_mut().enumerate() {
        let env = if i < held {
            let a = (i as f64 / attack).min(1.0);
            release_from = a * sustain;
            release_from
        } else {
            release_from * (1.0 - (i - held) as f64 / release as f64)
        };
        sustain *= decay_step;
        let mut v = 0.0;
        for p in phasors.iter_mut() {
            v += p.0 * p.2;
            let re = p.1 * p.3 - p.2 * p.4;
            let im = p.1 * p.4 + p.2 * p.3;
            p.1 = re;
            p.2 = im;
        }
        *out += level * env * v;
        if i % 4096 == 4095 {
            for p in phasors.iter_mut() {
                let norm = (p.1 * p.1 + p.2 * p.2).sqrt();
                p.1 /= norm;
                p.2 /= norm;
            }
        }
    }
}

fn render_drum(mix: &mut [f64], note: &NoteEvent, start: f64, sr: f64) {
    // Kick and toms are dark and long, cymbals bright and short.
    let (smoothing, seconds, bright) = match note.pitch {
        35 | 36 => (0.03, 0.18, false),
        41 | 43 | 45 | 47 | 48 | 50 => (0.08, 0.15, false),
        38 | 40 => (0.5, 0.12, false),
        42 | 44 => (0.3, 0.04, true),
        46 | 49 | 51 | 52 | 55 | 57 | 59 => (0.3, 0.2, true),
        _ => (0.3, 0.08, false),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(((note.pitch as u64) << 40) ^ note.onset);
    let first = (start * sr).round() as usize;
    let len = ((seconds * sr) as usize).min(mix.len().saturating_sub(first));
    let level = note.velocity as f64 / 127.0;
    let tau = seconds / 4.0;
    let mut low = 0.0;
    for (i, out) in mix[first..first + len].iter_mut().enumerate() {
        let white: f64 = rng.gen_range(-1.0..1.0);
        low += smoothing * (white - low);
        let v = if bright {
            white - low
        } else {
            low / smoothing.sqrt()
        };
        *out += level * (-(i as f64) / (tau * sr)).exp() * v * 0.5;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::Track;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn single(pitch: u8, program: u8) -> MidiPiece {
        let mut p = MidiPiece::new(480, 500_000);
        p.tracks
            .push(Track::new(program, false).with_notes(vec![NoteEvent::new(pitch, 0, 960, 100)]));
        p
    }

    fn peak_bin(samples: &[f32], start: usize, n: usize) -> usize {
        let mut buf: Vec<Complex<f64>> = samples[start..start + n]
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let w = 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos();
                Complex::new(s as f64 * w, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        (0..n / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap()
    }

    #[test]
    fn a4_peaks_at_440() {
        let audio = synthesize(&single(69, 0), 22_050);
        let bin = peak_bin(&audio.samples, 2000, 4096);
        let expected = 440.0 * 4096.0 / 22_050.0;
        assert!(
            (bin as f64 - expected).abs() <= 1.0,
            "bin {bin} vs {expected}"
        );
    }

    #[test]
    fn empty_piece_is_empty_buffer() {
        let audio = synthesize(&MidiPiece::new(480, 500_000), 22_050);
        assert!(audio.is_empty());
    }

    #[test]
    fn deterministic_and_normalized() {
        let mut piece = crate::corpus::generate_piece(
            4,
            &crate::corpus::CorpusConfig {
                bars: 2,
                ..Default::default()
            },
        );
        piece.tracks.truncate(5);
        let a = synthesize(&piece, 16_000);
        let b = synthesize(&piece, 16_000);
        assert_eq!(a, b);
        assert!(a.peak() <= PEAK_LEVEL + 1e-6);
        assert!(a.peak() > 0.5);
    }

    #[test]
    fn envelope_starts_silent_and_releases() {
        let audio = synthesize(&single(60, 40), 10_000);
        assert_eq!(audio.samples[0], 0.0);
        assert!(audio.samples.last().unwrap().abs() < 0.01);
        assert_eq!(audio.len(), (1.05f64 * 10_000.0).ceil() as usize);
    }
}
