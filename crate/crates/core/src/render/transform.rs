//! Tempo, pitch and time shifts. Length-preserving pitch shifting and
//! tempo changes are built on a WSOLA time stretcher (window 1024, hop 256).

use std::f32::consts::TAU;

use super::{AudioBuffer, RenderError};
use crate::augment::AudioParams;

const WINDOW: usize = 1024;
const HOP: usize = 256;
const TOLERANCE: isize = 128;
const CORRELATION_STRIDE: usize = 2;

/// Applies tempo, then pitch, then time shift. Identity parameters return
/// the input unchanged.
pub fn apply_audio_transforms(
    buffer: &AudioBuffer,
    params: &AudioParams,
) -> Result<AudioBuffer, RenderError> {
    if !(params.tempo_factor > 0.0 && params.tempo_factor.is_finite()) {
        return Err(RenderError::InvalidParameter(format!(
            "tempo factor {}",
            params.tempo_factor
        )));
    }
    let mut out = tempo_change(buffer, params.tempo_factor);
    out = pitch_shift(&out, params.pitch_shift as f64);
    time_shift(&out, params.time_shift)
}

/// Plays `buffer` `factor` times faster at the same pitch.
pub fn tempo_change(buffer: &AudioBuffer, factor: f64) -> AudioBuffer {
    if factor == 1.0 {
        return buffer.clone();
    }
    let target = (buffer.len() as f64 / factor).round() as usize;
    time_stretch(buffer, target)
}

/// Shifts pitch by `semitones` keeping the length: resample, then stretch
/// back to the original number of samples.
pub fn pitch_shift(buffer: &AudioBuffer, semitones: f64) -> AudioBuffer {
    if semitones == 0.0 || buffer.is_empty() {
        return buffer.clone();
    }
    let ratio = 2f64.powf(semitones / 12.0);
    let resampled = resample_linear(buffer, 1.0 / ratio);
    time_stretch(&resampled, buffer.len())
}

/// Positive shifts prepend silence, negative shifts trim the start.
pub fn time_shift(buffer: &AudioBuffer, seconds: f64) -> Result<AudioBuffer, RenderError> {
    if seconds.abs() > buffer.duration_seconds() {
        return Err(RenderError::TimeShiftTooLong {
            shift: seconds,
            length: buffer.duration_seconds(),
        });
    }
    let n = (seconds.abs() * buffer.sample_rate as f64).round() as usize;
    let samples = if seconds >= 0.0 {
        let mut v = vec![0.0; n];
        v.extend_from_slice(&buffer.samples);
        v
    } else {
        buffer.samples[n.min(buffer.len())..].to_vec()
    };
    Ok(AudioBuffer::new(buffer.sample_rate, samples))
}

/// Changes the length by `ratio` with linear interpolation; frequencies
/// scale by `1 / ratio`.
pub fn resample_linear(buffer: &AudioBuffer, ratio: f64) -> AudioBuffer {
    let n = buffer.len();
    let out_len = (n as f64 * ratio).round() as usize;
    let x = &buffer.samples;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 / ratio;
            let j = pos.floor() as usize;
            let frac = (pos - j as f64) as f32;
            let a = x.get(j).copied().unwrap_or(0.0);
            let b = x.get(j + 1).copied().unwrap_or(0.0);
            a + (b - a) * frac
        })
        .collect();
    AudioBuffer::new(buffer.sample_rate, samples)
}

fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (TAU * i as f32 / n as f32).cos())
        .collect()
}

fn sample_at(x: &[f32], i: isize) -> f32 {
    if i < 0 {
        0.0
    } else {
        x.get(i as usize).copied().unwrap_or(0.0)
    }
}

fn frame(x: &[f32], start: isize, out: &mut [f32]) {
    if start >= 0 && start as usize + out.len() <= x.len() {
        out.copy_from_slice(&x[start as usize..start as usize + out.len()]);
    } else {
        for (k, v) in out.iter_mut().enumerate() {
            *v = sample_at(x, start + k as isize);
        }
    }
}

/// Waveform-similarity overlap-add: produces `target_len` samples with the
/// input's local pitch.
pub fn time_stretch(buffer: &AudioBuffer, target_len: usize) -> AudioBuffer {
    let x = &buffer.samples;
    if x.is_empty() || target_len == 0 {
        return AudioBuffer::new(buffer.sample_rate, vec![0.0; target_len]);
    }
    if target_len == x.len() {
        return buffer.clone();
    }
    let speed = x.len() as f64 / target_len as f64;
    let window = hann(WINDOW);
    let mut out = vec![0.0f32; target_len + WINDOW];
    let mut weight = vec![0.0f32; target_len + WINDOW];
    let offset = (WINDOW - HOP) as isize;

    let mut template = vec![0.0f32; WINDOW];
    let mut candidate = vec![0.0f32; WINDOW + 2 * TOLERANCE as usize];
    let mut chosen = vec![0.0f32; WINDOW];
    let mut prev_start: Option<isize> = None;
    let frames = (target_len + WINDOW) / HOP + 1;
    for k in 0..frames {
        let synth = k as isize * HOP as isize - offset;
        let centre = synth as f64 + WINDOW as f64 / 2.0;
        let nominal = (centre * speed - WINDOW as f64 / 2.0).round() as isize;
        let start = match prev_start {
            None => nominal,
            Some(prev) => {
                frame(x, prev + HOP as isize, &mut template);
                frame(x, nominal - TOLERANCE, &mut candidate);
                nominal - TOLERANCE + best_lag(&template, &candidate)
            }
        };
        frame(x, start, &mut chosen);
        for (i, (&s, &w)) in chosen.iter().zip(&window).enumerate() {
            let pos = synth + i as isize;
            if pos >= 0 && (pos as usize) < out.len() {
                out[pos as usize] += s * w;
                weight[pos as usize] += w;
            }
        }
        prev_start = Some(start);
    }
    let samples = out[..target_len]
        .iter()
        .zip(&weight[..target_len])
        .map(|(&s, &w)| if w > 1e-3 { s / w } else { 0.0 })
        .collect();
    AudioBuffer::new(buffer.sample_rate, samples)
}

/// Lag in `0..=2*TOLERANCE` maximizing normalized correlation with the
/// template.
fn best_lag(template: &[f32], candidate: &[f32]) -> isize {
    let t: Vec<f32> = template
        .iter()
        .step_by(CORRELATION_STRIDE)
        .copied()
        .collect();
    let mut best = (TOLERANCE, f32::NEG_INFINITY);
    for lag in 0..=(2 * TOLERANCE) as usize {
        let c = &candidate[lag..lag + WINDOW];
        let mut dot = 0.0f32;
        let mut energy = 0.0f32;
        for (a, b) in t.iter().zip(c.iter().step_by(CORRELATION_STRIDE)) {
            dot += a * b;
            energy += b * b;
        }
        let score = if energy > 0.0 {
            dot / energy.sqrt()
        } else {
            0.0
        };
        if score > best.1 {
            best = (lag as isize, score);
        }
    }
    best.0
}
