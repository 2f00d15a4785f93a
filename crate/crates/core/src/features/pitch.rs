//! YIN fundamental-frequency tracking with median smoothing.

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureKind, FeatureSequence, FeaturesError};
use crate::render::AudioBuffer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchParams {
    pub frame: usize,
    pub hop: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub threshold: f64,
    pub median: usize,
}

impl Default for PitchParams {
    fn default() -> Self {
        PitchParams {
            frame: 2048,
            hop: 512,
            fmin: 55.0,
            fmax: 1760.0,
            threshold: 0.15,
            median: 5,
        }
    }
}

pub fn pitch_contour(buffer: &AudioBuffer) -> Result<FeatureSequence, FeaturesError> {
    pitch_contour_with(buffer, PitchParams::default())
}

/// One f0 value in Hz per frame, 0 where unvoiced.
pub fn pitch_contour_with(
    buffer: &AudioBuffer,
    params: PitchParams,
) -> Result<FeatureSequence, FeaturesError> {
    let sr = buffer.sample_rate as f64;
    let window = params.frame / 2;
    let tau_min = (sr / params.fmax).floor().max(2.0) as usize;
    let tau_max = (sr / params.fmin).ceil() as usize;
    if params.hop == 0 || tau_max + 1 >= window || params.fmin >= params.fmax {
        return Err(FeaturesError::InvalidParameter(format!(
            "frame {} cannot resolve {} Hz at {} Hz",
            params.frame, params.fmin, buffer.sample_rate
        )));
    }
    let n_frames = buffer.len() / params.hop + 1;
    let half = params.frame / 2;
    let mut padded = vec![0.0f32; buffer.len() + params.frame];
    padded[half..half + buffer.len()].copy_from_slice(&buffer.samples);

    let size = (params.frame + window).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let mut a = vec![Complex::new(0.0, 0.0); size];
    let mut b = vec![Complex::new(0.0, 0.0); size];
    let mut diff = vec![0.0f64; tau_max + 2];
    let mut cumulative = vec![0.0f64; params.frame + 1];

    let mut raw = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let x = &padded[t * params.hop..t * params.hop + params.frame];
        if x.iter().all(|&v| v.abs() < 1e-7) {
            raw.push(0.0);
            continue;
        }
        // r(tau) = sum_{j < window} x[j] x[j + tau] by FFT correlation.
        for (i, slot) in a.iter_mut().enumerate() {
            *slot = Complex::new(if i < window { x[i] as f64 } else { 0.0 }, 0.0);
        }
        for (i, slot) in b.iter_mut().enumerate() {
            *slot = Complex::new(if i < params.frame { x[i] as f64 } else { 0.0 }, 0.0);
        }
        forward.process(&mut a);
        forward.process(&mut b);
        for (p, q) in a.iter_mut().zip(&b) {
            *p = p.conj() * q;
        }
        inverse.process(&mut a);
        let scale = 1.0 / size as f64;

        cumulative[0] = 0.0;
        for (j, &v) in x.iter().enumerate() {
            cumulative[j + 1] = cumulative[j] + (v as f64) * (v as f64);
        }
        let energy0 = cumulative[window];
        for (tau, d) in diff.iter_mut().enumerate() {
            let energy_tau = cumulative[tau + window] - cumulative[tau];
            *d = (energy0 + energy_tau - 2.0 * a[tau].re * scale).max(0.0);
        }
        raw.push(pick_f0(&diff, tau_min, tau_max, params.threshold, sr));
    }
    let smoothed = median_filter(&raw, params.median);
    let frames = Array2::from_shape_vec(
        (n_frames, 1),
        smoothed.into_iter().map(|v| v as f32).collect(),
    )
    .expect("one column per frame");
    Ok(FeatureSequence::new(
        FeatureKind::Pitch,
        sr / params.hop as f64,
        frames,
    ))
}

/// Cumulative-mean-normalized difference, first dip under the threshold,
/// parabolic refinement on the raw difference.
fn pick_f0(diff: &[f64], tau_min: usize, tau_max: usize, threshold: f64, sr: f64) -> f64 {
    let mut running = 0.0;
    let mut cmnd = vec![1.0; diff.len()];
    for tau in 1..diff.len() {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    let mut tau = tau_min;
    while tau <= tau_max {
        if cmnd[tau] < threshold {
            while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            let (l, c, r) = (diff[tau - 1], diff[tau], diff[tau + 1]);
            let denom = l - 2.0 * c + r;
            let shift = if denom.abs() > 1e-12 {
                (0.5 * (l - r) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            let f0 = sr / (tau as f64 + shift);
            return if f0.is_finite() { f0 } else { 0.0 };
        }
        tau += 1;
    }
    0.0
}

fn median_filter(values: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return values.to_vec();
    }
    let half = width / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let mut w: Vec<f64> = values[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            w[w.len() / 2]
        })
        .collect()
}
