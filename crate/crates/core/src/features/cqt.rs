use std::f64::consts::TAU;

use ndarray::Array2;

use super::{FeatureKind, FeatureSequence, FeaturesError};
use crate::render::AudioBuffer;

/// C1.
pub const DEFAULT_FMIN: f64 = 32.703_195_662_574_83;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqtParams {
    pub fmin: f64,
    pub bins_per_octave: usize,
    pub n_bins: usize,
    pub hop: usize,
    /// Kernel length in units of `Q * sample_rate / f_k`.
    pub filter_scale: f64,
}

impl Default for CqtParams {
    fn default() -> Self {
        CqtParams {
            fmin: DEFAULT_FMIN,
            bins_per_octave: 12,
            n_bins: 84,
            hop: 512,
            filter_scale: 2.0,
        }
    }
}

impl CqtParams {
    pub fn q(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        self.fmin * 2f64.powf(bin as f64 / self.bins_per_octave as f64)
    }
}

/// Hann-windowed complex exponentials, one per bin, normalized so a
/// unit-amplitude sinusoid at the bin frequency has magnitude 0.5.
#[derive(Debug, Clone)]
pub struct CqtKernel {
    pub params: CqtParams,
    pub sample_rate: u32,
    re: Vec<Vec<f32>>,
    im: Vec<Vec<f32>>,
}

impl CqtKernel {
    pub fn new(params: CqtParams, sample_rate: u32) -> Result<Self, FeaturesError> {
        if params.bins_per_octave == 0
            || params.n_bins == 0
            || params.hop == 0
            || params.fmin <= 0.0
            || params.filter_scale <= 0.0
        {
            return Err(FeaturesError::InvalidParameter(
                "cqt parameters must be positive".into(),
            ));
        }
        let top = params.frequency(params.n_bins - 1);
        if top >= sample_rate as f64 / 2.0 {
            return Err(FeaturesError::InvalidParameter(format!(
                "top bin {top:.1} Hz is above Nyquist for {sample_rate} Hz"
            )));
        }
        let q = params.q();
        let mut re = Vec::with_capacity(params.n_bins);
        let mut im = Vec::with_capacity(params.n_bins);
        for k in 0..params.n_bins {
            let f = params.frequency(k);
            let len = (params.filter_scale * q * sample_rate as f64 / f).ceil() as usize;
            let window: Vec<f64> = (0..len)
                .map(|n| 0.5 - 0.5 * (TAU * n as f64 / len as f64).cos())
                .collect();
            let norm: f64 = window.iter().sum();
            let (mut kr, mut ki) = (Vec::with_capacity(len), Vec::with_capacity(len));
            for (n, w) in window.iter().enumerate() {
                let phase = TAU * f * n as f64 / sample_rate as f64;
                kr.push((w * phase.cos() / norm) as f32);
                ki.push((-w * phase.sin() / norm) as f32);
            }
            re.push(kr);
            im.push(ki);
        }
        Ok(CqtKernel {
            params,
            sample_rate,
            re,
            im,
        })
    }

    pub fn longest(&self) -> usize {
        self.re.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn apply(&self, buffer: &AudioBuffer) -> Result<FeatureSequence, FeaturesError> {
        if buffer.sample_rate != self.sample_rate {
            return Err(FeaturesError::InvalidParameter(format!(
                "kernel built for {} Hz, buffer is {} Hz",
                self.sample_rate, buffer.sample_rate
            )));
        }
        let longest = self.longest();
        if buffer.len() < longest {
            return Err(FeaturesError::TooShort {
                needed: longest,
                got: buffer.len(),
            });
        }
        let hop = self.params.hop;
        let pad = longest / 2 + 1;
        let mut padded = vec![0.0f32; buffer.len() + 2 * pad];
        padded[pad..pad + buffer.len()].copy_from_slice(&buffer.samples);
        let n_frames = buffer.len() / hop + 1;
        let mut frames = Array2::<f32>::zeros((n_frames, self.params.n_bins));
        for t in 0..n_frames {
            let centre = pad + t * hop;
            for k in 0..self.params.n_bins {
                let (kr, ki) = (&self.re[k], &self.im[k]);
                let start = centre - kr.len() / 2;
                let (r, i) = dot2(&padded[start..start + kr.len()], kr, ki);
                frames[[t, k]] = (r * r + i * i).sqrt();
            }
        }
        Ok(FeatureSequence::new(
            FeatureKind::Cqt,
            self.sample_rate as f64 / hop as f64,
            frames,
        ))
    }
}

/// Simultaneous dot products of `x` with `a` and `b`, in eight lanes.
fn dot2(x: &[f32], a: &[f32], b: &[f32]) -> (f32, f32) {
    let mut ra = [0.0f32; 8];
    let mut rb = [0.0f32; 8];
    let (xc, a_c, b_c) = (x.chunks_exact(8), a.chunks_exact(8), b.chunks_exact(8));
    let (xr, ar, br) = (xc.remainder(), a_c.remainder(), b_c.remainder());
    for ((xs, as_), bs) in xc.zip(a_c).zip(b_c) {
        for l in 0..8 {
            ra[l] += xs[l] * as_[l];
            rb[l] += xs[l] * bs[l];
        }
    }
    let mut sa: f32 = ra.iter().sum();
    let mut sb: f32 = rb.iter().sum();
    for ((x, a), b) in xr.iter().zip(ar).zip(br) {
        sa += x * a;
        sb += x * b;
    }
    (sa, sb)
}

/// Magnitude CQT with the default parameters.
pub fn cqt(buffer: &AudioBuffer) -> Result<FeatureSequence, FeaturesError> {
    cqt_with(buffer, CqtParams::default())
}

pub fn cqt_with(buffer: &AudioBuffer, params: CqtParams) -> Result<FeatureSequence, FeaturesError> {
    CqtKernel::new(params, buffer.sample_rate)?.apply(buffer)
}

/// Folds CQT bins onto 12 pitch classes (bin 0 = C) and L1-normalizes each
/// frame. Silent frames stay zero.
pub fn chroma(cqt_features: &FeatureSequence) -> Result<FeatureSequence, FeaturesError> {
    cqt_features.expect_kind(FeatureKind::Cqt)?;
    let n = cqt_features.len();
    let mut frames = Array2::<f32>::zeros((n, 12));
    for (t, row) in cqt_features.frames.outer_iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            frames[[t, k % 12]] += v;
        }
        let total: f32 = frames.row(t).sum();
        if total > 1e-9 {
            frames.row_mut(t).mapv_inplace(|v| v / total);
        } else {
            frames.row_mut(t).fill(0.0);
        }
    }
    Ok(FeatureSequence::new(
        FeatureKind::Chroma,
        cqt_features.frame_rate,
        frames,
    ))
}
