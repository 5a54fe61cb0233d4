//! Short-time Fourier transform with center padding and weighted overlap-add inversion.
//!
//! Frame `t` is centered at sample `t * hop`; the signal is zero-padded by `fft_size / 2`
//! on both sides. Synthesis uses the analysis window again and divides by the summed
//! squared window, so any hop with a nonzero window envelope reconstructs exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::par;

/// Periodic Hann window, `0.5 - 0.5 cos(2πn/N)`.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Symmetric Hann window without the zero end points, for FIR design.
pub fn hann_symmetric_open(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * (n + 1) as f64 / (len + 1) as f64).cos())
        .collect()
}

/// Forward and inverse real FFT plans of one size.
#[derive(Clone)]
pub struct FftPair {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// Real input of length `size` to the non-negative half spectrum.
    pub fn forward_real(&self, input: &[f64], buf: &mut Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        buf.clear();
        buf.extend(input.iter().map(|&x| Complex::new(x, 0.0)));
        buf.resize(self.size, Complex::new(0.0, 0.0));
        self.forward.process(buf);
        buf[..self.bins()].to_vec()
    }

    /// Half spectrum to real output of length `size`, normalized by `1/size`.
    pub fn inverse_real(&self, half: &[Complex<f64>], buf: &mut Vec<Complex<f64>>) -> Vec<f64> {
        let n = self.size;
        buf.clear();
        buf.resize(n, Complex::new(0.0, 0.0));
        buf[..half.len()].copy_from_slice(half);
        for k in 1..n.div_ceil(2) {
            buf[n - k] = half[k].conj();
        }
        // DC and Nyquist of a real signal are real.
        buf[0].im = 0.0;
        if n.is_multiple_of(2) {
            buf[n / 2].im = 0.0;
        }
        self.inverse.process(buf);
        let scale = 1.0 / n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }
}

/// Frame geometry shared by analysis and synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
}

impl StftParams {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        if fft_size < 2 || !fft_size.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "fft_size must be a power of two >= 2, got {fft_size}"
            )));
        }
        if hop == 0 || hop > fft_size {
            return Err(Error::InvalidParameter(format!(
                "hop must be in 1..={fft_size}, got {hop}"
            )));
        }
        Ok(Self { fft_size, hop })
    }

    /// Hop as a fraction of the FFT size, e.g. `0.25`.
    pub fn with_hop_fraction(fft_size: usize, fraction: f64) -> Result<Self> {
        let hop = (fft_size as f64 * fraction).round() as usize;
        Self::new(fft_size, hop)
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame_count(&self, signal_len: usize) -> usize {
        signal_len.div_ceil(self.hop) + 1
    }

    fn half(&self) -> usize {
        self.fft_size / 2
    }
}

/// Windows frame `t` of `x` (centered at `t * hop`, zero outside the signal).
fn windowed_frame(x: &[f32], params: StftParams, window: &[f64], t: usize) -> Vec<f64> {
    let start = (t * params.hop) as isize - params.half() as isize;
    (0..params.fft_size)
        .map(|n| {
            let idx = start + n as isize;
            if idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize] as f64 * window[n]
            } else {
                0.0
            }
        })
        .collect()
}

/// Computes the complex half spectra of all frames.
pub fn stft_complex(x: &[f32], params: StftParams) -> Result<Vec<Vec<Complex<f64>>>> {
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    let fft = FftPair::new(params.fft_size);
    let window = hann(params.fft_size);
    let frames: Vec<usize> = (0..params.frame_count(x.len())).collect();
    Ok(par::map_init(
        &frames,
        Vec::new,
        |buf, &t| fft.forward_real(&windowed_frame(x, params, &window, t), buf),
    ))
}

/// Folds `f` over every frame's half spectrum without materializing the spectrogram.
///
/// Frames are split into fixed-size chunks that fold independently and merge in frame
/// order, so the result does not depend on the number of worker threads.
pub fn fold_frames<T, I, F, M>(x: &[f32], params: StftParams, init: I, f: F, merge: M) -> Result<(T, usize)>
where
    T: Send,
    I: Fn() -> T + Send + Sync,
    F: Fn(&mut T, &[Complex<f64>]) + Send + Sync,
    M: Fn(T, T) -> T,
{
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    const CHUNK: usize = 16;
    let fft = FftPair::new(params.fft_size);
    let window = hann(params.fft_size);
    let count = params.frame_count(x.len());
    let starts: Vec<usize> = (0..count).step_by(CHUNK).collect();
    let partials = par::map_init(&starts, Vec::new, |buf, &s| {
        let mut acc = init();
        for t in s..(s + CHUNK).min(count) {
            let spec = fft.forward_real(&windowed_frame(x, params, &window, t), buf);
            f(&mut acc, &spec);
        }
        acc
    });
    let mut iter = partials.into_iter();
    let first = iter.next().unwrap_or_else(&init);
    Ok((iter.fold(first, merge), count))
}

/// Magnitude/phase spectrogram of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Row-major `frames x bins`.
    magnitudes: Vec<f64>,
    phases: Vec<f64>,
    frames: usize,
    params: StftParams,
    sample_rate: u32,
    signal_len: usize,
}

impl Spectrogram {
    pub fn from_complex(
        frames: &[Vec<Complex<f64>>],
        params: StftParams,
        sample_rate: u32,
        signal_len: usize,
    ) -> Result<Self> {
        let bins = params.bins();
        if frames.iter().any(|f| f.len() != bins) {
            return Err(Error::DimensionMismatch(format!(
                "every frame must have {bins} bins"
            )));
        }
        let mut magnitudes = Vec::with_capacity(frames.len() * bins);
        let mut phases = Vec::with_capacity(frames.len() * bins);
        for c in frames.iter().flatten() {
            magnitudes.push(c.norm());
            phases.push(c.arg());
        }
        Ok(Self {
            magnitudes,
            phases,
            frames: frames.len(),
            params,
            sample_rate,
            signal_len,
        })
    }

    pub fn from_parts(
        magnitudes: Vec<f64>,
        phases: Vec<f64>,
        params: StftParams,
        sample_rate: u32,
        signal_len: usize,
    ) -> Result<Self> {
        let bins = params.bins();
        if magnitudes.len() != phases.len() || !magnitudes.len().is_multiple_of(bins) {
            return Err(Error::DimensionMismatch(format!(
                "magnitude/phase buffers ({}, {}) are not a multiple of {bins} bins",
                magnitudes.len(),
                phases.len()
            )));
        }
        if magnitudes.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::InvalidParameter(
                "magnitudes must be non-negative".into(),
            ));
        }
        let frames = magnitudes.len() / bins;
        if frames != params.frame_count(signal_len) {
            return Err(Error::DimensionMismatch(format!(
                "{frames} frames cannot describe a {signal_len}-sample signal"
            )));
        }
        Ok(Self {
            magnitudes,
            phases,
            frames,
            params,
            sample_rate,
            signal_len,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.params.bins()
    }

    pub fn params(&self) -> StftParams {
        self.params
    }

    pub fn fft_size(&self) -> usize {
        self.params.fft_size
    }

    pub fn hop(&self) -> usize {
        self.params.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn magnitude_frame(&self, t: usize) -> &[f64] {
        let b = self.bins();
        &self.magnitudes[t * b..(t + 1) * b]
    }

    pub fn phase_frame(&self, t: usize) -> &[f64] {
        let b = self.bins();
        &self.phases[t * b..(t + 1) * b]
    }

    pub fn magnitudes_mut(&mut self) -> &mut [f64] {
        &mut self.magnitudes
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.params.fft_size as f64
    }

    fn complex_frame(&self, t: usize) -> Vec<Complex<f64>> {
        self.magnitude_frame(t)
            .iter()
            .zip(self.phase_frame(t))
            .map(|(&m, &p)| Complex::from_polar(m, p))
            .collect()
    }
}

/// Like [`fold_frames`] for two equally long channels, frame pairs side by side.
pub fn fold_stereo_frames<T, I, F, M>(
    left: &[f32],
    right: &[f32],
    params: StftParams,
    init: I,
    f: F,
    merge: M,
) -> Result<(T, usize)>
where
    T: Send,
    I: Fn() -> T + Send + Sync,
    F: Fn(&mut T, &[Complex<f64>], &[Complex<f64>]) + Send + Sync,
    M: Fn(T, T) -> T,
{
    if left.is_empty() {
        return Err(Error::EmptySignal);
    }
    if left.len() != right.len() {
        return Err(Error::DimensionMismatch("channel lengths differ".into()));
    }
    const CHUNK: usize = 16;
    let fft = FftPair::new(params.fft_size);
    let window = hann(params.fft_size);
    let count = params.frame_count(left.len());
    let starts: Vec<usize> = (0..count).step_by(CHUNK).collect();
    let partials = par::map_init(&starts, Vec::new, |buf, &s| {
        let mut acc = init();
        for t in s..(s + CHUNK).min(count) {
            let l = fft.forward_real(&windowed_frame(left, params, &window, t), buf);
            let r = fft.forward_real(&windowed_frame(right, params, &window, t), buf);
            f(&mut acc, &l, &r);
        }
        acc
    });
    let mut iter = partials.into_iter();
    let first = iter.next().unwrap_or_else(&init);
    Ok((iter.fold(first, merge), count))
}

/// Summed squared synthesis window at padded position `j`.
fn window_power(j: usize, params: StftParams, count: usize, window: &[f64]) -> f64 {
    let first = (j + 1).saturating_sub(params.fft_size).div_ceil(params.hop);
    let last = (j / params.hop).min(count - 1);
    (first..=last)
        .map(|t| {
            let w = window[j - t * params.hop];
            w * w
        })
        .sum()
}

/// Modifies every stereo frame pair in place with `f(frame_index, left, right)` and
/// resynthesizes both channels by weighted overlap-add.
///
/// Frames are processed in independent chunks; the whole spectrogram is never held.
pub fn process_stereo_frames<F>(
    left: &[f32],
    right: &[f32],
    params: StftParams,
    f: F,
) -> Result<(Vec<f32>, Vec<f32>)>
where
    F: Fn(usize, &mut [Complex<f64>], &mut [Complex<f64>]) + Send + Sync,
{
    if left.is_empty() {
        return Err(Error::EmptySignal);
    }
    if left.len() != right.len() {
        return Err(Error::DimensionMismatch("channel lengths differ".into()));
    }
    const CHUNK: usize = 64;
    let n = params.fft_size;
    let fft = FftPair::new(n);
    let window = hann(n);
    let count = params.frame_count(left.len());
    let starts: Vec<usize> = (0..count).step_by(CHUNK).collect();
    let pieces = par::map_init(&starts, Vec::new, |buf, &s| {
        let end = (s + CHUNK).min(count);
        let span = (end - 1 - s) * params.hop + n;
        let mut acc_l = vec![0.0f64; span];
        let mut acc_r = vec![0.0f64; span];
        for t in s..end {
            let mut l = fft.forward_real(&windowed_frame(left, params, &window, t), buf);
            let mut r = fft.forward_real(&windowed_frame(right, params, &window, t), buf);
            f(t, &mut l, &mut r);
            let off = (t - s) * params.hop;
            for (acc, spec) in [(&mut acc_l, &l), (&mut acc_r, &r)] {
                let frame = fft.inverse_real(spec, buf);
                for i in 0..n {
                    acc[off + i] += frame[i] * window[i];
                }
            }
        }
        (acc_l, acc_r)
    });
    let half = params.half();
    let total = (count - 1) * params.hop + n;
    let mut acc_l = vec![0.0f64; total];
    let mut acc_r = vec![0.0f64; total];
    for (&s, (pl, pr)) in starts.iter().zip(&pieces) {
        let off = s * params.hop;
        for i in 0..pl.len() {
            acc_l[off + i] += pl[i];
            acc_r[off + i] += pr[i];
        }
    }
    let finish = |acc: &[f64]| -> Vec<f32> {
        (0..left.len())
            .map(|i| {
                let j = i + half;
                let norm = window_power(j, params, count, &window);
                if norm > 1e-12 {
                    (acc[j] / norm) as f32
                } else {
                    0.0
                }
            })
            .collect()
    };
    Ok(par::join(|| finish(&acc_l), || finish(&acc_r)))
}

/// Hann-windowed STFT of a single channel.
pub fn stft(x: &[f32], params: StftParams, sample_rate: u32) -> Result<Spectrogram> {
    let frames = stft_complex(x, params)?;
    Spectrogram::from_complex(&frames, params, sample_rate, x.len())
}

/// Inverse of [`stft`] by weighted overlap-add.
pub fn istft(s: &Spectrogram) -> Result<Vec<f32>> {
    let frames: Vec<Vec<Complex<f64>>> = (0..s.frames()).map(|t| s.complex_frame(t)).collect();
    istft_complex(&frames, s.params(), s.signal_len())
}

/// Overlap-adds complex half-spectrum frames back into a signal of `signal_len` samples.
pub fn istft_complex(
    frames: &[Vec<Complex<f64>>],
    params: StftParams,
    signal_len: usize,
) -> Result<Vec<f32>> {
    if frames.len() != params.frame_count(signal_len) {
        return Err(Error::DimensionMismatch(format!(
            "{} frames cannot describe a {signal_len}-sample signal",
            frames.len()
        )));
    }
    if frames.iter().any(|f| f.len() != params.bins()) {
        return Err(Error::DimensionMismatch(format!(
            "every frame must have {} bins",
            params.bins()
        )));
    }
    let fft = FftPair::new(params.fft_size);
    let window = hann(params.fft_size);
    let time_frames = par::map_init(frames, Vec::new, |buf, f| fft.inverse_real(f, buf));

    let half = params.half();
    let padded_len = signal_len + params.fft_size + frames.len() * params.hop;
    let mut acc = vec![0.0f64; padded_len];
    let mut norm = vec![0.0f64; padded_len];
    for (t, frame) in time_frames.iter().enumerate() {
        let start = t * params.hop;
        for n in 0..params.fft_size {
            acc[start + n] += frame[n] * window[n];
            norm[start + n] += window[n] * window[n];
        }
    }
    Ok((0..signal_len)
        .map(|i| {
            let j = i + half;
            if norm[j] > 1e-12 {
                (acc[j] / norm[j]) as f32
            } else {
                0.0
            }
        })
        .collect())
}
