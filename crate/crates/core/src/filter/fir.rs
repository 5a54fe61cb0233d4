use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::par;
use crate::stft::FftPair;

/// Kernels at or below this length are convolved directly.
const DIRECT_LIMIT: usize = 32;

/// Full linear convolution, `len = x.len() + h.len() - 1`.
///
/// Long kernels use FFT overlap-add; blocks are transformed in parallel and summed
/// in block order.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    if h.len() <= DIRECT_LIMIT || x.len() <= DIRECT_LIMIT {
        let mut y = vec![0.0; out_len];
        for (i, &xi) in x.iter().enumerate() {
            for (j, &hj) in h.iter().enumerate() {
                y[i + j] += xi * hj;
            }
        }
        return y;
    }

    let n = (2 * h.len()).next_power_of_two().max(4096);
    let block = n - h.len() + 1;
    let fft = FftPair::new(n);
    let mut buf = Vec::new();
    let kernel = fft.forward_real(h, &mut buf);
    let starts: Vec<usize> = (0..x.len()).step_by(block).collect();
    let pieces = par::map_init(&starts, Vec::new, |buf, &s| {
        let end = (s + block).min(x.len());
        let spec: Vec<Complex<f64>> = fft
            .forward_real(&x[s..end], buf)
            .iter()
            .zip(&kernel)
            .map(|(a, b)| a * b)
            .collect();
        fft.inverse_real(&spec, buf)
    });
    let mut y = vec![0.0; out_len];
    for (&s, piece) in starts.iter().zip(&pieces) {
        for (i, v) in piece.iter().enumerate() {
            if s + i < out_len {
                y[s + i] += v;
            }
        }
    }
    y
}

/// Convolution trimmed to `x.len()` and centered on the kernel midpoint.
pub fn convolve_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    let full = convolve(x, h);
    let offset = (h.len().saturating_sub(1)) / 2;
    full.into_iter().skip(offset).take(x.len()).collect()
}

/// Mirror-pads `x` by `pad` samples on each side without repeating the edge sample,
/// bouncing back and forth for signals shorter than the pad.
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n <= 1 {
        let v = x.first().copied().unwrap_or(0.0);
        return vec![v; n + 2 * pad];
    }
    let period = 2 * (n - 1);
    let index = |i: isize| -> usize {
        let m = i.rem_euclid(period as isize) as usize;
        if m < n {
            m
        } else {
            period - m
        }
    };
    (0..n + 2 * pad)
        .map(|i| x[index(i as isize - pad as isize)])
        .collect()
}

/// Zero-phase filtering: `h` forward, then `h` over the time-reversed result.
///
/// The signal is reflect-padded by `pad` samples at both ends before filtering and
/// trimmed back afterwards, so the output has the input's length. The effective
/// magnitude response is `|H|^2`.
pub fn forward_backward(x: &[f32], h: &[f64], pad: usize) -> Vec<f32> {
    if x.is_empty() {
        return Vec::new();
    }
    let xd: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let padded = reflect_pad(&xd, pad);
    let len = padded.len();
    let mut forward: Vec<f64> = convolve(&padded, h);
    forward.truncate(len);
    forward.reverse();
    let mut backward = convolve(&forward, h);
    backward.truncate(len);
    backward.reverse();
    backward[pad..pad + x.len()].iter().map(|&v| v as f32).collect()
}

/// Window-method FIR design from a zero-phase amplitude response.
///
/// `response` holds amplitudes on the `bins = n/2 + 1` grid of an `n`-point DFT.
/// The response is inverse transformed to a zero-phase impulse response, the
/// `taps` samples around time zero are kept (centered, so the filter is linear
/// phase with delay `(taps-1)/2`), and the result is tapered by `window`.
pub fn design_from_zero_phase_response(
    response: &[f64],
    taps: usize,
    window: &[f64],
) -> Result<Vec<f64>> {
    if taps.is_multiple_of(2) || taps == 0 {
        return Err(Error::InvalidParameter(format!(
            "FIR length must be odd, got {taps}"
        )));
    }
    if window.len() != taps {
        return Err(Error::DimensionMismatch(format!(
            "window has {} points, filter has {taps} taps",
            window.len()
        )));
    }
    if response.len() < 2 {
        return Err(Error::InvalidParameter("response needs at least two bins".into()));
    }
    let n = 2 * (response.len() - 1);
    if n < taps {
        return Err(Error::InvalidParameter(format!(
            "a {n}-point response grid cannot define {taps} taps"
        )));
    }
    let fft = FftPair::new(n);
    let half: Vec<Complex<f64>> = response.iter().map(|&a| Complex::new(a, 0.0)).collect();
    let impulse = fft.inverse_real(&half, &mut Vec::new());
    let center = (taps - 1) / 2;
    Ok((0..taps)
        .map(|i| {
            let lag = i as isize - center as isize;
            impulse[lag.rem_euclid(n as isize) as usize] * window[i]
        })
        .collect())
}

/// Hann-windowed sinc low-pass with unit DC gain.
pub fn lowpass_sinc(taps: usize, cutoff_hz: f64, sample_rate: f64) -> Vec<f64> {
    let fc = (cutoff_hz / sample_rate).min(0.5);
    let center = (taps as f64 - 1.0) / 2.0;
    let window = crate::stft::hann_symmetric_open(taps);
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let t = i as f64 - center;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            sinc * window[i]
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}
