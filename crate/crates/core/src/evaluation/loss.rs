//! Stereo-invariant spectral losses on perceptually filtered sum and difference
//! signals.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::audio::StereoWaveform;
use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::filter::{convolve, convolve_same, lowpass_sinc};
use crate::par;
use crate::stft::{hann, FftPair, StftParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Spectral convergence plus log-magnitude L1.
    #[default]
    A,
    /// Magnitude L2 plus log-magnitude L1.
    B,
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::A => "a",
            Self::B => "b",
        })
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            _ => Err(Error::InvalidParameter(format!("unknown loss variant '{s}' (expected a or b)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sc_sum: f64,
    pub l1log_sum: f64,
    pub sc_diff: f64,
    pub l1log_diff: f64,
    pub l2_sum: f64,
    pub l2_diff: f64,
    pub total_a: f64,
    pub total_b: f64,
}

impl LossBreakdown {
    pub fn total(&self, variant: LossVariant) -> f64 {
        match variant {
            LossVariant::A => self.total_a,
            LossVariant::B => self.total_b,
        }
    }
}

/// A-weighting gain in dB, normalized to 0 dB at 1 kHz.
pub fn a_weighting_db(f: f64) -> f64 {
    fn ra(f: f64) -> f64 {
        let f2 = f * f;
        let num = 12_194f64.powi(2) * f2 * f2;
        let den = (f2 + 20.6f64.powi(2))
            * ((f2 + 107.7f64.powi(2)) * (f2 + 737.9f64.powi(2))).sqrt()
            * (f2 + 12_194f64.powi(2));
        num / den
    }
    if f <= 0.0 {
        return f64::NEG_INFINITY;
    }
    20.0 * (ra(f) / ra(1000.0)).log10()
}

/// Linear-phase FIR whose amplitude response is the least-squares fit to the
/// A-weighting magnitude on a uniform grid from DC to Nyquist.
fn a_weighting_fir(taps: usize, sample_rate: f64) -> Result<Vec<f64>> {
    if taps < 3 || taps.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "A-weighting FIR needs an odd tap count >= 3, got {taps}"
        )));
    }
    let m = (taps - 1) / 2;
    let grid = 8 * taps;
    let nyq = sample_rate / 2.0;
    let mut a = DMatrix::<f64>::zeros(grid, m + 1);
    let mut d = DVector::<f64>::zeros(grid);
    for i in 0..grid {
        let f = nyq * i as f64 / (grid - 1) as f64;
        let w = std::f64::consts::PI * f / nyq;
        a[(i, 0)] = 1.0;
        for k in 1..=m {
            a[(i, k)] = 2.0 * (k as f64 * w).cos();
        }
        d[i] = if f > 0.0 { 10f64.powf(a_weighting_db(f) / 20.0) } else { 0.0 };
    }
    let c = a
        .svd(true, true)
        .solve(&d, 1e-12)
        .map_err(|e| Error::InvalidParameter(format!("A-weighting fit failed: {e}")))?;
    let mut h = vec![0.0; taps];
    h[m] = c[0];
    for k in 1..=m {
        h[m - k] = c[k];
        h[m + k] = c[k];
    }
    Ok(h)
}

/// The perceptual pre-filter: A-weighting FIR cascaded with a windowed-sinc low-pass.
/// Both are symmetric with odd length, so the cascade is linear phase and centered.
pub fn perceptual_filter(sample_rate: u32, cfg: &LossConfig) -> Result<Vec<f64>> {
    if cfg.lowpass_taps.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "low-pass needs an odd tap count, got {}",
            cfg.lowpass_taps
        )));
    }
    let sr = sample_rate as f64;
    let aw = a_weighting_fir(cfg.a_weighting_taps, sr)?;
    let lp = lowpass_sinc(cfg.lowpass_taps, cfg.lowpass_hz, sr);
    Ok(convolve(&aw, &lp))
}

/// Spectral convergence, mean log-magnitude L1 and mean squared magnitude error of
/// `estimate` against `reference` (flattened magnitude spectrograms).
pub fn spectral_terms(reference: &[f64], estimate: &[f64], eps: f64) -> (f64, f64, f64) {
    let mut acc = Terms::default();
    acc.add(reference, estimate, eps);
    acc.finish()
}

#[derive(Debug, Clone, Copy, Default)]
struct Terms {
    err_sq: f64,
    ref_sq: f64,
    est_sq: f64,
    log_abs: f64,
    count: usize,
}

impl Terms {
    fn add(&mut self, reference: &[f64], estimate: &[f64], eps: f64) {
        for (&y, &yh) in reference.iter().zip(estimate) {
            self.err_sq += (y - yh) * (y - yh);
            self.ref_sq += y * y;
            self.est_sq += yh * yh;
            self.log_abs += ((y + eps).ln() - (yh + eps).ln()).abs();
        }
        self.count += reference.len().min(estimate.len());
    }

    fn merge(self, o: Terms) -> Terms {
        Terms {
            err_sq: self.err_sq + o.err_sq,
            ref_sq: self.ref_sq + o.ref_sq,
            est_sq: self.est_sq + o.est_sq,
            log_abs: self.log_abs + o.log_abs,
            count: self.count + o.count,
        }
    }

    /// A silent reference has no convergence scale: the term is 0 when the estimate
    /// is silent too and 1 (total mismatch) otherwise.
    fn sc(&self) -> f64 {
        if self.ref_sq > 0.0 {
            (self.err_sq / self.ref_sq).sqrt()
        } else if self.est_sq > 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn finish(&self) -> (f64, f64, f64) {
        let n = self.count.max(1) as f64;
        (self.sc(), self.log_abs / n, self.err_sq / n)
    }
}

/// Filtered sum and difference signals.
fn sum_diff(w: &StereoWaveform, rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let to64 = |x: &[f32]| -> Vec<f64> { x.iter().map(|&v| v as f64).collect() };
    let (l, r) = par::join(|| convolve_same(&to64(w.left()), rho), || convolve_same(&to64(w.right()), rho));
    let sum = l.iter().zip(&r).map(|(a, b)| a + b).collect();
    let diff = l.iter().zip(&r).map(|(a, b)| a - b).collect();
    (sum, diff)
}

/// Magnitude of frame `t` of a centered, zero-padded, Hann-windowed STFT.
fn frame_magnitude(x: &[f64], params: StftParams, window: &[f64], fft: &FftPair, t: usize, buf: &mut Vec<rustfft::num_complex::Complex<f64>>) -> Vec<f64> {
    let start = (t * params.hop) as isize - (params.fft_size / 2) as isize;
    let frame: Vec<f64> = (0..params.fft_size)
        .map(|n| {
            let i = start + n as isize;
            if i >= 0 && (i as usize) < x.len() {
                x[i as usize] * window[n]
            } else {
                0.0
            }
        })
        .collect();
    fft.forward_real(&frame, buf).iter().map(|c| c.norm()).collect()
}

/// Accumulates the loss terms of one signal pair frame by frame.
fn pair_terms(y: &[f64], y_hat: &[f64], params: StftParams, eps: f64) -> Terms {
    let fft = FftPair::new(params.fft_size);
    let window = hann(params.fft_size);
    let frames: Vec<usize> = (0..params.frame_count(y.len())).collect();
    par::map_init(&frames, Vec::new, |buf, &t| {
        let a = frame_magnitude(y, params, &window, &fft, t, buf);
        let b = frame_magnitude(y_hat, params, &window, &fft, t, buf);
        let mut terms = Terms::default();
        terms.add(&a, &b, eps);
        terms
    })
    .into_iter()
    .fold(Terms::default(), Terms::merge)
}

/// Loss of the estimate `y_hat` against the target `y`.
///
/// Both variants' terms are always computed. With variant `a` a silent target is an
/// error, since spectral convergence has no scale.
pub fn stereo_invariant_loss(
    y: &StereoWaveform,
    y_hat: &StereoWaveform,
    variant: LossVariant,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if y.len() != y_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "target has {} samples, estimate {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.sample_rate() != y_hat.sample_rate() {
        return Err(Error::SampleRateMismatch {
            expected: y.sample_rate(),
            got: y_hat.sample_rate(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptySignal);
    }
    let params = StftParams::with_hop_fraction(cfg.fft_size, cfg.hop_fraction)?;
    let rho = perceptual_filter(y.sample_rate(), cfg)?;
    let ((ys, yd), (hs, hd)) = par::join(|| sum_diff(y, &rho), || sum_diff(y_hat, &rho));
    let (sum, diff) = par::join(
        || pair_terms(&ys, &hs, params, cfg.log_epsilon),
        || pair_terms(&yd, &hd, params, cfg.log_epsilon),
    );
    if variant == LossVariant::A && sum.ref_sq == 0.0 && diff.ref_sq == 0.0 {
        return Err(Error::SilentReference);
    }
    let (sc_sum, l1log_sum, l2_sum) = sum.finish();
    let (sc_diff, l1log_diff, l2_diff) = diff.finish();
    Ok(LossBreakdown {
        sc_sum,
        l1log_sum,
        sc_diff,
        l1log_diff,
        l2_sum,
        l2_diff,
        total_a: sc_sum + l1log_sum + sc_diff + l1log_diff,
        total_b: l2_sum + l1log_sum + l2_diff + l1log_diff,
    })
}
