//! Long-term average spectra and zero-phase EQ matching.

use serde::{Deserialize, Serialize};

use crate::audio::{StemType, StereoWaveform};
use crate::config::EqConfig;
use crate::error::{Error, Result};
use crate::filter::{design_from_zero_phase_response, forward_backward, savgol_smooth};
use crate::par;
use crate::stft::{fold_frames, hann_symmetric_open, StftParams};

pub const NEPER_PER_DB: f64 = std::f64::consts::LN_10 / 20.0;

/// Frame- and channel-averaged STFT magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageSpectrum {
    pub magnitude: Vec<f64>,
    pub fft_size: usize,
    pub sample_rate: u32,
    pub stem_type: Option<StemType>,
}

impl AverageSpectrum {
    pub fn bins(&self) -> usize {
        self.magnitude.len()
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    fn check_compatible(&self, other: &AverageSpectrum) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.sample_rate,
                got: other.sample_rate,
            });
        }
        if self.fft_size != other.fft_size || self.bins() != other.bins() {
            return Err(Error::DimensionMismatch(format!(
                "spectra of {} and {} points cannot be combined",
                self.fft_size, other.fft_size
            )));
        }
        Ok(())
    }
}

/// Mean magnitude spectrum of one stem, over all frames of both channels.
pub fn stem_mean_spectrum(w: &StereoWaveform, cfg: &EqConfig) -> Result<AverageSpectrum> {
    let params = StftParams::with_hop_fraction(cfg.fft_size, cfg.hop_fraction)?;
    let min_seconds = cfg.fft_size as f64 / w.sample_rate() as f64;
    if w.len() < cfg.fft_size {
        return Err(Error::TooShort {
            what: "average spectrum",
            min_seconds,
            got_seconds: w.duration_seconds(),
        });
    }
    let bins = params.bins();
    let channel_sum = |x: &[f32]| {
        fold_frames(
            x,
            params,
            || vec![0.0f64; bins],
            |acc, spec| {
                for (a, c) in acc.iter_mut().zip(spec) {
                    *a += c.norm();
                }
            },
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        )
    };
    let (l, r) = par::join(|| channel_sum(w.left()), || channel_sum(w.right()));
    let ((l, frames), (r, _)) = (l?, r?);
    let norm = 1.0 / (2 * frames) as f64;
    let magnitude = l
        .iter()
        .zip(&r)
        .map(|(a, b)| ((a + b) * norm).max(cfg.spectrum_floor))
        .collect();
    Ok(AverageSpectrum {
        magnitude,
        fft_size: cfg.fft_size,
        sample_rate: w.sample_rate(),
        stem_type: None,
    })
}

/// Bin-wise mean of per-stem spectra.
pub fn corpus_average_spectrum(
    stem_type: StemType,
    per_stem: &[AverageSpectrum],
) -> Result<AverageSpectrum> {
    let first = per_stem.first().ok_or(Error::NoMeasurableStems(stem_type))?;
    for s in &per_stem[1..] {
        first.check_compatible(s)?;
    }
    let rows: Vec<&[f64]> = per_stem.iter().map(|s| s.magnitude.as_slice()).collect();
    Ok(AverageSpectrum {
        magnitude: par::pairwise_mean_vectors(&rows),
        fft_size: first.fft_size,
        sample_rate: first.sample_rate,
        stem_type: Some(stem_type),
    })
}

/// Matching filter and the curve it was designed from.
#[derive(Debug, Clone)]
pub struct EqDesign {
    /// Smoothed, clamped `ln(target / stem)` per bin. The forward-backward filter
    /// realizes `exp` of this.
    pub log_difference: Vec<f64>,
    pub taps: Vec<f64>,
}

/// Designs the linear-phase FIR that takes `stem` toward `target` when applied
/// forward and backward.
pub fn design_eq_filter(
    stem: &AverageSpectrum,
    target: &AverageSpectrum,
    cfg: &EqConfig,
) -> Result<EqDesign> {
    target.check_compatible(stem)?;
    let limit = cfg.max_gain_db * NEPER_PER_DB;
    let mut diff = Vec::with_capacity(stem.bins());
    for (&f, &g) in target.magnitude.iter().zip(&stem.magnitude) {
        if !(f.is_finite() && g.is_finite()) || f < 0.0 || g < 0.0 {
            return Err(Error::NonFiniteEqCurve);
        }
        let d = f.max(cfg.spectrum_floor).ln() - g.max(cfg.spectrum_floor).ln();
        if !d.is_finite() {
            return Err(Error::NonFiniteEqCurve);
        }
        diff.push(d.clamp(-limit, limit));
    }
    let log_difference: Vec<f64> = savgol_smooth(&diff, cfg.savgol_window, cfg.savgol_order)?
        .into_iter()
        .map(|d| d.clamp(-limit, limit))
        .collect();
    let response: Vec<f64> = log_difference.iter().map(|d| (0.5 * d).exp()).collect();
    let taps =
        design_from_zero_phase_response(&response, cfg.fir_taps, &hann_symmetric_open(cfg.fir_taps))?;
    Ok(EqDesign {
        log_difference,
        taps,
    })
}

/// Filters both channels of `w` with the same zero-phase EQ toward `target`.
pub fn match_eq(w: &StereoWaveform, target: &AverageSpectrum, cfg: &EqConfig) -> Result<StereoWaveform> {
    if w.sample_rate() != target.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: target.sample_rate,
            got: w.sample_rate(),
        });
    }
    let gamma = stem_mean_spectrum(w, cfg)?;
    let design = design_eq_filter(&gamma, target, cfg)?;
    Ok(apply_eq(w, &design.taps))
}

/// Forward-backward filtering of both channels with `taps`.
pub fn apply_eq(w: &StereoWaveform, taps: &[f64]) -> StereoWaveform {
    let pad = taps.len();
    let (l, r) = par::join(
        || forward_backward(w.left(), taps, pad),
        || forward_backward(w.right(), taps, pad),
    );
    w.with_channels(l, r)
}
