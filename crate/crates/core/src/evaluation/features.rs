//! Objective mix features on a shared, smoothed timebase.
//!
//! Frames are full (no padding) windows of `fft_size` samples every `hop` samples.
//! Every per-frame value is then smoothed by a running mean over `running_mean_s`,
//! keeping only complete windows, so all series have the same length.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::audio::StereoWaveform;
use crate::config::FeatureConfig;
use crate::error::{Error, Result};
use crate::levels::linear_to_db_floor;
use crate::loudness::integrated_loudness;
use crate::panning::similarity;
use crate::par;
use crate::stft::{hann, FftPair};

use super::FeatureGroup;

const LEVEL_FLOOR_DB: f64 = -120.0;
/// Frames are analyzed in blocks of this many, in parallel within a block.
const BLOCK_FRAMES: usize = 512;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub values: Vec<f64>,
    pub mean: f64,
}

impl FeatureSeries {
    fn new(values: Vec<f64>) -> Self {
        let mean = if values.is_empty() {
            0.0
        } else {
            par::pairwise_sum(&values) / values.len() as f64
        };
        Self { values, mean }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralFeatures {
    /// Magnitude-weighted mean frequency (Hz).
    pub centroid: FeatureSeries,
    /// Magnitude-weighted standard deviation around the centroid (Hz).
    pub bandwidth: FeatureSeries,
    /// Mean octave-band peak-to-valley ratio (dB).
    pub contrast: FeatureSeries,
    /// Geometric over arithmetic mean of the window-averaged power spectrum.
    pub flatness: FeatureSeries,
    /// Frequency below which the rolloff fraction of the energy lies (Hz).
    pub rolloff: FeatureSeries,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DynamicFeatures {
    /// Frame RMS level (dBFS).
    pub rms_level: FeatureSeries,
    /// Mean absolute deviation of frame RMS from its windowed mean (linear).
    pub dynamic_spread: FeatureSeries,
    /// Frame peak over frame RMS (linear).
    pub crest_factor: FeatureSeries,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixFeatureReport {
    pub sample_rate: u32,
    /// Spacing of the smoothed series (s).
    pub step_s: f64,
    pub spectral: SpectralFeatures,
    /// RMS over bins of the signed panning index.
    pub panning_rms: FeatureSeries,
    pub dynamic: DynamicFeatures,
    /// Integrated loudness; `None` for a silent mix.
    pub loudness_lufs: Option<f64>,
    /// Per-feature MAPE (percent), filled by a comparison against a reference.
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub mape_by_feature: std::collections::BTreeMap<String, f64>,
    /// Average of the per-feature MAPEs within each group (percent).
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub mape_by_group: std::collections::BTreeMap<FeatureGroup, f64>,
}

impl MixFeatureReport {
    /// Every time-series feature with its name and group, in a fixed order.
    pub fn series(&self) -> [(&'static str, FeatureGroup, &FeatureSeries); 9] {
        let s = &self.spectral;
        let d = &self.dynamic;
        [
            ("centroid", FeatureGroup::Spectral, &s.centroid),
            ("bandwidth", FeatureGroup::Spectral, &s.bandwidth),
            ("contrast", FeatureGroup::Spectral, &s.contrast),
            ("flatness", FeatureGroup::Spectral, &s.flatness),
            ("rolloff", FeatureGroup::Spectral, &s.rolloff),
            ("panning_rms", FeatureGroup::Panning, &self.panning_rms),
            ("rms_level", FeatureGroup::Dynamic, &d.rms_level),
            ("dynamic_spread", FeatureGroup::Dynamic, &d.dynamic_spread),
            ("crest_factor", FeatureGroup::Dynamic, &d.crest_factor),
        ]
    }

    pub fn series_len(&self) -> usize {
        self.spectral.centroid.values.len()
    }
}

/// Per-frame values before smoothing.
#[derive(Default)]
struct FrameStats {
    centroid: f64,
    bandwidth: f64,
    rolloff: f64,
    contrast: f64,
    panning: f64,
    rms: f64,
    peak: f64,
    power: Vec<f64>,
}

/// Octave band bin ranges `[lo, hi)` for contrast.
fn contrast_bands(cfg: &FeatureConfig, sr: f64) -> Vec<(usize, usize)> {
    let bins = cfg.fft_size / 2 + 1;
    let hz_per_bin = sr / cfg.fft_size as f64;
    (0..cfg.contrast_bands)
        .map(|b| {
            let lo_hz = cfg.contrast_low_hz * 2f64.powi(b as i32);
            let lo = ((lo_hz / hz_per_bin).round() as usize).min(bins - 1);
            let hi = (((2.0 * lo_hz) / hz_per_bin).round() as usize).clamp(lo + 1, bins);
            (lo, hi)
        })
        .filter(|(lo, hi)| hi > lo)
        .collect()
}

/// Peak-to-valley ratio (dB) of one band: mean of the top and bottom quantiles.
fn band_contrast(power: &[f64], quantile: f64) -> f64 {
    let mut v = power.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((quantile * v.len() as f64).round() as usize).clamp(1, v.len());
    let valley = v[..k].iter().sum::<f64>() / k as f64;
    let peak = v[v.len() - k..].iter().sum::<f64>() / k as f64;
    if peak <= 0.0 {
        return 0.0;
    }
    10.0 * (peak / valley.max(peak * 1e-12)).log10()
}

struct Analyzer<'a> {
    cfg: &'a FeatureConfig,
    fft: FftPair,
    window: Vec<f64>,
    freqs: Vec<f64>,
    bands: Vec<(usize, usize)>,
}

impl Analyzer<'_> {
    fn frame(&self, l: &[f32], r: &[f32], buf: &mut Vec<rustfft::num_complex::Complex<f64>>) -> FrameStats {
        let n = self.cfg.fft_size;
        let mono: Vec<f64> = l.iter().zip(r).map(|(&a, &b)| 0.5 * (a as f64 + b as f64)).collect();
        let rms = (mono.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let peak = mono.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let win = |x: &[f32]| -> Vec<f64> { x.iter().zip(&self.window).map(|(&a, w)| a as f64 * w).collect() };
        let xl = self.fft.forward_real(&win(l), buf);
        let xr = self.fft.forward_real(&win(r), buf);
        let mag: Vec<f64> = xl.iter().zip(&xr).map(|(a, b)| (0.5 * (a + b)).norm()).collect();
        let power: Vec<f64> = mag.iter().map(|m| m * m).collect();

        let mut pan_sq = 0.0;
        for (a, b) in xl.iter().zip(&xr) {
            let (psi, side) = similarity(a.norm(), b.norm());
            pan_sq += ((1.0 - psi) * side as f64).powi(2);
        }
        let panning = (pan_sq / xl.len() as f64).sqrt();

        let total: f64 = mag.iter().sum();
        let mut s = FrameStats { rms, peak, panning, ..Default::default() };
        if total > 0.0 {
            let centroid = mag.iter().zip(&self.freqs).map(|(m, f)| m * f).sum::<f64>() / total;
            let var = mag.iter().zip(&self.freqs).map(|(m, f)| m * (f - centroid).powi(2)).sum::<f64>() / total;
            let energy: f64 = power.iter().sum();
            let mut acc = 0.0;
            let mut rolloff = self.freqs[self.freqs.len() - 1];
            for (p, f) in power.iter().zip(&self.freqs) {
                acc += p;
                if acc >= self.cfg.rolloff_fraction * energy {
                    rolloff = *f;
                    break;
                }
            }
            let contrast = if self.bands.is_empty() {
                0.0
            } else {
                self.bands
                    .iter()
                    .map(|&(lo, hi)| band_contrast(&power[lo..hi], self.cfg.contrast_quantile))
                    .sum::<f64>()
                    / self.bands.len() as f64
            };
            s.centroid = centroid;
            s.bandwidth = var.sqrt();
            s.rolloff = rolloff;
            s.contrast = contrast;
        }
        s.power = power;
        s
    }
}

/// Running mean over complete windows of `w` values.
fn running_mean(x: &[f64], w: usize) -> Vec<f64> {
    if x.len() < w || w == 0 {
        return Vec::new();
    }
    (0..=x.len() - w).map(|i| x[i..i + w].iter().sum::<f64>() / w as f64).collect()
}

fn flatness(power: &[f64]) -> f64 {
    let am = power.iter().sum::<f64>() / power.len() as f64;
    if am <= 0.0 {
        return 0.0;
    }
    let tiny = am * 1e-12;
    let log_gm = power.iter().map(|p| (p + tiny).ln()).sum::<f64>() / power.len() as f64;
    (log_gm.exp() / am).min(1.0)
}

/// Number of frames in one running-mean window for a mix of `frames` frames.
pub fn smoothing_frames(cfg: &FeatureConfig, sample_rate: u32, frames: usize) -> usize {
    let w = (cfg.running_mean_s * sample_rate as f64 / cfg.hop as f64).round() as usize;
    w.clamp(1, frames.max(1))
}

/// Spectral, panning, dynamic and loudness features of a stereo mix.
pub fn mix_features(mix: &StereoWaveform, cfg: &FeatureConfig) -> Result<MixFeatureReport> {
    if !cfg.fft_size.is_power_of_two() || cfg.hop == 0 || cfg.hop > cfg.fft_size {
        return Err(Error::InvalidParameter(format!(
            "feature frames need a power-of-two size and a hop in 1..=size, got {}/{}",
            cfg.fft_size, cfg.hop
        )));
    }
    let sr = mix.sample_rate();
    let min_len = ((cfg.running_mean_s * sr as f64).ceil() as usize).max(cfg.fft_size);
    if mix.len() < min_len {
        return Err(Error::TooShort {
            what: "mix feature analysis",
            min_seconds: min_len as f64 / sr as f64,
            got_seconds: mix.duration_seconds(),
        });
    }
    let frames = (mix.len() - cfg.fft_size) / cfg.hop + 1;
    let w = smoothing_frames(cfg, sr, frames);
    let bins = cfg.fft_size / 2 + 1;
    let az = Analyzer {
        cfg,
        fft: FftPair::new(cfg.fft_size),
        window: hann(cfg.fft_size),
        freqs: (0..bins).map(|k| k as f64 * sr as f64 / cfg.fft_size as f64).collect(),
        bands: contrast_bands(cfg, sr as f64),
    };

    let mut raw: [Vec<f64>; 7] = Default::default();
    let mut flat = Vec::with_capacity(frames + 1 - w);
    // Sliding sum of the last `w` power spectra, for flatness.
    let mut recent: VecDeque<Vec<f64>> = VecDeque::with_capacity(w + 1);
    let mut sum = vec![0.0; bins];
    let (l, r) = (mix.left(), mix.right());
    for block in (0..frames).collect::<Vec<_>>().chunks(BLOCK_FRAMES) {
        let stats = par::map_init(block, Vec::new, |buf, &t| {
            let s = t * cfg.hop;
            az.frame(&l[s..s + cfg.fft_size], &r[s..s + cfg.fft_size], buf)
        });
        for st in stats {
            let row = [st.centroid, st.bandwidth, st.contrast, st.rolloff, st.panning, st.rms, st.peak];
            for (series, v) in raw.iter_mut().zip(row) {
                series.push(v);
            }
            sum.iter_mut().zip(&st.power).for_each(|(a, p)| *a += p);
            recent.push_back(st.power);
            if recent.len() > w {
                let old = recent.pop_front().unwrap_or_default();
                sum.iter_mut().zip(&old).for_each(|(a, p)| *a = (*a - p).max(0.0));
            }
            if recent.len() == w {
                flat.push(flatness(&sum));
            }
        }
    }
    let [centroid, bandwidth, contrast, rolloff, panning, rms, peak] = raw;

    let level: Vec<f64> = rms.iter().map(|&v| linear_to_db_floor(v, LEVEL_FLOOR_DB)).collect();
    let crest: Vec<f64> = rms
        .iter()
        .zip(&peak)
        .map(|(&r, &p)| if r > 0.0 { p / r } else { 0.0 })
        .collect();
    let spread: Vec<f64> = (0..=frames - w)
        .map(|i| {
            let win = &rms[i..i + w];
            let m = win.iter().sum::<f64>() / w as f64;
            win.iter().map(|v| (v - m).abs()).sum::<f64>() / w as f64
        })
        .collect();
    let smooth = |x: &[f64]| FeatureSeries::new(running_mean(x, w));

    Ok(MixFeatureReport {
        sample_rate: sr,
        step_s: cfg.hop as f64 / sr as f64,
        spectral: SpectralFeatures {
            centroid: smooth(&centroid),
            bandwidth: smooth(&bandwidth),
            contrast: smooth(&contrast),
            flatness: FeatureSeries::new(flat),
            rolloff: smooth(&rolloff),
        },
        panning_rms: smooth(&panning),
        dynamic: DynamicFeatures {
            rms_level: smooth(&level),
            dynamic_spread: FeatureSeries::new(spread),
            crest_factor: smooth(&crest),
        },
        loudness_lufs: integrated_loudness(mix)?.integrated_lufs,
        ..Default::default()
    })
}
