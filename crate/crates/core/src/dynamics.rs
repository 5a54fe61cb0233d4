//! Onset-peak statistics, a feed-forward compressor and grid-search DRC
//! normalization.

use serde::{Deserialize, Serialize};

use crate::audio::{StemType, StereoWaveform};
use crate::config::{DynamicsConfig, OnsetConfig};
use crate::error::{Error, Result};
use crate::levels::{linear_to_db, linear_to_db_floor, DEFAULT_DB_FLOOR};
use crate::par;
use crate::stft::{fold_stereo_frames, StftParams};

/// Triangular mel filterbank (HTK mel scale, 0 Hz to Nyquist), one row per band.
pub fn mel_filterbank(bands: usize, fft_size: usize, sample_rate: f64) -> Vec<Vec<(usize, f64)>> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate / fft_size as f64;
    let bins = fft_size / 2 + 1;
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect()
        })
        .collect()
}

/// High-frequency-content novelty per frame: `sum_b b * E_b` over 1-based mel bands
/// of the channel-mean power spectrum.
pub fn hfc_novelty(w: &StereoWaveform, mel_bands: usize, cfg: &OnsetConfig) -> Result<Vec<f64>> {
    let params = StftParams::new(cfg.fft_size, cfg.hop)?;
    let bank = mel_filterbank(mel_bands, cfg.fft_size, w.sample_rate() as f64);
    let (chunks, _) = fold_stereo_frames(
        w.left(),
        w.right(),
        params,
        Vec::new,
        |acc: &mut Vec<f64>, l, r| {
            let power: Vec<f64> = l
                .iter()
                .zip(r)
                .map(|(a, b)| 0.5 * (a.norm_sqr() + b.norm_sqr()))
                .collect();
            let hfc = bank
                .iter()
                .enumerate()
                .map(|(b, row)| {
                    let e: f64 = row.iter().map(|&(k, wt)| wt * power[k]).sum();
                    (b + 1) as f64 * e
                })
                .sum();
            acc.push(hfc);
        },
        |mut a, b| {
            a.extend(b);
            a
        },
    )?;
    Ok(chunks)
}

fn running_median(x: &[f64], half: usize) -> Vec<f64> {
    let mut window = Vec::with_capacity(2 * half + 1);
    (0..x.len())
        .map(|t| {
            window.clear();
            window.extend_from_slice(&x[t.saturating_sub(half)..(t + half + 1).min(x.len())]);
            window.sort_by(f64::total_cmp);
            let n = window.len();
            if n % 2 == 1 {
                window[n / 2]
            } else {
                0.5 * (window[n / 2 - 1] + window[n / 2])
            }
        })
        .collect()
}

/// Onset times in seconds.
///
/// Novelty is taken in dB and floored `floor_db` below its maximum. A frame is an
/// onset when it is a local maximum, exceeds the running median (over
/// `median_window_s`) by `threshold_offset_db`, and is at least `min_inter_onset_ms`
/// after the previous onset.
pub fn detect_onsets(w: &StereoWaveform, mel_bands: usize, cfg: &OnsetConfig) -> Result<Vec<f64>> {
    let hfc = hfc_novelty(w, mel_bands, cfg)?;
    let max = hfc.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    let floor = 10.0 * max.log10() - cfg.floor_db;
    let nov: Vec<f64> = hfc
        .iter()
        .map(|&v| if v > 0.0 { (10.0 * v.log10()).max(floor) } else { floor })
        .collect();
    let rate = w.sample_rate() as f64;
    let frame_s = cfg.hop as f64 / rate;
    let half = ((cfg.median_window_s / frame_s) / 2.0).round() as usize;
    let median = running_median(&nov, half);
    let min_gap = cfg.min_inter_onset_ms / 1000.0;

    let mut onsets: Vec<f64> = Vec::new();
    for t in 0..nov.len() {
        let left_ok = t == 0 || nov[t] >= nov[t - 1];
        let right_ok = t + 1 == nov.len() || nov[t] > nov[t + 1];
        if !(left_ok && right_ok) || nov[t] <= floor || nov[t] < median[t] + cfg.threshold_offset_db {
            continue;
        }
        let time = t as f64 * frame_s;
        if onsets.last().is_some_and(|&p| time - p < min_gap) {
            continue;
        }
        onsets.push(time);
    }
    Ok(onsets)
}

/// Percentile with linear interpolation between order statistics (`p` in 0..=100).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// Peak levels at detected onsets and the summary of the loudest ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetPeakStats {
    pub onset_times: Vec<f64>,
    pub peak_levels: Vec<f64>,
    /// Mean of the peaks at or above the configured percentile (dB).
    pub mu: f64,
    /// Population standard deviation of those peaks (dB).
    pub sigma: f64,
}

/// Peak level after each onset. `None` means no transients.
///
/// The search window for an onset runs from one analysis hop before it (the frame
/// that detects a transient can be centered just after it) to the earlier of the
/// next onset and `peak_window_ms` later. Levels are the linked max of both channels.
pub fn onset_peak_stats(
    w: &StereoWaveform,
    onsets: &[f64],
    cfg: &OnsetConfig,
) -> Option<OnsetPeakStats> {
    if onsets.is_empty() {
        return None;
    }
    let rate = w.sample_rate() as f64;
    let to_sample = |t: f64| ((t * rate).round().max(0.0) as usize).min(w.len());
    let cap = cfg.peak_window_ms / 1000.0;
    let peak_levels: Vec<f64> = onsets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let end_t = onsets.get(i + 1).map_or(t + cap, |&n| n.min(t + cap));
            let start = to_sample(t).saturating_sub(cfg.hop);
            let end = to_sample(end_t).max(start + 1).min(w.len());
            let peak = w.left()[start..end]
                .iter()
                .chain(&w.right()[start..end])
                .fold(0.0f32, |m, v| m.max(v.abs()));
            linear_to_db_floor(peak as f64, DEFAULT_DB_FLOOR)
        })
        .collect();
    let cut = percentile(&peak_levels, cfg.keep_above_percentile);
    let kept: Vec<f64> = peak_levels.iter().copied().filter(|&p| p >= cut).collect();
    let mu = kept.iter().sum::<f64>() / kept.len() as f64;
    let sigma = (kept.iter().map(|p| (p - mu).powi(2)).sum::<f64>() / kept.len() as f64).sqrt();
    Some(OnsetPeakStats {
        onset_times: onsets.to_vec(),
        peak_levels,
        mu,
        sigma,
    })
}

/// Onset detection followed by peak statistics.
pub fn measure_peaks(
    w: &StereoWaveform,
    mel_bands: usize,
    cfg: &OnsetConfig,
) -> Result<Option<OnsetPeakStats>> {
    let onsets = detect_onsets(w, mel_bands, cfg)?;
    Ok(onset_peak_stats(w, &onsets, cfg))
}

/// Corpus peak statistics: mean of per-stem `mu` and mean of per-stem `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakTarget {
    pub mu: f64,
    pub sigma: f64,
}

impl PeakTarget {
    pub fn bound(&self) -> f64 {
        self.mu + self.sigma
    }
}

pub fn corpus_peak_stats(stem_type: StemType, stats: &[OnsetPeakStats]) -> Result<PeakTarget> {
    if stats.is_empty() {
        return Err(Error::NoMeasurableStems(stem_type));
    }
    let mus: Vec<f64> = stats.iter().map(|s| s.mu).collect();
    let sigmas: Vec<f64> = stats.iter().map(|s| s.sigma).collect();
    let n = stats.len() as f64;
    Ok(PeakTarget {
        mu: par::pairwise_sum(&mus) / n,
        sigma: par::pairwise_sum(&sigmas) / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressorSettings {
    pub threshold_db: f64,
    pub ratio: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
    /// Soft-knee width; 0 is a hard knee.
    #[serde(default)]
    pub knee_db: f64,
}

impl CompressorSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio >= 1.0) || !(self.attack_ms > 0.0) || !(self.release_ms > 0.0) || self.knee_db < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "compressor needs ratio >= 1, attack and release > 0 and knee >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Static gain in dB for detector level `level_db`.
    #[inline]
    pub fn static_gain_db(&self, level_db: f64) -> f64 {
        let over = level_db - self.threshold_db;
        let slope = 1.0 / self.ratio - 1.0;
        let w = self.knee_db;
        if w > 0.0 && 2.0 * over.abs() <= w {
            slope * (over + w / 2.0).powi(2) / (2.0 * w)
        } else {
            (slope * over).min(0.0)
        }
    }
}

/// Linked detector: max of both channels' magnitudes, in dB.
fn detector_levels(w: &StereoWaveform) -> Vec<f64> {
    w.left()
        .iter()
        .zip(w.right())
        .map(|(l, r)| linear_to_db_floor(l.abs().max(r.abs()) as f64, DEFAULT_DB_FLOOR))
        .collect()
}

fn compress_with_levels(w: &StereoWaveform, levels: &[f64], c: &CompressorSettings) -> StereoWaveform {
    let rate = w.sample_rate() as f64;
    let coef = |ms: f64| (-1.0 / (ms / 1000.0 * rate)).exp();
    let (att, rel) = (coef(c.attack_ms), coef(c.release_ms));
    let mut g = 0.0f64;
    let gains: Vec<f32> = levels
        .iter()
        .map(|&lvl| {
            let target = c.static_gain_db(lvl);
            let a = if target < g { att } else { rel };
            g = a * g + (1.0 - a) * target;
            10f64.powf(g / 20.0) as f32
        })
        .collect();
    let apply = |x: &[f32]| x.iter().zip(&gains).map(|(v, g)| v * g).collect();
    w.with_channels(apply(w.left()), apply(w.right()))
}

/// Feed-forward compressor with a linked peak detector and dB-domain
/// attack/release smoothing of the gain.
pub fn compress(w: &StereoWaveform, c: &CompressorSettings) -> Result<StereoWaveform> {
    c.validate()?;
    if c.ratio == 1.0 {
        return Ok(w.clone());
    }
    let peak_db = linear_to_db(w.peak() as f64);
    if c.knee_db == 0.0 && peak_db <= c.threshold_db {
        return Ok(w.clone());
    }
    Ok(compress_with_levels(w, &detector_levels(w), c))
}

/// Result of [`normalize_drc`].
#[derive(Debug, Clone)]
pub struct DrcOutcome {
    pub audio: StereoWaveform,
    /// Applied setting, `None` for passthrough.
    pub settings: Option<CompressorSettings>,
    pub mu_before: Option<f64>,
    pub mu_after: Option<f64>,
    /// Whether the result meets `mu <= P_mu + P_sigma`.
    pub satisfied: bool,
}

/// Compresses `w` with the mildest grid setting that brings its onset-peak mean to
/// or below `target.mu + target.sigma`.
///
/// Thresholds are the outer loop and ratios the inner loop, both mildest first.
/// Stems without transients, or already within the bound, pass through.
pub fn normalize_drc(
    w: &StereoWaveform,
    stem: StemType,
    target: PeakTarget,
    cfg: &DynamicsConfig,
) -> Result<DrcOutcome> {
    let mel = *cfg.mel_bands.get(stem);
    let passthrough = |mu: Option<f64>, satisfied| DrcOutcome {
        audio: w.clone(),
        settings: None,
        mu_before: mu,
        mu_after: mu,
        satisfied,
    };
    let Some(before) = measure_peaks(w, mel, &cfg.onset)? else {
        return Ok(passthrough(None, true));
    };
    let bound = target.bound();
    if before.mu <= bound {
        return Ok(passthrough(Some(before.mu), true));
    }
    let timing = cfg.timing.get(stem);
    let candidates: Vec<CompressorSettings> = cfg
        .threshold_db
        .values()
        .into_iter()
        .flat_map(|t| {
            cfg.ratio.values().into_iter().map(move |r| CompressorSettings {
                threshold_db: t,
                ratio: r,
                attack_ms: timing.attack_ms,
                release_ms: timing.release_ms,
                knee_db: 0.0,
            })
        })
        .collect();
    let levels = detector_levels(w);
    let evaluate = |c: &CompressorSettings| -> Result<(StereoWaveform, Option<f64>)> {
        c.validate()?;
        let y = compress_with_levels(w, &levels, c);
        let mu = measure_peaks(&y, mel, &cfg.onset)?.map(|s| s.mu);
        Ok((y, mu))
    };
    let hit = par::find_map_first(&candidates, |c| match evaluate(c) {
        Ok((y, Some(mu))) if mu <= bound => Some(Ok((*c, y, mu))),
        Ok(_) => None,
        Err(e) => Some(Err(e)),
    });
    if let Some(found) = hit {
        let (c, y, mu) = found?;
        return Ok(DrcOutcome {
            audio: y,
            settings: Some(c),
            mu_before: Some(before.mu),
            mu_after: Some(mu),
            satisfied: true,
        });
    }
    let Some(strongest) = candidates.last() else {
        return Ok(passthrough(Some(before.mu), false));
    };
    let (y, mu) = evaluate(strongest)?;
    log::warn!(
        "{stem}: no compressor setting reaches peak mean {bound:.2} dB (from {:.2} dB); using threshold {} dB, ratio {}",
        before.mu,
        strongest.threshold_db,
        strongest.ratio
    );
    match mu {
        Some(m) if m <= before.mu => Ok(DrcOutcome {
            audio: y,
            settings: Some(*strongest),
            mu_before: Some(before.mu),
            mu_after: Some(m),
            satisfied: false,
        }),
        _ => Ok(passthrough(Some(before.mu), false)),
    }
}
