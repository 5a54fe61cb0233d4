//! Preprocessing parameters. `PreprocessConfig::default()` reproduces the reference
//! setup; every field can be overridden from a config file.

use serde::{Deserialize, Serialize};

use crate::audio::StemType;

/// One value per stem type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemTable<T> {
    pub vocals: T,
    pub drums: T,
    pub bass: T,
    pub other: T,
}

impl<T: Clone> StemTable<T> {
    pub fn uniform(v: T) -> Self {
        Self {
            vocals: v.clone(),
            drums: v.clone(),
            bass: v.clone(),
            other: v,
        }
    }
}

impl<T> StemTable<T> {
    pub fn get(&self, stem: StemType) -> &T {
        match stem {
            StemType::Vocals => &self.vocals,
            StemType::Drums => &self.drums,
            StemType::Bass => &self.bass,
            StemType::Other => &self.other,
        }
    }
}

/// Inclusive numeric range `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoudnessConfig {
    /// Level every stem is brought to before EQ analysis and matching.
    pub pre_eq_target_lufs: f64,
    /// Largest boost `normalize_loudness` will apply.
    pub max_gain_db: f64,
}

impl Default for LoudnessConfig {
    fn default() -> Self {
        Self {
            pre_eq_target_lufs: -30.0,
            max_gain_db: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EqConfig {
    pub fft_size: usize,
    pub hop_fraction: f64,
    pub fir_taps: usize,
    /// Savitzky-Golay window (bins) applied to the log difference curve.
    pub savgol_window: usize,
    pub savgol_order: usize,
    /// Difference curve is clamped to ±this many dB before filter design.
    pub max_gain_db: f64,
    /// Linear magnitude floor of average spectra.
    pub spectrum_floor: f64,
}

impl Default for EqConfig {
    fn default() -> Self {
        Self {
            fft_size: 65_536,
            hop_fraction: 0.25,
            fir_taps: 1001,
            savgol_window: 1025,
            savgol_order: 2,
            max_gain_db: 24.0,
            spectrum_floor: 1e-10,
        }
    }
}

/// How panning gains are recovered from the similarity measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PanGainEstimator {
    /// Weaker-side gain taken as `psi / 2`.
    Approximate,
    /// Weaker-side gain from inverting `psi = 2r / (1 + r^2)` for the channel ratio `r`.
    #[default]
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanningConfig {
    pub fft_size: usize,
    pub hop_fraction: f64,
    /// Bins above this frequency are left untouched.
    pub cutoff_hz: StemTable<f64>,
    pub savgol_window: usize,
    pub savgol_order: usize,
    /// Per-bin gain limit used by the approximate estimator.
    pub gain_clamp_db: f64,
    pub estimator: PanGainEstimator,
}

impl Default for PanningConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop_fraction: 0.5,
            cutoff_hz: StemTable::uniform(16_000.0),
            savgol_window: 65,
            savgol_order: 2,
            gain_clamp_db: 12.0,
            estimator: PanGainEstimator::Exact,
        }
    }
}

/// Compressor ballistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub attack_ms: f64,
    pub release_ms: f64,
}

/// Stepped search range; values run from `start` toward `end` by `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if self.step == 0.0 {
            return vec![self.start];
        }
        let n = ((self.end - self.start) / self.step).floor();
        if n < 0.0 {
            return out;
        }
        for i in 0..=(n as usize) {
            out.push(self.start + i as f64 * self.step);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnsetConfig {
    pub fft_size: usize,
    pub hop: usize,
    /// Width of the running median used as the adaptive threshold.
    pub median_window_s: f64,
    /// Novelty must exceed the running median by this many dB.
    pub threshold_offset_db: f64,
    /// Frames more than this far below the loudest frame are ignored.
    pub floor_db: f64,
    pub min_inter_onset_ms: f64,
    /// Peak search length after each onset.
    pub peak_window_ms: f64,
    /// Peaks at or above this percentile of all peaks feed the statistics.
    pub keep_above_percentile: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop: 512,
            median_window_s: 0.5,
            threshold_offset_db: 6.0,
            floor_db: 80.0,
            min_inter_onset_ms: 50.0,
            peak_window_ms: 100.0,
            keep_above_percentile: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    /// Peak level stems are normalized to before onset statistics.
    pub peak_normalize_db: f64,
    pub timing: StemTable<Timing>,
    pub mel_bands: StemTable<usize>,
    /// Outer loop of the grid search, mildest first.
    pub threshold_db: GridAxis,
    /// Inner loop of the grid search, mildest first.
    pub ratio: GridAxis,
    pub onset: OnsetConfig,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            peak_normalize_db: -10.0,
            timing: StemTable {
                vocals: Timing {
                    attack_ms: 7.5,
                    release_ms: 400.0,
                },
                drums: Timing {
                    attack_ms: 10.0,
                    release_ms: 180.0,
                },
                bass: Timing {
                    attack_ms: 10.0,
                    release_ms: 500.0,
                },
                other: Timing {
                    attack_ms: 15.0,
                    release_ms: 666.0,
                },
            },
            mel_bands: StemTable {
                vocals: 128,
                drums: 128,
                bass: 16,
                other: 128,
            },
            threshold_db: GridAxis {
                start: -10.0,
                end: -40.0,
                step: -2.0,
            },
            ratio: GridAxis {
                start: 4.0,
                end: 20.0,
                step: 2.0,
            },
            onset: OnsetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReverbConfig {
    /// RT60 range of the augmentation pool.
    pub train_rt60_s: Range,
    /// RT60 range of the inference-time pre-reverb pool.
    pub pre_reverb_rt60_s: Range,
    pub low_shelf_hz: Range,
    pub high_shelf_hz: Range,
    pub shelf_gain_db: f64,
    pub shelf_q: f64,
    pub wet_gain: f64,
}

impl Default for ReverbConfig {
    fn default() -> Self {
        Self {
            train_rt60_s: Range::new(2.0, 4.0),
            pre_reverb_rt60_s: Range::new(1.0, 1.5),
            low_shelf_hz: Range::new(500.0, 700.0),
            high_shelf_hz: Range::new(7_000.0, 10_000.0),
            shelf_gain_db: -30.0,
            shelf_q: 0.707,
            wet_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub sample_rate: u32,
    pub loudness: LoudnessConfig,
    pub eq: EqConfig,
    pub panning: PanningConfig,
    pub dynamics: DynamicsConfig,
    pub reverb: ReverbConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::audio::DEFAULT_SAMPLE_RATE,
            loudness: LoudnessConfig::default(),
            eq: EqConfig::default(),
            panning: PanningConfig::default(),
            dynamics: DynamicsConfig::default(),
            reverb: ReverbConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub running_mean_s: f64,
    pub rolloff_fraction: f64,
    pub contrast_bands: usize,
    pub contrast_low_hz: f64,
    pub contrast_quantile: f64,
    /// Reference values with magnitude below this are excluded from MAPE.
    pub mape_min_reference: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop: 512,
            running_mean_s: 0.5,
            rolloff_fraction: 0.85,
            contrast_bands: 6,
            contrast_low_hz: 200.0,
            contrast_quantile: 0.02,
            mape_min_reference: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub fft_size: usize,
    pub hop_fraction: f64,
    pub a_weighting_taps: usize,
    pub lowpass_taps: usize,
    pub lowpass_hz: f64,
    pub log_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            fft_size: 4096,
            hop_fraction: 0.25,
            a_weighting_taps: 101,
            lowpass_taps: 101,
            lowpass_hz: 16_000.0,
            log_epsilon: 1e-7,
        }
    }
}
