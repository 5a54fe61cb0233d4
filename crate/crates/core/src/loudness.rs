//! Integrated loudness (ITU-R BS.1770 K-weighting with two-stage gating) and
//! loudness normalization.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::audio::{StemType, StereoWaveform};
use crate::error::{Error, Result};
use crate::filter::{Biquad, BiquadCoeffs};
use crate::par;

const BLOCK_SECONDS: f64 = 0.4;
const STEP_SECONDS: f64 = 0.1;
const ABSOLUTE_GATE_LUFS: f64 = -70.0;
const RELATIVE_GATE_LU: f64 = -10.0;
const OFFSET: f64 = -0.691;

/// Gain changes below this are treated as already on target.
const ON_TARGET_DB: f64 = 1e-9;
/// A corrective pass is applied when the first gain misses by more than this.
const CORRECTION_TOLERANCE_LU: f64 = 0.01;

/// Result of an integrated loudness measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoudnessStats {
    /// `None` when every block fell below the gates.
    pub integrated_lufs: Option<f64>,
    pub gated_block_count: usize,
}

impl LoudnessStats {
    pub fn is_silent(&self) -> bool {
        self.integrated_lufs.is_none()
    }
}

/// The two K-weighting stages for `sample_rate`, designed through the bilinear
/// transform from the analog prototype rather than copied from the 48 kHz table.
pub fn k_weighting(sample_rate: f64) -> [BiquadCoeffs; 2] {
    // High-frequency shelf of the head model.
    let f0 = 1_681.974_450_955_533;
    let gain_db = 3.999_843_853_973_347;
    let q = 0.707_175_236_955_419_6;
    let k = (PI * f0 / sample_rate).tan();
    let vh = 10f64.powf(gain_db / 20.0);
    let vb = vh.powf(0.499_666_774_154_541_6);
    let a0 = 1.0 + k / q + k * k;
    let shelf = BiquadCoeffs {
        b0: (vh + vb * k / q + k * k) / a0,
        b1: 2.0 * (k * k - vh) / a0,
        b2: (vh - vb * k / q + k * k) / a0,
        a1: 2.0 * (k * k - 1.0) / a0,
        a2: (1.0 - k / q + k * k) / a0,
    };

    // RLB high-pass.
    let f0 = 38.135_470_876_024_44;
    let q = 0.500_327_037_323_877_3;
    let k = (PI * f0 / sample_rate).tan();
    let a0 = 1.0 + k / q + k * k;
    let highpass = BiquadCoeffs {
        b0: 1.0,
        b1: -2.0,
        b2: 1.0,
        a1: 2.0 * (k * k - 1.0) / a0,
        a2: (1.0 - k / q + k * k) / a0,
    };
    [shelf, highpass]
}

/// Mean square of each 400 ms block (75 % overlap), summed over channels.
fn block_powers(w: &StereoWaveform) -> Vec<f64> {
    let rate = w.sample_rate() as f64;
    let [shelf, highpass] = k_weighting(rate);
    let weigh = |x: &[f32]| -> Vec<f64> {
        let mut s1 = Biquad::new(shelf);
        let mut s2 = Biquad::new(highpass);
        x.iter().map(|&v| s2.process(s1.process(v as f64))).collect()
    };
    let (l, r) = par::join(|| weigh(w.left()), || weigh(w.right()));

    let block = (BLOCK_SECONDS * rate).round() as usize;
    let step = (STEP_SECONDS * rate).round() as usize;
    if w.len() < block {
        return Vec::new();
    }
    let count = (w.len() - block) / step + 1;
    // Prefix sums of squares keep block evaluation O(1).
    let prefix = |x: &[f64]| {
        let mut p = Vec::with_capacity(x.len() + 1);
        p.push(0.0);
        let mut acc = 0.0;
        for v in x {
            acc += v * v;
            p.push(acc);
        }
        p
    };
    let (pl, pr) = (prefix(&l), prefix(&r));
    (0..count)
        .map(|j| {
            let (a, b) = (j * step, j * step + block);
            ((pl[b] - pl[a]) + (pr[b] - pr[a])) / block as f64
        })
        .collect()
}

fn to_lufs(power: f64) -> f64 {
    OFFSET + 10.0 * power.log10()
}

/// Gated integrated loudness of a stereo signal (both channels weighted 1.0).
pub fn integrated_loudness(w: &StereoWaveform) -> Result<LoudnessStats> {
    let min_len = (BLOCK_SECONDS * w.sample_rate() as f64).round() as usize;
    if w.len() < min_len {
        return Err(Error::TooShort {
            what: "integrated loudness",
            min_seconds: BLOCK_SECONDS,
            got_seconds: w.duration_seconds(),
        });
    }
    let powers = block_powers(w);
    let above_abs: Vec<f64> = powers
        .iter()
        .copied()
        .filter(|&p| p > 0.0 && to_lufs(p) > ABSOLUTE_GATE_LUFS)
        .collect();
    if above_abs.is_empty() {
        return Ok(LoudnessStats {
            integrated_lufs: None,
            gated_block_count: 0,
        });
    }
    let relative_gate =
        to_lufs(par::pairwise_sum(&above_abs) / above_abs.len() as f64) + RELATIVE_GATE_LU;
    let kept: Vec<f64> = above_abs
        .into_iter()
        .filter(|&p| to_lufs(p) > relative_gate)
        .collect();
    if kept.is_empty() {
        return Ok(LoudnessStats {
            integrated_lufs: None,
            gated_block_count: 0,
        });
    }
    Ok(LoudnessStats {
        integrated_lufs: Some(to_lufs(par::pairwise_sum(&kept) / kept.len() as f64)),
        gated_block_count: kept.len(),
    })
}

/// Mean integrated loudness of one stem type's stems. Silent stems are skipped.
pub fn average_stem_loudness(stem: StemType, loudness: &[LoudnessStats]) -> Result<f64> {
    let values: Vec<f64> = loudness.iter().filter_map(|s| s.integrated_lufs).collect();
    if values.is_empty() {
        return Err(Error::NoMeasurableStems(stem));
    }
    Ok(par::pairwise_sum(&values) / values.len() as f64)
}

/// Outcome of [`normalize_loudness`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoudnessNormalization {
    pub audio: StereoWaveform,
    /// Total linear gain applied (1.0 for silence or when already on target).
    pub gain: f64,
    pub measured_before: Option<f64>,
}

/// Scales `w` by one scalar so its integrated loudness equals `target_lufs`.
///
/// If gating shifts after the first gain, the result is re-measured and one
/// corrective gain is applied. Silent input passes through unchanged.
pub fn normalize_loudness(
    w: &StereoWaveform,
    target_lufs: f64,
    max_gain_db: f64,
) -> Result<LoudnessNormalization> {
    let Some(measured) = integrated_loudness(w)?.integrated_lufs else {
        return Ok(LoudnessNormalization {
            audio: w.clone(),
            gain: 1.0,
            measured_before: None,
        });
    };
    let gain_db = target_lufs - measured;
    if gain_db > max_gain_db {
        return Err(Error::TooQuietToNormalize {
            gain_db,
            limit_db: max_gain_db,
        });
    }
    if gain_db.abs() < ON_TARGET_DB {
        return Ok(LoudnessNormalization {
            audio: w.clone(),
            gain: 1.0,
            measured_before: Some(measured),
        });
    }
    let mut gain = crate::levels::db_to_linear(gain_db);
    let mut out = w.scaled(gain);
    if let Some(after) = integrated_loudness(&out)?.integrated_lufs {
        let miss = target_lufs - after;
        if miss.abs() > CORRECTION_TOLERANCE_LU {
            gain *= crate::levels::db_to_linear(miss);
            out = w.scaled(gain);
        }
    }
    Ok(LoudnessNormalization {
        audio: out,
        gain,
        measured_before: Some(measured),
    })
}
