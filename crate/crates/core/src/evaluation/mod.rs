//! Mix evaluation: objective features, their percentage errors against a reference
//! mix, and the stereo-invariant spectral losses.

mod features;
mod loss;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::StereoWaveform;
use crate::config::FeatureConfig;
use crate::error::{Error, Result};
use crate::par;

pub use features::{mix_features, smoothing_frames, DynamicFeatures, FeatureSeries, MixFeatureReport, SpectralFeatures};
pub use loss::{a_weighting_db, perceptual_filter, spectral_terms, stereo_invariant_loss, LossBreakdown, LossVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Spectral,
    Panning,
    Dynamic,
    Loudness,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 4] = [Self::Spectral, Self::Panning, Self::Dynamic, Self::Loudness];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Spectral => "spectral",
            Self::Panning => "panning",
            Self::Dynamic => "dynamic",
            Self::Loudness => "loudness",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean absolute percentage error of `candidate` against `reference`, skipping
/// reference values with magnitude below `min_reference`. `None` if none remain.
pub fn mape(candidate: &[f64], reference: &[f64], min_reference: f64) -> Option<f64> {
    let (sum, n) = candidate
        .iter()
        .zip(reference)
        .filter(|(_, r)| r.abs() >= min_reference)
        .fold((0.0, 0usize), |(s, n), (c, r)| (s + ((c - r) / r).abs(), n + 1));
    (n > 0).then(|| 100.0 * sum / n as f64)
}

/// Features of `candidate` with their errors against `reference` filled in.
///
/// Mixes of different length are trimmed to the shorter one.
pub fn mape_report(candidate: &StereoWaveform, reference: &StereoWaveform, cfg: &FeatureConfig) -> Result<MixFeatureReport> {
    if candidate.sample_rate() != reference.sample_rate() {
        return Err(Error::SampleRateMismatch {
            expected: reference.sample_rate(),
            got: candidate.sample_rate(),
        });
    }
    let n = candidate.len().min(reference.len());
    if candidate.len() != reference.len() {
        log::warn!(
            "candidate has {} samples, reference {}; comparing the first {n}",
            candidate.len(),
            reference.len()
        );
    }
    let (c, r) = par::join(
        || mix_features(&candidate.truncated(n), cfg),
        || mix_features(&reference.truncated(n), cfg),
    );
    let (mut c, r) = (c?, r?);

    let mut by_feature = BTreeMap::new();
    for ((name, _, cs), (_, _, rs)) in c.series().into_iter().zip(r.series()) {
        if let Some(e) = mape(&cs.values, &rs.values, cfg.mape_min_reference) {
            by_feature.insert(name.to_string(), e);
        }
    }
    if let (Some(cl), Some(rl)) = (c.loudness_lufs, r.loudness_lufs) {
        if let Some(e) = mape(&[cl], &[rl], cfg.mape_min_reference) {
            by_feature.insert("loudness".to_string(), e);
        }
    }
    c.mape_by_group = group_means(&by_feature);
    c.mape_by_feature = by_feature;
    Ok(c)
}

fn group_of(feature: &str) -> FeatureGroup {
    match feature {
        "panning_rms" => FeatureGroup::Panning,
        "rms_level" | "dynamic_spread" | "crest_factor" => FeatureGroup::Dynamic,
        "loudness" => FeatureGroup::Loudness,
        _ => FeatureGroup::Spectral,
    }
}

fn group_means(by_feature: &BTreeMap<String, f64>) -> BTreeMap<FeatureGroup, f64> {
    let mut acc: BTreeMap<FeatureGroup, (f64, usize)> = BTreeMap::new();
    for (name, &v) in by_feature {
        let e = acc.entry(group_of(name)).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect()
}

/// How per-song errors combine into a corpus figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapeAveraging {
    /// Group error per song, then the mean over songs.
    #[default]
    PerSong,
    /// Each feature's error averaged over songs, then the mean within each group.
    Joint,
}

impl FromStr for MapeAveraging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per-song" | "song" => Ok(Self::PerSong),
            "joint" => Ok(Self::Joint),
            _ => Err(Error::InvalidParameter(format!(
                "unknown averaging '{s}' (expected per-song or joint)"
            ))),
        }
    }
}

fn key_means<'a, K: Ord + Clone + 'a>(maps: impl Iterator<Item = &'a BTreeMap<K, f64>>) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for m in maps {
        for (k, &v) in m {
            let e = acc.entry(k.clone()).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Corpus-level group errors from per-song reports.
pub fn average_mape(reports: &[MixFeatureReport], mode: MapeAveraging) -> BTreeMap<FeatureGroup, f64> {
    match mode {
        MapeAveraging::PerSong => key_means(reports.iter().map(|r| &r.mape_by_group)),
        MapeAveraging::Joint => group_means(&key_means(reports.iter().map(|r| &r.mape_by_feature))),
    }
}
