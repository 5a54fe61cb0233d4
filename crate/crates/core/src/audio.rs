//! Stereo buffers and multitrack stem sets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

/// Time-domain stereo audio. Samples are linear amplitude, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct StereoWaveform {
    left: Vec<f32>,
    right: Vec<f32>,
    sample_rate: u32,
}

impl StereoWaveform {
    pub fn new(left: Vec<f32>, right: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::DimensionMismatch(format!(
                "left has {} samples, right has {}",
                left.len(),
                right.len()
            )));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be > 0".into()));
        }
        if left.iter().chain(right.iter()).any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter("non-finite sample".into()));
        }
        Ok(Self {
            left,
            right,
            sample_rate,
        })
    }

    /// Duplicates a mono signal into both channels.
    pub fn from_mono(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        Self::new(samples.clone(), samples, sample_rate)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            left: vec![0.0; len],
            right: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn left(&self) -> &[f32] {
        &self.left
    }

    pub fn right(&self) -> &[f32] {
        &self.right
    }

    pub fn channels(&self) -> [&[f32]; 2] {
        [&self.left, &self.right]
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn into_channels(self) -> (Vec<f32>, Vec<f32>) {
        (self.left, self.right)
    }

    /// Rebuilds a waveform from processed channels, keeping this one's rate.
    pub(crate) fn with_channels(&self, left: Vec<f32>, right: Vec<f32>) -> Self {
        debug_assert_eq!(left.len(), right.len());
        Self {
            left,
            right,
            sample_rate: self.sample_rate,
        }
    }

    pub fn swapped(&self) -> Self {
        self.with_channels(self.right.clone(), self.left.clone())
    }

    /// Applies one scalar gain to both channels.
    pub fn scaled(&self, gain: f64) -> Self {
        let g = gain as f32;
        self.with_channels(
            self.left.iter().map(|s| s * g).collect(),
            self.right.iter().map(|s| s * g).collect(),
        )
    }

    /// Largest absolute sample across both channels.
    pub fn peak(&self) -> f32 {
        self.left
            .iter()
            .chain(self.right.iter())
            .fold(0.0f32, |acc, s| acc.max(s.abs()))
    }

    /// Scales so the absolute peak sits at `target_db` dBFS. Silence is returned unchanged.
    pub fn peak_normalized(&self, target_db: f64) -> Self {
        let peak = self.peak();
        if peak == 0.0 {
            return self.clone();
        }
        self.scaled(crate::levels::db_to_linear(target_db) / peak as f64)
    }

    /// Channel mean, `(L + R) / 2`.
    pub fn mono(&self) -> Vec<f32> {
        self.left
            .iter()
            .zip(&self.right)
            .map(|(l, r)| 0.5 * (l + r))
            .collect()
    }

    /// Zero-pads both channels at the tail to `len` samples. Longer signals are untouched.
    pub fn padded_to(&self, len: usize) -> Self {
        let mut out = self.clone();
        if len > out.len() {
            out.left.resize(len, 0.0);
            out.right.resize(len, 0.0);
        }
        out
    }

    pub fn truncated(&self, len: usize) -> Self {
        let n = len.min(self.len());
        self.with_channels(self.left[..n].to_vec(), self.right[..n].to_vec())
    }

    /// Sample-wise sum; the shorter input is treated as zero-padded.
    pub fn mixed_with(&self, other: &StereoWaveform) -> Result<Self> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.sample_rate,
                got: other.sample_rate,
            });
        }
        let n = self.len().max(other.len());
        let a = self.padded_to(n);
        let b = other.padded_to(n);
        let sum = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(p, q)| p + q).collect();
        Ok(self.with_channels(sum(&a.left, &b.left), sum(&a.right, &b.right)))
    }

    /// Mean square over both channels, accumulated in f64.
    pub fn energy(&self) -> f64 {
        self.left
            .iter()
            .chain(self.right.iter())
            .map(|&s| (s as f64) * (s as f64))
            .sum()
    }
}

/// Instrument group of a stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StemType {
    Vocals,
    Drums,
    Bass,
    Other,
}

impl StemType {
    pub const ALL: [StemType; 4] = [
        StemType::Vocals,
        StemType::Drums,
        StemType::Bass,
        StemType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StemType::Vocals => "vocals",
            StemType::Drums => "drums",
            StemType::Bass => "bass",
            StemType::Other => "other",
        }
    }

    /// Reverb augmentation only touches vocals and other.
    pub fn reverb_eligible(self) -> bool {
        matches!(self, StemType::Vocals | StemType::Other)
    }
}

impl fmt::Display for StemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StemType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vocals" => Ok(StemType::Vocals),
            "drums" => Ok(StemType::Drums),
            "bass" => Ok(StemType::Bass),
            "other" => Ok(StemType::Other),
            _ => Err(Error::InvalidParameter(format!(
                "unknown stem type '{s}' (expected vocals, drums, bass or other)"
            ))),
        }
    }
}

/// The stems of one song. All stems share a sample rate and length.
#[derive(Debug, Clone, PartialEq)]
pub struct StemSet {
    song_id: String,
    stems: BTreeMap<StemType, StereoWaveform>,
}

impl StemSet {
    /// Builds a stem set, zero-padding shorter stems to the longest one.
    pub fn new(
        song_id: impl Into<String>,
        stems: BTreeMap<StemType, StereoWaveform>,
    ) -> Result<Self> {
        let mut rates = stems.values().map(|w| w.sample_rate());
        if let Some(first) = rates.next() {
            if let Some(other) = rates.find(|&r| r != first) {
                return Err(Error::SampleRateMismatch {
                    expected: first,
                    got: other,
                });
            }
        }
        let len = stems.values().map(|w| w.len()).max().unwrap_or(0);
        let stems = stems
            .into_iter()
            .map(|(k, w)| (k, w.padded_to(len)))
            .collect();
        Ok(Self {
            song_id: song_id.into(),
            stems,
        })
    }

    pub fn song_id(&self) -> &str {
        &self.song_id
    }

    pub fn get(&self, stem: StemType) -> Option<&StereoWaveform> {
        self.stems.get(&stem)
    }

    pub fn iter(&self) -> impl Iterator<Item = (StemType, &StereoWaveform)> {
        self.stems.iter().map(|(k, w)| (*k, w))
    }

    pub fn stem_types(&self) -> impl Iterator<Item = StemType> + '_ {
        self.stems.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.stems.values().next().map(|w| w.sample_rate())
    }

    /// Replaces every stem through `f`, keeping the song id.
    pub fn try_map<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(StemType, &StereoWaveform) -> Result<StereoWaveform>,
    {
        let mut stems = BTreeMap::new();
        for (k, w) in &self.stems {
            stems.insert(*k, f(*k, w)?);
        }
        Ok(Self {
            song_id: self.song_id.clone(),
            stems,
        })
    }

    /// Sum of all stems.
    pub fn mixture(&self) -> Result<Option<StereoWaveform>> {
        let mut iter = self.stems.values();
        let Some(first) = iter.next() else {
            return Ok(None);
        };
        let mut mix = first.clone();
        for w in iter {
            mix = mix.mixed_with(w)?;
        }
        Ok(Some(mix))
    }

    pub fn into_stems(self) -> BTreeMap<StemType, StereoWaveform> {
        self.stems
    }
}
