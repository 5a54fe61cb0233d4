use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::StemType;
use crate::dynamics::PeakTarget;
use crate::eq::AverageSpectrum;
use crate::error::{Error, Result};
use crate::panning::AveragePanning;

pub const PROFILE_SCHEMA_VERSION: u32 = 1;

/// Corpus-average effect features of one stem type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemTypeProfile {
    pub schema_version: u32,
    pub stem_type: StemType,
    pub sample_rate: u32,
    pub corpus_fingerprint: String,
    /// Number of stems that contributed.
    pub stem_count: usize,
    /// Mean integrated loudness (LUFS).
    pub loudness_avg: f64,
    pub spectrum_avg: AverageSpectrum,
    pub panning_avg: AveragePanning,
    /// Mean onset-peak level and spread (dB); `None` if no stem had transients.
    pub peak_mu: Option<f64>,
    pub peak_sigma: Option<f64>,
}

impl StemTypeProfile {
    pub fn peak_target(&self) -> Option<PeakTarget> {
        Some(PeakTarget {
            mu: self.peak_mu?,
            sigma: self.peak_sigma?,
        })
    }

    /// Checks version, dimensions and finiteness.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Profile(format!("{} profile: {m}", self.stem_type)));
        if self.schema_version != PROFILE_SCHEMA_VERSION {
            return bad(format!(
                "schema version {} is not supported (expected {PROFILE_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let s = &self.spectrum_avg;
        if s.magnitude.len() != s.fft_size / 2 + 1 {
            return bad(format!(
                "spectrum has {} bins for a {}-point transform",
                s.magnitude.len(),
                s.fft_size
            ));
        }
        let p = &self.panning_avg;
        if p.similarity.len() != p.fft_size / 2 + 1 {
            return bad(format!(
                "similarity has {} bins for a {}-point transform",
                p.similarity.len(),
                p.fft_size
            ));
        }
        if s.sample_rate != self.sample_rate || p.sample_rate != self.sample_rate {
            return bad("feature sample rates disagree".into());
        }
        if p.stem_type != self.stem_type || s.stem_type.is_some_and(|k| k != self.stem_type) {
            return bad("feature stem types disagree".into());
        }
        if s.magnitude.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return bad("spectrum must be finite and positive".into());
        }
        if p.similarity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("similarity must lie in [0, 1]".into());
        }
        let finite = [Some(self.loudness_avg), self.peak_mu, self.peak_sigma]
            .into_iter()
            .flatten()
            .all(f64::is_finite);
        if !finite {
            return bad("scalar features must be finite".into());
        }
        if self.peak_mu.is_some() != self.peak_sigma.is_some() {
            return bad("peak mean and spread must both be present or both absent".into());
        }
        Ok(())
    }
}

pub type ProfileSet = BTreeMap<StemType, StemTypeProfile>;

pub fn profile_path(dir: &Path, stem: StemType) -> PathBuf {
    dir.join(format!("{}.json", stem.as_str()))
}

pub fn save_profile(path: &Path, p: &StemTypeProfile) -> Result<()> {
    let json = serde_json::to_string_pretty(p)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Loads and validates a profile, refusing unknown schema versions and, when
/// `session_rate` is given, profiles built at another sample rate.
pub fn load_profile(path: &Path, session_rate: Option<u32>) -> Result<StemTypeProfile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Profile(format!("{} is not valid JSON: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == PROFILE_SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Profile(format!(
                "{} has schema version {v}, this build reads version {PROFILE_SCHEMA_VERSION}",
                path.display()
            )))
        }
        None => {
            return Err(Error::Profile(format!(
                "{} has no schema_version field",
                path.display()
            )))
        }
    }
    let p: StemTypeProfile = serde_json::from_value(value)
        .map_err(|e| Error::Profile(format!("{}: {e}", path.display())))?;
    p.validate()?;
    if let Some(rate) = session_rate {
        if p.sample_rate != rate {
            return Err(Error::SampleRateMismatch {
                expected: rate,
                got: p.sample_rate,
            });
        }
    }
    Ok(p)
}

pub fn save_profiles(dir: &Path, set: &ProfileSet) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    set.iter()
        .map(|(&k, p)| {
            let path = profile_path(dir, k);
            save_profile(&path, p)?;
            Ok(path)
        })
        .collect()
}

/// Loads the profiles of `stems` from `dir`.
pub fn load_profiles(dir: &Path, stems: &[StemType], session_rate: Option<u32>) -> Result<ProfileSet> {
    stems
        .iter()
        .map(|&k| {
            let path = profile_path(dir, k);
            if !path.is_file() {
                return Err(Error::MissingProfile(k));
            }
            Ok((k, load_profile(&path, session_rate)?))
        })
        .collect()
}
