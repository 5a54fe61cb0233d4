//! Corpus analysis and per-song normalization in a fixed effect order:
//! reverb augmentation, EQ, dynamics, panning, loudness.
//!
//! Analysis is progressive. Each stage's corpus statistic is measured on stems that
//! were already normalized by every earlier stage, so a corpus is read four times.
//! Intermediate audio goes to a scratch directory as 32-bit float WAV.

mod dataset;
mod profile;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, SongEntry};
pub use profile::{
    load_profile, load_profiles, profile_path, save_profile, save_profiles, ProfileSet,
    StemTypeProfile, PROFILE_SCHEMA_VERSION,
};

use crate::audio::{StemSet, StemType, StereoWaveform};
use crate::config::PreprocessConfig;
use crate::dynamics::{
    corpus_peak_stats, measure_peaks, normalize_drc, CompressorSettings, DrcOutcome, PeakTarget,
};
use crate::eq::{
    corpus_average_spectrum, design_eq_filter, match_eq, stem_mean_spectrum, AverageSpectrum,
    NEPER_PER_DB,
};
use crate::error::{Error, Result};
use crate::loudness::{average_stem_loudness, integrated_loudness, normalize_loudness};
use crate::panning::{repan, AveragePanning, SimilarityAccumulator};
use crate::par;
use crate::reverb::{augment_stem, AugmentMode, IrLibrary, SendRecord};
use crate::stft::StftParams;
use crate::wav::{self, BitDepth};

/// Processing stages, in the only order they can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Reverb,
    Eq,
    Drc,
    Panning,
    Loudness,
}

impl Stage {
    pub const ORDER: [Stage; 5] = [
        Stage::Reverb,
        Stage::Eq,
        Stage::Drc,
        Stage::Panning,
        Stage::Loudness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Reverb => "reverb",
            Stage::Eq => "eq",
            Stage::Drc => "drc",
            Stage::Panning => "panning",
            Stage::Loudness => "loudness",
        }
    }

    /// 1-based position, used to name intermediate directories.
    pub fn position(self) -> usize {
        Stage::ORDER.iter().position(|&s| s == self).unwrap() + 1
    }

    fn needs_profile(self) -> bool {
        self != Stage::Reverb
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ORDER
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown stage '{s}' (expected reverb, eq, drc, panning or loudness)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    pub mode: AugmentMode,
    pub seed: u64,
    pub skip: BTreeSet<Stage>,
    /// Keep every stage's output for debugging.
    pub keep_intermediates: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self {
            mode: AugmentMode::Train,
            seed: 0,
            skip: BTreeSet::new(),
            keep_intermediates: false,
        }
    }
}

impl NormalizeOptions {
    pub fn runs(&self, stage: Stage) -> bool {
        !self.skip.contains(&stage)
    }
}

// Stage bodies shared by analysis and normalization, so both see the same audio.

fn eq_stage(w: &StereoWaveform, target: &AverageSpectrum, cfg: &PreprocessConfig) -> Result<(StereoWaveform, Option<f64>)> {
    let pre = normalize_loudness(w, cfg.loudness.pre_eq_target_lufs, cfg.loudness.max_gain_db)?;
    if pre.measured_before.is_none() {
        return Ok((w.clone(), None));
    }
    let gain_db = 20.0 * pre.gain.log10();
    Ok((match_eq(&pre.audio, target, &cfg.eq)?, Some(gain_db)))
}

fn drc_stage(
    w: &StereoWaveform,
    stem: StemType,
    target: Option<PeakTarget>,
    cfg: &PreprocessConfig,
) -> Result<DrcOutcome> {
    let x = w.peak_normalized(cfg.dynamics.peak_normalize_db);
    match target {
        Some(t) => normalize_drc(&x, stem, t, &cfg.dynamics),
        None => Ok(DrcOutcome {
            audio: x,
            settings: None,
            mu_before: None,
            mu_after: None,
            satisfied: true,
        }),
    }
}

/// What happened to one stem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StemReport {
    pub stages: Vec<Stage>,
    pub reverb_sends: Vec<SendRecord>,
    pub pre_eq_gain_db: Option<f64>,
    pub compressor: Option<CompressorSettings>,
    pub peak_mu_before_db: Option<f64>,
    pub peak_mu_after_db: Option<f64>,
    pub peak_bound_met: Option<bool>,
    pub loudness_before_lufs: Option<f64>,
    pub loudness_gain_db: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NormalizedSong {
    pub stems: StemSet,
    pub reports: BTreeMap<StemType, StemReport>,
    /// Output after each stage that ran, in stage order (empty unless requested).
    pub intermediates: Vec<(Stage, StemSet)>,
}

type StemOutput = (StereoWaveform, StemReport, Vec<(Stage, StereoWaveform)>);

fn normalize_stem(
    w: &StereoWaveform,
    song_id: &str,
    stem: StemType,
    profile: Option<&StemTypeProfile>,
    library: Option<&IrLibrary>,
    opts: &NormalizeOptions,
    cfg: &PreprocessConfig,
) -> Result<StemOutput> {
    let mut report = StemReport::default();
    let mut kept = Vec::new();
    let mut cur = w.clone();
    let profile = || profile.ok_or(Error::MissingProfile(stem));
    for stage in Stage::ORDER {
        if !opts.runs(stage) {
            continue;
        }
        cur = match stage {
            Stage::Reverb => {
                if !stem.reverb_eligible() {
                    continue;
                }
                let lib = library.ok_or_else(|| {
                    Error::InvalidParameter(
                        "reverb augmentation needs an impulse-response library (or skip the reverb stage)".into(),
                    )
                })?;
                let (out, sends) = augment_stem(&cur, song_id, stem, lib, opts.mode, opts.seed, &cfg.reverb)?;
                report.reverb_sends = sends;
                out
            }
            Stage::Eq => {
                let (out, gain) = eq_stage(&cur, &profile()?.spectrum_avg, cfg)?;
                report.pre_eq_gain_db = gain;
                out
            }
            Stage::Drc => {
                let d = drc_stage(&cur, stem, profile()?.peak_target(), cfg)?;
                report.compressor = d.settings;
                report.peak_mu_before_db = d.mu_before;
                report.peak_mu_after_db = d.mu_after;
                report.peak_bound_met = d.mu_after.map(|_| d.satisfied);
                d.audio
            }
            Stage::Panning => repan(&cur, &profile()?.panning_avg, &cfg.panning)?,
            Stage::Loudness => {
                let n = normalize_loudness(&cur, profile()?.loudness_avg, cfg.loudness.max_gain_db)?;
                report.loudness_before_lufs = n.measured_before;
                report.loudness_gain_db = Some(20.0 * n.gain.log10());
                n.audio
            }
        };
        report.stages.push(stage);
        if opts.keep_intermediates {
            kept.push((stage, cur.clone()));
        }
    }
    Ok((cur, report, kept))
}

/// Runs every enabled stage on every stem of a song.
pub fn normalize_song(
    stems: &StemSet,
    profiles: &ProfileSet,
    library: Option<&IrLibrary>,
    opts: &NormalizeOptions,
    cfg: &PreprocessConfig,
) -> Result<NormalizedSong> {
    let needs_profiles = Stage::ORDER.iter().any(|&s| s.needs_profile() && opts.runs(s));
    let rate = stems.sample_rate();
    for k in stems.stem_types() {
        if !needs_profiles {
            break;
        }
        let p = profiles.get(&k).ok_or(Error::MissingProfile(k))?;
        if let Some(rate) = rate.filter(|&r| r != p.sample_rate) {
            return Err(Error::SampleRateMismatch {
                expected: p.sample_rate,
                got: rate,
            });
        }
    }
    let jobs: Vec<(StemType, &StereoWaveform)> = stems.iter().collect();
    let outputs = par::map(&jobs, |&(k, w)| {
        normalize_stem(w, stems.song_id(), k, profiles.get(&k), library, opts, cfg)
    });
    let mut final_stems = BTreeMap::new();
    let mut reports = BTreeMap::new();
    let mut per_stage: BTreeMap<Stage, BTreeMap<StemType, StereoWaveform>> = BTreeMap::new();
    for (&(k, w), out) in jobs.iter().zip(outputs) {
        let (audio, report, kept) = out?;
        if opts.keep_intermediates {
            // Stems a stage did not touch carry their previous output forward.
            let mut last = w.clone();
            let mut kept = kept.into_iter().peekable();
            for stage in Stage::ORDER.into_iter().filter(|&s| opts.runs(s)) {
                if let Some((_, a)) = kept.next_if(|(s, _)| *s == stage) {
                    last = a;
                }
                per_stage.entry(stage).or_default().insert(k, last.clone());
            }
        }
        final_stems.insert(k, audio);
        reports.insert(k, report);
    }
    let intermediates = per_stage
        .into_iter()
        .map(|(s, m)| Ok((s, StemSet::new(stems.song_id(), m)?)))
        .collect::<Result<_>>()?;
    Ok(NormalizedSong {
        stems: StemSet::new(stems.song_id(), final_stems)?,
        reports,
        intermediates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AnalyzeOptions {
    /// Resample files whose rate differs from the session's instead of failing.
    pub resample: bool,
}

/// Scans `root` and builds one profile per stem type.
pub fn analyze_corpus(root: &Path, stem_types: &[StemType], cfg: &PreprocessConfig) -> Result<ProfileSet> {
    let ds = Dataset::scan(root, stem_types)?;
    analyze_dataset(&ds, cfg, AnalyzeOptions::default())
}

struct Scratch {
    dir: tempfile::TempDir,
}

impl Scratch {
    fn new() -> Result<Self> {
        let dir = tempfile::Builder::new()
            .prefix("fxnorm-analysis-")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        Ok(Self { dir })
    }

    fn path(&self, stage: Stage, song: usize, stem: StemType) -> PathBuf {
        self.dir.path().join(format!("{stage}-{song:05}-{stem}.wav"))
    }

    fn put(&self, stage: Stage, song: usize, stem: StemType, w: &StereoWaveform) -> Result<()> {
        wav::write_audio(self.path(stage, song, stem), w, BitDepth::Float32)
    }

    /// Reads and deletes a stored intermediate.
    fn take(&self, stage: Stage, song: usize, stem: StemType) -> Result<StereoWaveform> {
        let p = self.path(stage, song, stem);
        let w = wav::read_audio(&p)?;
        fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        Ok(w)
    }
}

fn per_type<T>(jobs: &[(usize, StemType)], values: Vec<T>) -> BTreeMap<StemType, Vec<T>> {
    let mut out: BTreeMap<StemType, Vec<T>> = BTreeMap::new();
    for (&(_, k), v) in jobs.iter().zip(values) {
        out.entry(k).or_default().push(v);
    }
    out
}

/// Progressive four-pass analysis of a scanned dataset.
///
/// Silent stems, and stems too quiet to reach the pre-EQ level, are left out of every
/// statistic. Per-stem work runs in parallel and all reductions follow song order.
pub fn analyze_dataset(ds: &Dataset, cfg: &PreprocessConfig, opts: AnalyzeOptions) -> Result<ProfileSet> {
    let rate = cfg.sample_rate;
    let mut stem_types = ds.stem_types.clone();
    stem_types.sort();
    stem_types.dedup();
    let all_jobs: Vec<(usize, StemType)> = (0..ds.songs.len())
        .flat_map(|i| stem_types.iter().map(move |&k| (i, k)))
        .collect();
    let load = |i: usize, k: StemType| {
        wav::load_for_session(&ds.songs[i].stems[&k], rate, opts.resample)
    };

    // Pass 1: average spectra at the pre-EQ level.
    log::info!("analysis 1/4: spectra of {} stems", all_jobs.len());
    let spectra = par::map(&all_jobs, |&(i, k)| -> Result<Option<AverageSpectrum>> {
        let w = load(i, k)?;
        let pre = match normalize_loudness(&w, cfg.loudness.pre_eq_target_lufs, cfg.loudness.max_gain_db) {
            Ok(p) if p.measured_before.is_some() => p,
            Ok(_) => {
                log::info!("{}/{k}: silent, excluded from statistics", ds.songs[i].id);
                return Ok(None);
            }
            Err(e @ Error::TooQuietToNormalize { .. }) => {
                log::warn!("{}/{k}: {e}; excluded from statistics", ds.songs[i].id);
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        stem_mean_spectrum(&pre.audio, &cfg.eq).map(Some)
    });
    let mut jobs = Vec::new();
    let mut measured = Vec::new();
    for (&job, s) in all_jobs.iter().zip(spectra) {
        if let Some(s) = s? {
            jobs.push(job);
            measured.push(s);
        }
    }
    let mut spectrum_avg = BTreeMap::new();
    let mut stem_count = BTreeMap::new();
    for (k, list) in per_type(&jobs, measured) {
        stem_count.insert(k, list.len());
        spectrum_avg.insert(k, corpus_average_spectrum(k, &list)?);
    }
    if let Some(&k) = stem_types.iter().find(|k| !spectrum_avg.contains_key(k)) {
        return Err(Error::NoMeasurableStems(k));
    }

    let scratch = Scratch::new()?;

    // Pass 2: EQ, then onset-peak statistics at the pre-DRC peak level.
    log::info!("analysis 2/4: onset peaks");
    let peaks = par::map(&jobs, |&(i, k)| {
        let (y, _) = eq_stage(&load(i, k)?, &spectrum_avg[&k], cfg)?;
        scratch.put(Stage::Eq, i, k, &y)?;
        let x = y.peak_normalized(cfg.dynamics.peak_normalize_db);
        measure_peaks(&x, *cfg.dynamics.mel_bands.get(k), &cfg.dynamics.onset)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut peak_target = BTreeMap::new();
    for (k, list) in per_type(&jobs, peaks) {
        let found: Vec<_> = list.into_iter().flatten().collect();
        let t = if found.is_empty() {
            log::warn!("no {k} stem has detectable onsets; dynamics stage will pass {k} through");
            None
        } else {
            Some(corpus_peak_stats(k, &found)?)
        };
        peak_target.insert(k, t);
    }

    // Pass 3: DRC, then frame-averaged similarity.
    log::info!("analysis 3/4: panning");
    let pan_bins = StftParams::with_hop_fraction(cfg.panning.fft_size, cfg.panning.hop_fraction)?.bins();
    let accs = par::map(&jobs, |&(i, k)| {
        let y = scratch.take(Stage::Eq, i, k)?;
        let d = drc_stage(&y, k, peak_target[&k], cfg)?.audio;
        scratch.put(Stage::Drc, i, k, &d)?;
        let mut acc = SimilarityAccumulator::new(pan_bins);
        acc.add_waveform(&d, &cfg.panning)?;
        Ok(acc)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut panning_avg: BTreeMap<StemType, AveragePanning> = BTreeMap::new();
    for (k, list) in per_type(&jobs, accs) {
        let mut total = SimilarityAccumulator::new(pan_bins);
        for a in &list {
            total.merge(a);
        }
        panning_avg.insert(k, total.finish(k, rate, &cfg.panning)?);
    }

    // Pass 4: re-pan, then integrated loudness.
    log::info!("analysis 4/4: loudness");
    let levels = par::map(&jobs, |&(i, k)| {
        let d = scratch.take(Stage::Drc, i, k)?;
        integrated_loudness(&repan(&d, &panning_avg[&k], &cfg.panning)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let fingerprint = ds.fingerprint()?;
    let mut out = ProfileSet::new();
    for (k, list) in per_type(&jobs, levels) {
        let target = peak_target[&k];
        let p = StemTypeProfile {
            schema_version: PROFILE_SCHEMA_VERSION,
            stem_type: k,
            sample_rate: rate,
            corpus_fingerprint: fingerprint.clone(),
            stem_count: stem_count[&k],
            loudness_avg: average_stem_loudness(k, &list)?,
            spectrum_avg: spectrum_avg.remove(&k).unwrap(),
            panning_avg: panning_avg.remove(&k).unwrap(),
            peak_mu: target.map(|t| t.mu),
            peak_sigma: target.map(|t| t.sigma),
        };
        p.validate()?;
        out.insert(k, p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongManifest {
    pub id: String,
    pub stems: BTreeMap<StemType, StemReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub mode: AugmentMode,
    pub seed: u64,
    pub skipped: Vec<Stage>,
    pub sample_rate: u32,
    pub songs: Vec<SongManifest>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_stems(dir: &Path, stems: &StemSet, depth: BitDepth) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, w) in stems.iter() {
        wav::write_audio(dir.join(format!("{k}.wav")), w, depth)?;
    }
    Ok(())
}

/// Normalizes every song of `ds` into `out/<song>/<stem>.wav`, plus a `mixture.wav`
/// summed from the outputs and a `manifest.json` describing what was applied.
/// With `keep_intermediates`, stage outputs go to `out/<song>/stages/NN_<stage>/`.
#[allow(clippy::too_many_arguments)]
pub fn normalize_corpus(
    ds: &Dataset,
    out: &Path,
    profiles: &ProfileSet,
    library: Option<&IrLibrary>,
    opts: &NormalizeOptions,
    cfg: &PreprocessConfig,
    depth: BitDepth,
    resample: bool,
) -> Result<CorpusManifest> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let songs = par::map(&ds.songs, |song| -> Result<SongManifest> {
        let stems = song.load(cfg.sample_rate, resample)?;
        let done = normalize_song(&stems, profiles, library, opts, cfg)?;
        let dir = out.join(&song.id);
        write_stems(&dir, &done.stems, depth)?;
        if let Some(mix) = done.stems.mixture()? {
            wav::write_audio(dir.join("mixture.wav"), &mix, depth)?;
        }
        for (stage, set) in &done.intermediates {
            let sub = dir.join("stages").join(format!("{:02}_{stage}", stage.position()));
            write_stems(&sub, set, depth)?;
        }
        log::info!("normalized {}", song.id);
        Ok(SongManifest {
            id: song.id.clone(),
            stems: done.reports,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest {
        mode: opts.mode,
        seed: opts.seed,
        skipped: opts.skip.iter().copied().collect(),
        sample_rate: cfg.sample_rate,
        songs,
    };
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Tolerances of the re-analysis contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractTolerance {
    pub loudness_lu: f64,
    /// Largest residual EQ correction (dB) after removing its mean level.
    pub spectrum_db: f64,
    /// Mean absolute difference between frame-mean similarity and the target.
    pub similarity: f64,
    /// Frequency range of the spectrum comparison (Hz).
    pub band_low_hz: f64,
    pub band_high_hz: f64,
}

impl Default for ContractTolerance {
    fn default() -> Self {
        Self {
            loudness_lu: 0.1,
            spectrum_db: 1.0,
            similarity: 0.1,
            band_low_hz: 100.0,
            band_high_hz: 10_000.0,
        }
    }
}

/// Re-analysis of one normalized stem against its profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractCheck {
    pub loudness_error_lu: f64,
    pub spectrum_max_dev_db: f64,
    pub similarity_mean_dev: f64,
    pub peak_mu_db: Option<f64>,
    pub peak_bound_db: Option<f64>,
    pub loudness_ok: bool,
    pub spectrum_ok: bool,
    pub similarity_ok: bool,
    pub peaks_ok: bool,
}

impl ContractCheck {
    pub fn passed(&self) -> bool {
        self.loudness_ok && self.spectrum_ok && self.similarity_ok && self.peaks_ok
    }
}

/// The correction the EQ stage would still apply to a stem with spectrum `gamma`:
/// its smoothed log difference to `target` in dB, minus the mean over the band,
/// reported as the largest magnitude inside the band.
///
/// The mean is removed because the EQ matches at the pre-EQ level; a stem brought
/// back to that level after later stages differs from the target by a constant.
pub fn residual_eq_db(
    gamma: &AverageSpectrum,
    target: &AverageSpectrum,
    cfg: &PreprocessConfig,
    tol: &ContractTolerance,
) -> Result<f64> {
    let design = design_eq_filter(gamma, target, &cfg.eq)?;
    let in_band: Vec<f64> = (0..gamma.bins())
        .filter(|&k| (tol.band_low_hz..=tol.band_high_hz).contains(&gamma.bin_frequency(k)))
        .map(|k| design.log_difference[k] / NEPER_PER_DB)
        .collect();
    if in_band.is_empty() {
        return Err(Error::InvalidParameter("spectrum comparison band holds no bins".into()));
    }
    let mean = in_band.iter().sum::<f64>() / in_band.len() as f64;
    Ok(in_band.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max))
}

/// Re-measures a normalized stem the way analysis would.
///
/// `final_audio` is the pipeline output. Loudness and frame-mean similarity are read
/// from it directly. Its spectrum is compared after bringing it back to the pre-EQ
/// level. The onset-peak mean is read from `dynamics_output`, the output of the
/// dynamics stage, because the final loudness gain moves peak levels by design.
pub fn check_contract(
    final_audio: &StereoWaveform,
    dynamics_output: &StereoWaveform,
    profile: &StemTypeProfile,
    cfg: &PreprocessConfig,
    tol: &ContractTolerance,
) -> Result<ContractCheck> {
    let k = profile.stem_type;
    let lufs = integrated_loudness(final_audio)?
        .integrated_lufs
        .ok_or(Error::EmptySignal)?;
    let loudness_error_lu = (lufs - profile.loudness_avg).abs();

    let pre = normalize_loudness(final_audio, cfg.loudness.pre_eq_target_lufs, cfg.loudness.max_gain_db)?;
    let gamma = stem_mean_spectrum(&pre.audio, &cfg.eq)?;
    let spectrum_max_dev_db = residual_eq_db(&gamma, &profile.spectrum_avg, cfg, tol)?;

    let mut acc = SimilarityAccumulator::new(profile.panning_avg.similarity.len());
    acc.add_waveform(final_audio, &cfg.panning)?;
    let psi = acc.mean()?;
    let bin_hz = final_audio.sample_rate() as f64 / cfg.panning.fft_size as f64;
    // Leave out DC and the bins next to the cutoff, where untouched content above it
    // leaks back into the analysis window.
    let last = ((*cfg.panning.cutoff_hz.get(k) / bin_hz).floor() as usize)
        .saturating_sub(4)
        .min(psi.len() - 1)
        .max(1);
    let similarity_mean_dev = (1..=last)
        .map(|b| (psi[b] - profile.panning_avg.similarity[b]).abs())
        .sum::<f64>()
        / last as f64;

    let peak_mu_db = measure_peaks(dynamics_output, *cfg.dynamics.mel_bands.get(k), &cfg.dynamics.onset)?
        .map(|s| s.mu);
    let peak_bound_db = profile.peak_target().map(|t| t.bound());
    let peaks_ok = match (peak_mu_db, peak_bound_db) {
        (Some(mu), Some(bound)) => mu <= bound + 1e-9,
        _ => true,
    };
    Ok(ContractCheck {
        loudness_error_lu,
        spectrum_max_dev_db,
        similarity_mean_dev,
        peak_mu_db,
        peak_bound_db,
        loudness_ok: loudness_error_lu <= tol.loudness_lu,
        spectrum_ok: spectrum_max_dev_db <= tol.spectrum_db,
        similarity_ok: similarity_mean_dev <= tol.similarity,
        peaks_ok,
    })
}
