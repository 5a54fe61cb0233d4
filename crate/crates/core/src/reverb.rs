//! Convolution reverb as a shelved send ("reverb trick") for data augmentation,
//! RT60 estimation and impulse-response libraries.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{StemSet, StemType, StereoWaveform};
use crate::config::{Range, ReverbConfig};
use crate::error::{Error, Result};
use crate::filter::{convolve, Biquad, BiquadCoeffs};
use crate::par;

const MIN_IR_SECONDS: f64 = 0.1;
const MIN_DECAY_SECONDS: f64 = 0.05;
/// Sidecar file caching RT60 estimates inside an IR library directory.
pub const RT60_CACHE_FILE: &str = "rt60_cache.json";

/// RT60 in seconds from Schroeder backward integration of the channel-summed energy,
/// fitted over the -5 to -35 dB span of the decay curve.
pub fn estimate_rt60(ir: &StereoWaveform) -> Result<f64> {
    if ir.duration_seconds() < MIN_IR_SECONDS {
        return Err(Error::IrTooShort);
    }
    let energy: Vec<f64> = ir
        .left()
        .iter()
        .zip(ir.right())
        .map(|(&l, &r)| (l as f64).powi(2) + (r as f64).powi(2))
        .collect();
    let mut edc = vec![0.0; energy.len()];
    let mut acc = 0.0;
    for i in (0..energy.len()).rev() {
        acc += energy[i];
        edc[i] = acc;
    }
    let total = edc[0];
    if total <= 0.0 {
        return Err(Error::IrTooShort);
    }
    let db: Vec<f64> = edc.iter().map(|&e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&d| d <= -5.0).ok_or(Error::IrTooShort)?;
    let end = db.iter().position(|&d| d <= -35.0).ok_or(Error::IrTooShort)?;
    let rate = ir.sample_rate() as f64;
    if ((end - start) as f64) / rate < MIN_DECAY_SECONDS {
        return Err(Error::IrTooShort);
    }
    // Least-squares line through (t, dB) over the segment.
    let n = (end - start + 1) as f64;
    let (mut st, mut sd, mut stt, mut std) = (0.0, 0.0, 0.0, 0.0);
    for (i, d) in db.iter().enumerate().take(end + 1).skip(start) {
        let t = i as f64 / rate;
        st += t;
        sd += d;
        stt += t * t;
        std += t * d;
    }
    let slope = (n * std - st * sd) / (n * stt - st * st);
    if !(slope < 0.0) {
        return Err(Error::IrTooShort);
    }
    Ok(-60.0 / slope)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponseEntry {
    pub name: String,
    pub audio: StereoWaveform,
    pub rt60: f64,
}

impl ImpulseResponseEntry {
    pub fn new(name: impl Into<String>, audio: StereoWaveform) -> Result<Self> {
        let rt60 = estimate_rt60(&audio)?;
        Ok(Self {
            name: name.into(),
            audio,
            rt60,
        })
    }
}

/// Parameters of one send.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverbSendConfig {
    pub low_shelf_hz: f64,
    pub high_shelf_hz: f64,
    pub shelf_gain_db: f64,
    pub shelf_q: f64,
    pub wet_gain: f64,
}

impl ReverbSendConfig {
    /// Draws shelf cutoffs uniformly from the configured ranges.
    pub fn sample<R: Rng>(rng: &mut R, cfg: &ReverbConfig) -> Self {
        let draw = |rng: &mut R, r: Range| {
            if r.max > r.min {
                rng.gen_range(r.min..=r.max)
            } else {
                r.min
            }
        };
        Self {
            low_shelf_hz: draw(rng, cfg.low_shelf_hz),
            high_shelf_hz: draw(rng, cfg.high_shelf_hz),
            shelf_gain_db: cfg.shelf_gain_db,
            shelf_q: cfg.shelf_q,
            wet_gain: cfg.wet_gain,
        }
    }
}

/// The send's EQ: low shelf then high shelf.
pub fn shelve(x: &[f32], sample_rate: f64, cfg: &ReverbSendConfig) -> Vec<f32> {
    let low = BiquadCoeffs::low_shelf(sample_rate, cfg.low_shelf_hz, cfg.shelf_gain_db, cfg.shelf_q);
    let high = BiquadCoeffs::high_shelf(sample_rate, cfg.high_shelf_hz, cfg.shelf_gain_db, cfg.shelf_q);
    let (mut a, mut b) = (Biquad::new(low), Biquad::new(high));
    x.iter()
        .map(|&v| b.process(a.process(v as f64)) as f32)
        .collect()
}

/// Dry signal plus `wet_gain` times the shelved copy convolved with `ir`, trimmed to
/// the input length. A scalar gain is applied if the sum would clip.
pub fn reverb_send(
    w: &StereoWaveform,
    ir: &ImpulseResponseEntry,
    cfg: &ReverbSendConfig,
) -> Result<StereoWaveform> {
    if ir.audio.sample_rate() != w.sample_rate() {
        return Err(Error::SampleRateMismatch {
            expected: w.sample_rate(),
            got: ir.audio.sample_rate(),
        });
    }
    if cfg.wet_gain == 0.0 || w.is_empty() {
        return Ok(w.clone());
    }
    let rate = w.sample_rate() as f64;
    let wet = |x: &[f32], h: &[f32]| -> Vec<f32> {
        let shelved: Vec<f64> = shelve(x, rate, cfg).iter().map(|&v| v as f64).collect();
        let h: Vec<f64> = h.iter().map(|&v| v as f64).collect();
        let y = convolve(&shelved, &h);
        x.iter()
            .zip(&y)
            .map(|(&d, &r)| (d as f64 + cfg.wet_gain * r) as f32)
            .collect()
    };
    let (l, r) = par::join(
        || wet(w.left(), ir.audio.left()),
        || wet(w.right(), ir.audio.right()),
    );
    let out = w.with_channels(l, r);
    let peak = out.peak();
    Ok(if peak > 1.0 {
        out.scaled(1.0 / peak as f64)
    } else {
        out
    })
}

/// RNG stream for one stem of one song, independent of processing order.
pub fn stem_rng(seed: u64, song_id: &str, stem: StemType) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(song_id.as_bytes());
    h.update([0u8]);
    h.update(stem.as_str().as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    /// One send from the long-RT pool.
    Train,
    /// A pre-reverb send from the short-RT pool, then the train send.
    Inference,
}

/// Impulse responses with cached RT60 estimates.
#[derive(Debug, Clone, Default)]
pub struct IrLibrary {
    pub entries: Vec<ImpulseResponseEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedRt60 {
    bytes: u64,
    rt60: f64,
}

impl IrLibrary {
    pub fn new(entries: Vec<ImpulseResponseEntry>) -> Self {
        Self { entries }
    }

    /// Loads every `.wav` in `dir` (sorted by file name). RT60 values are read from
    /// the sidecar cache when the file size matches, and the cache is refreshed.
    /// IRs whose RT60 cannot be estimated are skipped with a warning.
    pub fn load_dir(dir: &Path, session_rate: u32, resample: bool) -> Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
            })
            .collect();
        files.sort();
        let cache_path = dir.join(RT60_CACHE_FILE);
        let mut cache: BTreeMap<String, CachedRt60> = fs::read_to_string(&cache_path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default();
        let loaded = par::map(&files, |p| -> Result<(String, u64, StereoWaveform)> {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let bytes = fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
            let audio = crate::wav::load_for_session(p, session_rate, resample)?;
            Ok((name, bytes, audio))
        });
        let mut entries = Vec::new();
        for item in loaded {
            let (name, bytes, audio) = item?;
            let rt60 = match cache.get(&name) {
                Some(c) if c.bytes == bytes => c.rt60,
                _ => match estimate_rt60(&audio) {
                    Ok(rt) => {
                        cache.insert(name.clone(), CachedRt60 { bytes, rt60: rt });
                        rt
                    }
                    Err(e) => {
                        log::warn!("skipping impulse response {name}: {e}");
                        continue;
                    }
                },
            };
            entries.push(ImpulseResponseEntry { name, audio, rt60 });
        }
        if let Ok(json) = serde_json::to_string_pretty(&cache) {
            if let Err(e) = fs::write(&cache_path, json) {
                log::warn!("could not update {}: {e}", cache_path.display());
            }
        }
        Ok(Self { entries })
    }

    pub fn pool(&self, rt60: Range) -> Vec<&ImpulseResponseEntry> {
        self.entries.iter().filter(|e| rt60.contains(e.rt60)).collect()
    }
}

fn require_pool(lib: &IrLibrary, range: Range) -> Result<Vec<&ImpulseResponseEntry>> {
    let pool = lib.pool(range);
    if pool.is_empty() {
        return Err(Error::EmptyIrPool {
            min_s: range.min,
            max_s: range.max,
        });
    }
    Ok(pool)
}

/// What one send applied, for manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SendRecord {
    pub ir: String,
    pub rt60_s: f64,
    #[serde(flatten)]
    pub send: ReverbSendConfig,
}

fn random_send(
    w: &StereoWaveform,
    pool: &[&ImpulseResponseEntry],
    rng: &mut ChaCha8Rng,
    cfg: &ReverbConfig,
) -> Result<(StereoWaveform, SendRecord)> {
    let ir = pool[rng.gen_range(0..pool.len())];
    let send = ReverbSendConfig::sample(rng, cfg);
    let out = reverb_send(w, ir, &send)?;
    Ok((
        out,
        SendRecord {
            ir: ir.name.clone(),
            rt60_s: ir.rt60,
            send,
        },
    ))
}

/// Augments one stem. Ineligible stems are returned unchanged with no records.
pub fn augment_stem(
    w: &StereoWaveform,
    song_id: &str,
    stem: StemType,
    library: &IrLibrary,
    mode: AugmentMode,
    seed: u64,
    cfg: &ReverbConfig,
) -> Result<(StereoWaveform, Vec<SendRecord>)> {
    if !stem.reverb_eligible() {
        return Ok((w.clone(), Vec::new()));
    }
    let train = require_pool(library, cfg.train_rt60_s)?;
    let mut rng = stem_rng(seed, song_id, stem);
    let mut records = Vec::new();
    let mut current = w.clone();
    if mode == AugmentMode::Inference {
        let pre = require_pool(library, cfg.pre_reverb_rt60_s)?;
        let (out, rec) = random_send(&current, &pre, &mut rng, cfg)?;
        current = out;
        records.push(rec);
    }
    let (out, rec) = random_send(&current, &train, &mut rng, cfg)?;
    records.push(rec);
    Ok((out, records))
}

/// Adds reverb sends to the vocals and other stems; drums and bass pass through.
pub fn augment_reverb(
    stems: &StemSet,
    library: &IrLibrary,
    mode: AugmentMode,
    seed: u64,
    cfg: &ReverbConfig,
) -> Result<StemSet> {
    stems.try_map(|stem, w| {
        augment_stem(w, stems.song_id(), stem, library, mode, seed, cfg).map(|(w, _)| w)
    })
}
