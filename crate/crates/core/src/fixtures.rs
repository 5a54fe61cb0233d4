//! Deterministic synthetic multitrack corpus for tests, benchmarks and demos.
//!
//! Every song plays the same notes. Songs differ only in their effects: level, tone
//! (a high shelf and a broad presence bell), panning, saturation and width.
//! Each stem carries a quiet, channel-independent noise bed so that every bin has
//! energy and no bin is exactly centered.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{StemSet, StemType, StereoWaveform};
use crate::error::{Error, Result};
use crate::filter::{Biquad, BiquadCoeffs};
use crate::levels::db_to_linear;
use crate::wav::{self, BitDepth};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub songs: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            songs: 3,
            seconds: 6.0,
            sample_rate: 44_100,
            seed: 7,
        }
    }
}

/// Per-song effect settings, cycled when more songs are requested.
struct SongFx {
    gain_db: f64,
    shelf_db: f64,
    bell_db: f64,
    pan: f64,
    drive: f64,
    bed_db: f64,
    /// Hi-hat level relative to kick and snare.
    hat: f64,
    /// Random per-hit level spread (0 plays every hit at full velocity).
    accent: f64,
}

const SONG_FX: [SongFx; 3] = [
    SongFx { gain_db: -4.0, shelf_db: 3.0, bell_db: 0.0, pan: 0.35, drive: 1.0, bed_db: -42.0, hat: 0.12, accent: 0.7 },
    SongFx { gain_db: -13.0, shelf_db: -3.0, bell_db: 2.0, pan: 0.62, drive: 3.0, bed_db: -48.0, hat: 0.3, accent: 0.5 },
    SongFx { gain_db: -20.0, shelf_db: 0.5, bell_db: -2.0, pan: 0.48, drive: 2.5, bed_db: -38.0, hat: 0.45, accent: 0.0 },
];

fn midi_hz(note: f64) -> f64 {
    440.0 * 2f64.powf((note - 69.0) / 12.0)
}

/// Band-limited harmonic tone following a note sequence. Sustained notes get a 10 ms
/// attack and a short release; plucked notes (`decay_s`) a 1 ms attack and an
/// exponential decay.
fn harmonic_line(
    notes: &[f64],
    note_s: f64,
    n: usize,
    sr: f64,
    rolloff: f64,
    vibrato: f64,
    decay_s: Option<f64>,
) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let note_len = (note_s * sr) as usize;
    let ramp = (if decay_s.is_some() { 0.001 } else { 0.01 } * sr) as usize;
    let mut phase = 0.0f64;
    for (i, o) in out.iter_mut().enumerate() {
        let idx = (i / note_len) % notes.len();
        let pos = i % note_len;
        let t = i as f64 / sr;
        let f = midi_hz(notes[idx]) * (1.0 + vibrato * (TAU * 5.0 * t).sin());
        phase = (phase + f / sr).fract();
        let attack = (pos as f64 / ramp as f64).min(1.0);
        let env = match decay_s {
            Some(d) => attack * (-(pos as f64) / (d * sr)).exp(),
            None => attack * ((note_len - pos) as f64 / (4 * ramp) as f64).min(1.0),
        };
        let harmonics = ((16_000.0 / f) as usize).max(1);
        let mut v = 0.0;
        for h in 1..=harmonics {
            v += (TAU * h as f64 * phase).sin() / (h as f64).powf(rolloff);
        }
        *o = env * v;
    }
    out
}

fn drum_kit(n: usize, sr: f64, fx: &SongFx, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let step = (0.25 * sr) as usize;
    let mut hp_prev = 0.0;
    for (hit, start) in (0..n).step_by(step).enumerate() {
        let (kick, snare) = (hit % 4 == 0, hit % 4 == 2);
        let len = step.min(n - start);
        let velocity = 1.0 - fx.accent * rng.gen_range(0.0..1.0);
        let mut phase = 0.0f64;
        for j in 0..len {
            let t = j as f64 / sr;
            let noise: f64 = rng.gen_range(-1.0..1.0);
            let hat = noise - hp_prev;
            hp_prev = noise;
            let mut v = fx.hat * hat * (-t / 0.025).exp();
            if kick {
                phase += (50.0 + 90.0 * (-t / 0.03).exp()) / sr;
                v += 0.9 * (TAU * phase).sin() * (-t / 0.12).exp();
            }
            if snare {
                v += (0.5 * noise + 0.3 * (TAU * 185.0 * t).sin()) * (-t / 0.07).exp();
            }
            out[start + j] += velocity * v;
        }
    }
    out
}

fn source(stem: StemType, n: usize, sr: f64, fx: &SongFx, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match stem {
        StemType::Vocals => {
            let melody = [64.0, 67.0, 69.0, 67.0, 72.0, 71.0, 67.0, 64.0];
            harmonic_line(&melody, 0.75, n, sr, 1.3, 0.006, None)
        }
        StemType::Drums => drum_kit(n, sr, fx, rng),
        StemType::Bass => harmonic_line(&[40.0, 40.0, 43.0, 38.0], 0.75, n, sr, 1.6, 0.0, None),
        StemType::Other => {
            // Plucked arpeggio over a sustained pad.
            let pluck = [52.0, 59.0, 64.0, 59.0, 55.0, 62.0, 67.0, 62.0];
            let a = harmonic_line(&pluck, 0.375, n, sr, 1.2, 0.0, Some(0.12));
            let b = harmonic_line(&[40.0, 43.0, 38.0, 40.0], 1.5, n, sr, 1.8, 0.0, None);
            a.iter().zip(&b).map(|(x, y)| x + 0.3 * y).collect()
        }
    }
}

fn stem_pan(stem: StemType, fx: &SongFx) -> f64 {
    match stem {
        StemType::Vocals => 0.5 + 0.5 * (fx.pan - 0.5),
        StemType::Drums => 0.5 - 0.6 * (fx.pan - 0.5),
        StemType::Bass => 0.5 + 0.3 * (fx.pan - 0.5),
        StemType::Other => fx.pan,
    }
}

/// One synthetic stem of song `song`.
pub fn synth_stem(song: usize, stem: StemType, spec: &FixtureSpec) -> Result<StereoWaveform> {
    let sr = spec.sample_rate as f64;
    let n = (spec.seconds * sr).round() as usize;
    let fx = &SONG_FX[song % SONG_FX.len()];
    let stem_index = StemType::ALL.iter().position(|&k| k == stem).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((song as u64) << 8) ^ stem_index);
    let raw = source(stem, n, sr, fx, &mut rng);

    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let shaped: Vec<f32> = raw
        .iter()
        .map(|v| ((fx.drive * v / peak).tanh() / fx.drive.tanh()) as f32)
        .collect();
    let shaped = Biquad::filter(BiquadCoeffs::high_shelf(sr, 4_000.0, fx.shelf_db, 0.707), &shaped);
    let shaped = Biquad::filter(BiquadCoeffs::peaking(sr, 2_000.0, fx.bell_db, 0.5), &shaped);

    let a = stem_pan(stem, fx);
    let gain = db_to_linear(fx.gain_db);
    let bed = db_to_linear(fx.bed_db);
    let mut channel = |g: f64| -> Vec<f32> {
        shaped
            .iter()
            .map(|&s| (gain * (g * s as f64 + bed * rng.gen_range(-1.0..1.0))) as f32)
            .collect()
    };
    let left = channel(1.0 - a);
    let right = channel(a);
    StereoWaveform::new(left, right, spec.sample_rate)
}

pub fn synth_song(song: usize, spec: &FixtureSpec) -> Result<StemSet> {
    let stems = StemType::ALL
        .iter()
        .map(|&k| Ok((k, synth_stem(song, k, spec)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    StemSet::new(format!("song_{song:02}"), stems)
}

/// Writes `root/song_NN/{vocals,drums,bass,other,mixture}.wav`.
pub fn write_corpus(root: &Path, spec: &FixtureSpec) -> Result<()> {
    for i in 0..spec.songs {
        let set = synth_song(i, spec)?;
        let dir = root.join(set.song_id());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, w) in set.iter() {
            wav::write_audio(dir.join(format!("{k}.wav")), w, BitDepth::Float32)?;
        }
        if let Some(mix) = set.mixture()? {
            wav::write_audio(dir.join("mixture.wav"), &mix, BitDepth::Float32)?;
        }
    }
    Ok(())
}

/// Stereo exponentially decaying noise reaching -60 dB after `rt60` seconds.
pub fn synthetic_ir(rt60: f64, seconds: f64, sample_rate: u32, seed: u64) -> Result<StereoWaveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let n = (seconds * sr) as usize;
    let mut ch = || -> Vec<f32> {
        (0..n)
            .map(|i| (0.5 * 10f64.powf(-3.0 * i as f64 / (rt60 * sr)) * rng.gen_range(-1.0..1.0)) as f32)
            .collect()
    };
    let l = ch();
    let r = ch();
    StereoWaveform::new(l, r, sample_rate)
}

/// Writes a small impulse-response library covering the default training and
/// pre-reverb RT60 ranges.
pub fn write_ir_library(dir: &Path, sample_rate: u32, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, (name, rt60)) in [("room_a", 1.1), ("room_b", 1.4), ("hall_a", 2.5), ("hall_b", 3.5)]
        .into_iter()
        .enumerate()
    {
        let ir = synthetic_ir(rt60, rt60 * 1.1, sample_rate, seed + i as u64)?;
        wav::write_audio(dir.join(format!("{name}.wav")), &ir, BitDepth::Float32)?;
    }
    Ok(())
}
