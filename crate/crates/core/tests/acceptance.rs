//! Acceptance suite: one PASS/FAIL line per criterion group.
//!
//! Runs without the libtest harness so the report always prints. Exits non-zero if
//! any group fails.

use std::f64::consts::{PI, SQRT_2};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use fxnorm_core::config::{
    DynamicsConfig, EqConfig, FeatureConfig, LossConfig, OnsetConfig, PanGainEstimator, PreprocessConfig,
    ReverbConfig,
};
use fxnorm_core::dynamics::{compress, detect_onsets, measure_peaks, normalize_drc, CompressorSettings, PeakTarget};
use fxnorm_core::eq::{match_eq, stem_mean_spectrum, AverageSpectrum};
use fxnorm_core::evaluation::{mape_report, mix_features, perceptual_filter, stereo_invariant_loss, LossVariant};
use fxnorm_core::filter::{Biquad, BiquadCoeffs};
use fxnorm_core::fixtures::{self, FixtureSpec};
use fxnorm_core::loudness::{integrated_loudness, normalize_loudness};
use fxnorm_core::panning::{panning_spectrum, repan, AveragePanning};
use fxnorm_core::pipeline::{
    analyze_dataset, check_contract, normalize_corpus, AnalyzeOptions, ContractTolerance, Dataset,
    NormalizeOptions, Stage,
};
use fxnorm_core::reverb::{
    augment_stem, estimate_rt60, reverb_send, shelve, AugmentMode, ImpulseResponseEntry, IrLibrary,
    ReverbSendConfig,
};
use fxnorm_core::stft::{stft, StftParams};
use fxnorm_core::wav::{self, BitDepth};
use fxnorm_core::{StemType, StereoWaveform};

const SR: u32 = 44_100;

/// Outcome of one criterion group: a verdict plus the measured values.
struct Verdict {
    pass: bool,
    detail: String,
}

/// Collects sub-checks of one group.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, note: String) {
        if !ok {
            self.failed.push(note.clone());
        }
        self.notes.push(note);
    }

    fn finish(self) -> Verdict {
        let pass = self.failed.is_empty();
        let detail = if pass { self.notes.join("; ") } else { format!("failed: {}", self.failed.join("; ")) };
        Verdict { pass, detail }
    }
}

fn stereo(l: Vec<f32>, r: Vec<f32>, sr: u32) -> StereoWaveform {
    StereoWaveform::new(l, r, sr).unwrap()
}

fn sine(freq: f64, amp: f64, seconds: f64, sr: u32) -> Vec<f32> {
    let n = (seconds * sr as f64) as usize;
    (0..n).map(|i| (amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()) as f32).collect()
}

fn noise(n: usize, amp: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n).map(|_| (amp * rng.gen_range(-1.0..1.0)) as f32).collect()
}

fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

fn wrap(phase: f64) -> f64 {
    (phase + PI).rem_euclid(2.0 * PI) - PI
}

fn loudness() -> Verdict {
    let start = Instant::now();
    let mut c = Checks::default();
    // Calibration tone in one channel of a stereo file; channel powers add, so the
    // same tone in both channels reads about 0 LUFS.
    for sr in [48_000, SR] {
        let s = sine(997.0, 1.0, 5.0, sr);
        let one = integrated_loudness(&stereo(s.clone(), vec![0.0; s.len()], sr)).unwrap().integrated_lufs.unwrap();
        let both = integrated_loudness(&stereo(s.clone(), s, sr)).unwrap().integrated_lufs.unwrap();
        c.check((one + 3.01).abs() <= 0.1, format!("997 Hz sine at {sr} Hz reads {one:.3} LUFS"));
        c.check((both - 0.0).abs() <= 0.1, format!("in both channels {both:.3} LUFS"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let n = (rng.gen_range(3.0..8.0) * SR as f64) as usize;
        let amp = 10f64.powf(rng.gen_range(-2.0..-0.3));
        let (l, r) = match i % 3 {
            0 => (noise(n, amp, &mut rng), noise(n, amp * rng.gen_range(0.2..1.0), &mut rng)),
            1 => {
                let s = sine(rng.gen_range(60.0..8_000.0), amp, n as f64 / SR as f64, SR);
                (s.clone(), s.iter().map(|v| v * 0.5).collect())
            }
            _ => {
                // Gated bursts: half the blocks are near-silent.
                let x: Vec<f32> = noise(n, amp, &mut rng)
                    .iter()
                    .enumerate()
                    .map(|(j, v)| if (j / 22_050) % 2 == 0 { *v } else { v * 1e-3 })
                    .collect();
                (x.clone(), x)
            }
        };
        let target = rng.gen_range(-40.0..-10.0);
        let out = normalize_loudness(&stereo(l, r, SR), target, 60.0).unwrap();
        let got = integrated_loudness(&out.audio).unwrap().integrated_lufs.unwrap();
        worst = worst.max((got - target).abs());
    }
    c.check(worst <= 0.1, format!("20 random stems within {worst:.4} LU of target"));
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 5.0, format!("{secs:.2} s"));
    c.finish()
}

fn eq() -> Verdict {
    let mut c = Checks::default();
    let cfg = EqConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 180 * SR as usize;
    let white = stereo(noise(n, 0.2, &mut rng), noise(n, 0.2, &mut rng), SR);
    let bell = BiquadCoeffs::peaking(SR as f64, 1_000.0, 6.0, 1.0);
    let colored = stereo(Biquad::filter(bell, white.left()), Biquad::filter(bell, white.right()), SR);
    let target = stem_mean_spectrum(&white, &cfg).unwrap();

    let start = Instant::now();
    let matched = match_eq(&colored, &target, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 30.0, format!("3-minute stem matched in {secs:.1} s"));

    let band_dev = |a: &AverageSpectrum, b: &AverageSpectrum| {
        (0..a.bins())
            .filter(|&k| (100.0..=10_000.0).contains(&a.bin_frequency(k)))
            .map(|k| db(a.magnitude[k] / b.magnitude[k]).abs())
            .fold(0.0f64, f64::max)
    };
    let dev = band_dev(&stem_mean_spectrum(&matched, &cfg).unwrap(), &target);
    c.check(dev <= 1.0, format!("+6 dB bell corrected to {dev:.3} dB"));

    // Lag of the input/output cross-correlation peak.
    let (x, y) = (&colored.left()[SR as usize..SR as usize * 7], &matched.left()[SR as usize..SR as usize * 7]);
    let xcorr = |lag: isize| -> f64 {
        let m = x.len() as isize;
        (64..m - 64).map(|i| x[i as usize] as f64 * y[(i + lag) as usize] as f64).sum()
    };
    let best = (-50..=50).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();
    c.check(best == 0, format!("cross-correlation peak at lag {best}"));

    let short = white.truncated(30 * SR as usize);
    let own = stem_mean_spectrum(&short, &cfg).unwrap();
    let same = stem_mean_spectrum(&match_eq(&short, &own, &cfg).unwrap(), &cfg).unwrap();
    let dev = band_dev(&same, &own);
    c.check(dev < 0.1, format!("own-spectrum target moves {dev:.4} dB"));
    c.finish()
}

/// Bins below the re-pan cutoff excluded from the per-bin checks.
const GUARD_BINS: usize = 16;

fn panning() -> Verdict {
    let mut c = Checks::default();
    let cfg = PreprocessConfig::default().panning;
    let params = StftParams::with_hop_fraction(cfg.fft_size, cfg.hop_fraction).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // On a 16-bit grid the panned channels stay exactly proportional in f32.
    let src: Vec<f32> =
        noise(4 * SR as usize, 0.4, &mut rng).iter().map(|v| (v * 32_768.0).round() / 32_768.0).collect();
    let cutoff_bin = (cfg.cutoff_hz.get(StemType::Other) * cfg.fft_size as f64 / SR as f64) as usize;
    let target = AveragePanning {
        similarity: vec![1.0; params.bins()],
        fft_size: cfg.fft_size,
        sample_rate: SR,
        stem_type: StemType::Other,
    };

    let (mut psi_err, mut lr_db, mut phase_err) = (0.0f64, 0.0f64, 0.0f64);
    for alpha in [0.0f64, 0.25, 0.5, 0.75, 1.0] {
        let l: Vec<f32> = src.iter().map(|&v| ((1.0 - alpha) * v as f64) as f32).collect();
        let r: Vec<f32> = src.iter().map(|&v| (alpha * v as f64) as f32).collect();
        let w = stereo(l, r, SR);
        let sl = stft(w.left(), params, SR).unwrap();
        let sr = stft(w.right(), params, SR).unwrap();
        let p = panning_spectrum(&sl, &sr, PanGainEstimator::Exact).unwrap();
        let expect = 2.0 * alpha * (1.0 - alpha) / ((1.0 - alpha).powi(2) + alpha * alpha);
        for t in 0..p.frames {
            for (k, &psi) in p.psi_frame(t).iter().enumerate() {
                if sl.magnitude_frame(t)[k] + sr.magnitude_frame(t)[k] > 1e-9 {
                    psi_err = psi_err.max((psi - expect).abs());
                }
            }
        }

        let out = repan(&w, &target, &cfg).unwrap();
        let ol = stft(out.left(), params, SR).unwrap();
        let or = stft(out.right(), params, SR).unwrap();
        for t in 2..ol.frames() - 2 {
            let (ml, mr) = (ol.magnitude_frame(t), or.magnitude_frame(t));
            let peak = ml.iter().chain(mr).fold(0.0f64, |m, &v| m.max(v));
            // Bins next to the cutoff pick up window leakage from the untouched band.
            for k in 1..cutoff_bin - GUARD_BINS {
                if ml[k].min(mr[k]) > 1e-3 * peak {
                    lr_db = lr_db.max(db(ml[k] / mr[k]).abs());
                }
                // Source phases exist only where both input channels carry signal.
                if alpha > 0.0 && alpha < 1.0 {
                    for (o, s) in [(&ol, &sl), (&or, &sr)] {
                        if o.magnitude_frame(t)[k] > 1e-3 * peak {
                            let d = wrap(o.phase_frame(t)[k] - s.phase_frame(t)[k]).abs();
                            phase_err = phase_err.max(d);
                        }
                    }
                }
            }
        }
    }
    c.check(psi_err <= 1e-6, format!("similarity off the closed form by {psi_err:.2e}"));
    c.check(lr_db <= 1.0, format!("centered output L/R within {lr_db:.4} dB"));
    c.check(phase_err <= 1e-3, format!("phase moved {phase_err:.2e} rad"));
    c.finish()
}

fn bursts(times: &[f64], amps: &[f32], seconds: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut x = vec![0.0f32; (seconds * SR as f64) as usize];
    for (&t, &a) in times.iter().zip(amps) {
        let s = (t * SR as f64) as usize;
        for n in 0..(0.2 * SR as f64) as usize {
            if s + n < x.len() {
                let env = (-(n as f64) / (0.03 * SR as f64)).exp() as f32;
                x[s + n] += a * env * rng.gen_range(-1.0f32..1.0);
            }
        }
    }
    x
}

fn dynamics() -> Verdict {
    let mut c = Checks::default();
    let cfg = DynamicsConfig::default();

    let s = sine(440.0, 10f64.powf(-6.0 / 20.0), 2.0, SR);
    let comp = CompressorSettings { threshold_db: -20.0, ratio: 4.0, attack_ms: 0.01, release_ms: 400.0, knee_db: 0.0 };
    let y = compress(&stereo(s.clone(), s.clone(), SR), &comp).unwrap();
    let tail = db(y.left()[SR as usize..].iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64);
    c.check((tail + 16.5).abs() <= 0.2, format!("-6 dBFS sine settles at {tail:.2} dBFS"));

    let mut clicks = vec![0.0f32; (5.5 * SR as f64) as usize];
    for i in 0..10 {
        clicks[((0.25 + 0.5 * i as f64) * SR as f64) as usize] = 0.5;
    }
    let w = stereo(clicks.clone(), clicks, SR);
    for bands in [16, 128] {
        let on = detect_onsets(&w, bands, &OnsetConfig::default()).unwrap();
        c.check(on.len() == 10, format!("{} of 10 clicks at {bands} bands", on.len()));
    }

    let mut met = 0;
    let mut worst_margin = f64::INFINITY;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spacing = 0.1 + 0.01 * seed as f64;
        let times: Vec<f64> = (0..24).map(|i| 0.05 + spacing * i as f64).collect();
        let amps: Vec<f32> = (0..24).map(|_| rng.gen_range(0.3f32..0.6)).collect();
        let secs = times[23] + 0.4;
        let hits = bursts(&times, &amps, secs, &mut rng);
        let bed = noise(hits.len(), 0.05, &mut rng);
        let x: Vec<f32> = hits.iter().zip(&bed).map(|(a, b)| a + b).collect();
        let stem = stereo(x.clone(), x, SR).peak_normalized(cfg.peak_normalize_db);
        let before = measure_peaks(&stem, 128, &cfg.onset).unwrap().unwrap();
        let target = PeakTarget { mu: before.mu - 7.0, sigma: 1.0 };
        let out = normalize_drc(&stem, StemType::Drums, target, &cfg).unwrap();
        let after = measure_peaks(&out.audio, 128, &cfg.onset).unwrap().unwrap();
        if out.satisfied && after.mu <= target.bound() {
            met += 1;
        }
        worst_margin = worst_margin.min(target.bound() - after.mu);
    }
    c.check(met == 10, format!("{met}/10 percussive stems under the peak bound (min margin {worst_margin:.2} dB)"));

    let unity = CompressorSettings { ratio: 1.0, ..comp };
    let x = stereo(s.clone(), s, SR);
    c.check(compress(&x, &unity).unwrap() == x, "ratio 1 bit-exact".into());
    c.finish()
}

fn reverb() -> Verdict {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dry = stereo(noise(SR as usize, 0.3, &mut rng), noise(SR as usize, 0.3, &mut rng), SR);
    let ir = ImpulseResponseEntry {
        name: "impulse".into(),
        audio: stereo(vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0], SR),
        rt60: 0.0,
    };
    let send = ReverbSendConfig {
        low_shelf_hz: 600.0,
        high_shelf_hz: 8_000.0,
        shelf_gain_db: -30.0,
        shelf_q: 0.707,
        wet_gain: 0.5,
    };
    c.check(
        reverb_send(&dry, &ir, &ReverbSendConfig { wet_gain: 0.0, ..send }).unwrap() == dry,
        "wet gain 0 bit-exact".into(),
    );
    let out = reverb_send(&dry, &ir, &send).unwrap();
    let mut err = 0.0f64;
    for (o, d) in [(out.left(), dry.left()), (out.right(), dry.right())] {
        let shelved = shelve(d, SR as f64, &send);
        for i in 0..d.len() {
            err = err.max((o[i] as f64 - (d[i] as f64 + 0.5 * shelved[i] as f64)).abs());
        }
    }
    c.check(err <= 1e-5, format!("impulse send off dry + shelved by {err:.2e}"));

    let mut worst = 0.0f64;
    for (i, rt) in [0.5, 1.2, 2.0, 3.5].into_iter().enumerate() {
        let ir = fixtures::synthetic_ir(rt, rt * 1.2, SR, 30 + i as u64).unwrap();
        worst = worst.max((estimate_rt60(&ir).unwrap() / rt - 1.0).abs());
    }
    c.check(worst <= 0.1, format!("RT60 estimates within {:.1}%", 100.0 * worst));

    let tmp = tempfile::tempdir().unwrap();
    fixtures::write_ir_library(&tmp.path().join("irs"), SR, 2).unwrap();
    let lib = IrLibrary::load_dir(&tmp.path().join("irs"), SR, false).unwrap();
    let vocals = fixtures::synth_stem(0, StemType::Vocals, &FixtureSpec { seconds: 2.0, ..Default::default() }).unwrap();
    let render = |seed: u64, name: &str| -> Vec<u8> {
        let (w, _) =
            augment_stem(&vocals, "song", StemType::Vocals, &lib, AugmentMode::Inference, seed, &ReverbConfig::default())
                .unwrap();
        let p = tmp.path().join(name);
        wav::write_audio(&p, &w, BitDepth::Pcm24).unwrap();
        fs::read(p).unwrap()
    };
    let (a, b, other) = (render(5, "a.wav"), render(5, "b.wav"), render(6, "c.wav"));
    c.check(a == b && a != other, "same seed byte-identical, new seed differs".into());
    c.finish()
}

fn contract_run(
    tmp: &Path,
    ds: &Dataset,
    profiles: &fxnorm_core::pipeline::ProfileSet,
    lib: Option<&IrLibrary>,
    name: &str,
) -> Vec<(String, StemType, fxnorm_core::pipeline::ContractCheck)> {
    let cfg = PreprocessConfig::default();
    let mut opts = NormalizeOptions { mode: AugmentMode::Train, seed: 1, keep_intermediates: true, ..Default::default() };
    if lib.is_none() {
        opts.skip.insert(Stage::Reverb);
    }
    let out = tmp.join(name);
    normalize_corpus(ds, &out, profiles, lib, &opts, &cfg, BitDepth::Float32, false).unwrap();
    let drc_dir = format!("{:02}_{}", Stage::Drc.position(), Stage::Drc);
    let mut checks = Vec::new();
    for song in &ds.songs {
        let dir = out.join(&song.id);
        for &k in &ds.stem_types {
            let fin = wav::read_audio(dir.join(format!("{k}.wav"))).unwrap();
            let drc = wav::read_audio(dir.join("stages").join(&drc_dir).join(format!("{k}.wav"))).unwrap();
            let check = check_contract(&fin, &drc, &profiles[&k], &cfg, &ContractTolerance::default()).unwrap();
            checks.push((song.id.clone(), k, check));
        }
    }
    checks
}

fn pipeline() -> Verdict {
    let mut c = Checks::default();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let (ds, profiles, checks) = pool.install(|| {
        fixtures::write_corpus(&root, &FixtureSpec::default()).unwrap();
        let ds = Dataset::scan(&root, &StemType::ALL).unwrap();
        let profiles = analyze_dataset(&ds, &PreprocessConfig::default(), AnalyzeOptions::default()).unwrap();
        let checks = contract_run(tmp.path(), &ds, &profiles, None, "dry");
        (ds, profiles, checks)
    });
    let secs = start.elapsed().as_secs_f64();
    let failing: Vec<String> = checks
        .iter()
        .filter(|(_, _, ch)| !ch.passed())
        .map(|(s, k, ch)| format!("{s}/{k} {ch:?}"))
        .collect();
    let worst = checks.iter().map(|(_, _, ch)| ch.spectrum_max_dev_db).fold(0.0f64, f64::max);
    c.check(
        failing.is_empty(),
        format!(
            "{}/{} stems meet loudness, spectrum, panning and peak targets (worst spectrum {worst:.2} dB){}",
            checks.len() - failing.len(),
            checks.len(),
            if failing.is_empty() { String::new() } else { format!(": {}", failing.join(", ")) }
        ),
    );
    c.check(secs < 180.0, format!("3 songs x 6 s end to end on one thread in {secs:.1} s"));

    // Augmented outputs are reported, not graded.
    fixtures::write_ir_library(&tmp.path().join("irs"), SR, 3).unwrap();
    let lib = IrLibrary::load_dir(&tmp.path().join("irs"), SR, false).unwrap();
    let aug = contract_run(tmp.path(), &ds, &profiles, Some(&lib), "augmented");
    let count = |f: fn(&fxnorm_core::pipeline::ContractCheck) -> bool| aug.iter().filter(|(_, _, ch)| f(ch)).count();
    println!(
        "INFO pipeline with reverb: loudness {}/{n}, spectrum {}/{n}, panning {}/{n}, peaks {}/{n}",
        count(|ch| ch.loudness_ok),
        count(|ch| ch.spectrum_ok),
        count(|ch| ch.similarity_ok),
        count(|ch| ch.peaks_ok),
        n = aug.len()
    );
    c.finish()
}

/// Direct DFT magnitudes of the filtered signal, center-padded Hann frames.
fn brute_magnitudes(x: &[f64], rho: &[f64], n_fft: usize, hop: usize) -> Vec<Vec<f64>> {
    let half = (rho.len() - 1) / 2;
    let filtered: Vec<f64> = (0..x.len())
        .map(|i| {
            (0..rho.len())
                .filter_map(|j| (i + half).checked_sub(j).filter(|&k| k < x.len()).map(|k| rho[j] * x[k]))
                .sum()
        })
        .collect();
    let frames = x.len().div_ceil(hop) + 1;
    (0..frames)
        .map(|t| {
            let frame: Vec<f64> = (0..n_fft)
                .map(|n| {
                    let i = (t * hop + n) as isize - (n_fft / 2) as isize;
                    let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / n_fft as f64).cos();
                    if i >= 0 && (i as usize) < x.len() { filtered[i as usize] * w } else { 0.0 }
                })
                .collect();
            (0..=n_fft / 2)
                .map(|k| {
                    frame
                        .iter()
                        .enumerate()
                        .map(|(n, v)| v * Complex::from_polar(1.0, -2.0 * PI * ((k * n) % n_fft) as f64 / n_fft as f64))
                        .sum::<Complex<f64>>()
                        .norm()
                })
                .collect()
        })
        .collect()
}

fn losses() -> Verdict {
    let mut c = Checks::default();
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 2 * SR as usize;
    let y = stereo(noise(n, 0.3, &mut rng), noise(n, 0.2, &mut rng), SR);
    let y_hat = stereo(noise(n, 0.25, &mut rng), noise(n, 0.3, &mut rng), SR);
    for v in [LossVariant::A, LossVariant::B] {
        let same = stereo_invariant_loss(&y, &y, v, &cfg).unwrap().total(v);
        let a = stereo_invariant_loss(&y, &y_hat, v, &cfg).unwrap().total(v);
        let b = stereo_invariant_loss(&y.swapped(), &y_hat.swapped(), v, &cfg).unwrap().total(v);
        c.check(same == 0.0, format!("variant {v} identity {same}"));
        c.check((a - b).abs() <= 1e-12, format!("variant {v} swap moves {:.1e}", (a - b).abs()));
    }

    let n = 3_072;
    let tone = |f: f64, a: f64| -> Vec<f32> {
        (0..n).map(|i| (a * (2.0 * PI * f * i as f64 / SR as f64).sin()) as f32).collect()
    };
    let add = |a: Vec<f32>, b: Vec<f32>| -> Vec<f32> { a.iter().zip(&b).map(|(x, y)| x + y).collect() };
    let y = stereo(add(tone(440.0, 0.5), tone(3_000.0, 0.1)), add(tone(440.0, 0.3), tone(5_000.0, 0.2)), SR);
    let h = stereo(add(tone(450.0, 0.45), tone(3_100.0, 0.12)), add(tone(440.0, 0.3), tone(5_000.0, 0.1)), SR);
    let got = stereo_invariant_loss(&y, &h, LossVariant::A, &cfg).unwrap();
    let rho = perceptual_filter(SR, &cfg).unwrap();
    let hop = (cfg.fft_size as f64 * cfg.hop_fraction) as usize;
    let combine = |w: &StereoWaveform, sign: f64| -> Vec<f64> {
        w.left().iter().zip(w.right()).map(|(&a, &b)| a as f64 + sign * b as f64).collect()
    };
    let mut err = 0.0f64;
    for (sign, sc, l1, l2) in [(1.0, got.sc_sum, got.l1log_sum, got.l2_sum), (-1.0, got.sc_diff, got.l1log_diff, got.l2_diff)] {
        let ym = brute_magnitudes(&combine(&y, sign), &rho, cfg.fft_size, hop);
        let hm = brute_magnitudes(&combine(&h, sign), &rho, cfg.fft_size, hop);
        let (mut num, mut den, mut e1, mut e2, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (a, b) in ym.iter().flatten().zip(hm.iter().flatten()) {
            num += (a - b) * (a - b);
            den += a * a;
            e1 += ((a + cfg.log_epsilon).ln() - (b + cfg.log_epsilon).ln()).abs();
            e2 += (a - b) * (a - b);
            count += 1.0;
        }
        for (g, e) in [(sc, (num / den).sqrt()), (l1, e1 / count), (l2, e2 / count)] {
            err = err.max((g - e).abs());
        }
    }
    c.check(err <= 1e-9, format!("direct DFT oracle agrees to {err:.1e}"));
    c.finish()
}

fn metrics() -> Verdict {
    let mut c = Checks::default();
    let cfg = FeatureConfig::default();
    let s = sine(1_000.0, 0.5, 2.0, SR);
    let r = mix_features(&stereo(s.clone(), s, SR), &cfg).unwrap();
    let bin = SR as f64 / cfg.fft_size as f64;
    let centroid = r.spectral.centroid.mean;
    let crest = r.dynamic.crest_factor.mean;
    c.check((centroid - 1_000.0).abs() <= bin, format!("1 kHz sine centroid {centroid:.2} Hz"));
    c.check((crest / SQRT_2 - 1.0).abs() <= 0.02, format!("crest {crest:.4}"));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 3 * SR as usize;
    let x = stereo(noise(n, 0.3, &mut rng), noise(n, 0.1, &mut rng), SR);
    let rep = mape_report(&x, &x, &cfg).unwrap();
    let worst = rep.mape_by_feature.values().fold(0.0f64, |m, v| m.max(v.abs()));
    c.check(worst == 0.0 && rep.mape_by_feature.len() == 10, format!("self MAPE {worst} over {} features", rep.mape_by_feature.len()));

    let m = noise(n, 0.3, &mut rng);
    let pan = mix_features(&stereo(m.clone(), m, SR), &cfg).unwrap().panning_rms;
    let pan_max = pan.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    c.check(pan_max == 0.0, format!("mono panning RMS {pan_max}"));
    c.finish()
}

fn config() -> Verdict {
    let mut c = Checks::default();
    let p = PreprocessConfig::default();
    let mut pin = |ok: bool, what: &str| c.check(ok, what.to_string());
    pin(p.sample_rate == 44_100, "44.1 kHz session");
    pin(p.eq.fft_size == 65_536 && p.eq.hop_fraction == 0.25 && p.eq.fir_taps == 1001, "EQ 65536/25%/1001 taps");
    pin(p.loudness.pre_eq_target_lufs == -30.0, "pre-EQ -30 LUFS");
    let timing: Vec<(f64, f64)> =
        StemType::ALL.iter().map(|&k| (p.dynamics.timing.get(k).attack_ms, p.dynamics.timing.get(k).release_ms)).collect();
    let expect_timing = [(7.5, 400.0), (10.0, 180.0), (10.0, 500.0), (15.0, 666.0)];
    let order: Vec<StemType> = StemType::ALL.to_vec();
    let by_name = |k: StemType| match k {
        StemType::Vocals => 0,
        StemType::Drums => 1,
        StemType::Bass => 2,
        StemType::Other => 3,
    };
    pin(
        order.iter().zip(&timing).all(|(&k, t)| *t == expect_timing[by_name(k)]),
        "attack/release 7.5/400, 10/180, 10/500, 15/666 ms",
    );
    let thr = p.dynamics.threshold_db.values();
    pin(thr.len() == 16 && thr[0] == -10.0 && thr[15] == -40.0, "thresholds -10 to -40 dB in 2 dB steps");
    let ratios = p.dynamics.ratio.values();
    pin(ratios == [4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0], "ratios 4 to 20 in steps of 2");
    pin(
        StemType::ALL.iter().all(|&k| *p.dynamics.mel_bands.get(k) == if k == StemType::Bass { 16 } else { 128 }),
        "128 mel bands, 16 for bass",
    );
    pin(p.dynamics.peak_normalize_db == -10.0, "peak normalization -10 dB");
    pin(
        p.panning.fft_size == 2048
            && p.panning.hop_fraction == 0.5
            && StemType::ALL.iter().all(|&k| *p.panning.cutoff_hz.get(k) == 16_000.0),
        "panning 2048/50%, 16 kHz cutoff",
    );
    let rv = &p.reverb;
    pin(
        (rv.train_rt60_s.min, rv.train_rt60_s.max, rv.pre_reverb_rt60_s.min, rv.pre_reverb_rt60_s.max)
            == (2.0, 4.0, 1.0, 1.5),
        "RT60 pools 2-4 s and 1-1.5 s",
    );
    pin(
        rv.shelf_gain_db == -30.0
            && (rv.low_shelf_hz.min, rv.low_shelf_hz.max) == (500.0, 700.0)
            && (rv.high_shelf_hz.min, rv.high_shelf_hz.max) == (7_000.0, 10_000.0),
        "shelves -30 dB at 500-700 Hz and 7-10 kHz",
    );
    pin(
        StemType::ALL.iter().filter(|k| k.reverb_eligible()).copied().collect::<Vec<_>>()
            == [StemType::Vocals, StemType::Other],
        "reverb on vocals and other",
    );
    let f = FeatureConfig::default();
    pin(f.fft_size == 2048 && f.hop == 512 && f.running_mean_s == 0.5, "features 2048/512, 0.5 s running mean");
    let l = LossConfig::default();
    pin(l.fft_size == 4096 && l.hop_fraction == 0.25 && l.lowpass_hz == 16_000.0, "loss 4096/25%, 16 kHz low-pass");

    // Everything else is pinned by the stored snapshot.
    let snapshot = serde_json::json!({
        "preprocess": p,
        "features": f,
        "loss": l,
    });
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/default_config.json");
    if std::env::var_os("FXNORM_UPDATE_SNAPSHOT").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, serde_json::to_string_pretty(&snapshot).unwrap() + "\n").unwrap();
    }
    let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    c.check(stored == snapshot, "defaults match the stored snapshot".into());
    c.finish()
}

fn main() -> ExitCode {
    type Group = (&'static str, fn() -> Verdict);
    let groups: [Group; 9] = [
        ("loudness", loudness),
        ("eq", eq),
        ("panning", panning),
        ("dynamics", dynamics),
        ("reverb", reverb),
        ("pipeline", pipeline),
        ("losses", losses),
        ("metrics", metrics),
        ("config", config),
    ];
    let only = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run) in groups {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name} ({:.1} s): {}", start.elapsed().as_secs_f64(), v.detail);
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance group(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
