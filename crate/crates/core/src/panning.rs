//! Stereo panning spectrum and re-panning toward an average similarity curve.
//!
//! Each time-frequency bin is modelled as one source under the linear panning law,
//! `|X_L| = (1 - a) m`, `|X_R| = a m` (or mirrored), where `a <= 0.5` is the gain of the
//! weaker side. The similarity `psi = 2 X_L X_R / (X_L^2 + X_R^2)` is 1 for centered and
//! 0 for hard-panned bins.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::audio::{StemType, StereoWaveform};
use crate::config::{PanGainEstimator, PanningConfig};
use crate::error::{Error, Result};
use crate::filter::savgol_smooth;
use crate::stft::{fold_stereo_frames, process_stereo_frames, Spectrogram, StftParams};

/// Bins with `1 - psi` at or below this are treated as centered.
const CENTER_TOLERANCE: f64 = 1e-9;
/// Panning gains below this are floored before forming gain ratios.
const MIN_PAN_GAIN: f64 = 1e-4;

/// Similarity and side of one bin from its channel magnitudes.
///
/// Returns `(psi, side)` with side `+1` for left-dominant, `-1` for right-dominant and
/// `0` for centered bins. Silent bins count as centered.
#[inline]
pub fn similarity(xl: f64, xr: f64) -> (f64, i8) {
    let den = xl * xl + xr * xr;
    if den == 0.0 {
        return (1.0, 0);
    }
    let psi = (2.0 * xl * xr / den).clamp(0.0, 1.0);
    if 1.0 - psi <= CENTER_TOLERANCE {
        return (1.0, 0);
    }
    let side = if xl > xr { 1 } else { -1 };
    (psi, side)
}

/// Weaker-side panning gain that produces similarity `psi`.
#[inline]
pub fn weaker_gain(psi: f64, estimator: PanGainEstimator) -> f64 {
    let psi = psi.clamp(0.0, 1.0);
    match estimator {
        PanGainEstimator::Approximate => psi / 2.0,
        PanGainEstimator::Exact => {
            if psi <= 0.0 {
                return 0.0;
            }
            // Channel ratio r = a / (1 - a) solves psi = 2r / (1 + r^2), r <= 1.
            let r = (1.0 - (1.0 - psi * psi).max(0.0).sqrt()) / psi;
            r / (1.0 + r)
        }
    }
}

/// `(gain_left, gain_right)` for a weaker-side gain on the given side.
#[inline]
pub fn side_gains(weaker: f64, side: i8) -> (f64, f64) {
    match side {
        1 => (1.0 - weaker, weaker),
        -1 => (weaker, 1.0 - weaker),
        _ => (0.5, 0.5),
    }
}

/// Per-bin panning analysis of a stereo STFT, stored row-major (frame, bin).
#[derive(Debug, Clone, PartialEq)]
pub struct PanningSpectrum {
    pub frames: usize,
    pub bins: usize,
    pub psi: Vec<f64>,
    pub delta_sign: Vec<i8>,
    /// Weaker-side gain, 0.5 for centered bins.
    pub alpha: Vec<f64>,
    pub gains_left: Vec<f64>,
    pub gains_right: Vec<f64>,
}

impl PanningSpectrum {
    pub fn psi_frame(&self, t: usize) -> &[f64] {
        &self.psi[t * self.bins..(t + 1) * self.bins]
    }

    /// Mean of psi over frames, per bin.
    pub fn mean_psi(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.bins];
        for t in 0..self.frames {
            for (o, p) in out.iter_mut().zip(self.psi_frame(t)) {
                *o += p;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.frames.max(1) as f64);
        out
    }
}

/// Panning analysis of two channel spectrograms.
pub fn panning_spectrum(
    left: &Spectrogram,
    right: &Spectrogram,
    estimator: PanGainEstimator,
) -> Result<PanningSpectrum> {
    if left.frames() != right.frames() || left.bins() != right.bins() {
        return Err(Error::DimensionMismatch(format!(
            "left is {}x{}, right is {}x{}",
            left.frames(),
            left.bins(),
            right.frames(),
            right.bins()
        )));
    }
    let n = left.magnitudes().len();
    let mut out = PanningSpectrum {
        frames: left.frames(),
        bins: left.bins(),
        psi: Vec::with_capacity(n),
        delta_sign: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
        gains_left: Vec::with_capacity(n),
        gains_right: Vec::with_capacity(n),
    };
    for (&xl, &xr) in left.magnitudes().iter().zip(right.magnitudes()) {
        let (psi, side) = similarity(xl, xr);
        let a = if side == 0 { 0.5 } else { weaker_gain(psi, estimator) };
        let (gl, gr) = side_gains(a, side);
        out.psi.push(psi);
        out.delta_sign.push(side);
        out.alpha.push(a);
        out.gains_left.push(gl);
        out.gains_right.push(gr);
    }
    Ok(out)
}

/// Corpus-average similarity curve for one stem type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragePanning {
    pub similarity: Vec<f64>,
    pub fft_size: usize,
    pub sample_rate: u32,
    pub stem_type: StemType,
}

/// Streaming mean of psi: running sums per bin plus a frame count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimilarityAccumulator {
    pub sum: Vec<f64>,
    pub frames: u64,
}

impl SimilarityAccumulator {
    pub fn new(bins: usize) -> Self {
        Self {
            sum: vec![0.0; bins],
            frames: 0,
        }
    }

    pub fn add_spectrum(&mut self, p: &PanningSpectrum) -> Result<()> {
        self.check_bins(p.bins)?;
        for t in 0..p.frames {
            self.add_frame(p.psi_frame(t));
        }
        Ok(())
    }

    fn add_frame(&mut self, psi: &[f64]) {
        for (s, v) in self.sum.iter_mut().zip(psi) {
            *s += v;
        }
        self.frames += 1;
    }

    fn check_bins(&self, bins: usize) -> Result<()> {
        if self.sum.len() != bins {
            return Err(Error::DimensionMismatch(format!(
                "accumulator has {} bins, input has {bins}",
                self.sum.len()
            )));
        }
        Ok(())
    }

    /// Adds every frame of a stem without storing its panning spectrum.
    pub fn add_waveform(&mut self, w: &StereoWaveform, cfg: &PanningConfig) -> Result<()> {
        let params = StftParams::with_hop_fraction(cfg.fft_size, cfg.hop_fraction)?;
        self.check_bins(params.bins())?;
        let bins = params.bins();
        let (part, _) = fold_stereo_frames(
            w.left(),
            w.right(),
            params,
            || SimilarityAccumulator::new(bins),
            |acc, l, r| {
                for (s, (a, b)) in acc.sum.iter_mut().zip(l.iter().zip(r)) {
                    *s += similarity(a.norm(), b.norm()).0;
                }
                acc.frames += 1;
            },
            |mut a, b| {
                a.merge(&b);
                a
            },
        )?;
        self.merge(&part);
        Ok(())
    }

    pub fn merge(&mut self, other: &SimilarityAccumulator) {
        for (s, v) in self.sum.iter_mut().zip(&other.sum) {
            *s += v;
        }
        self.frames += other.frames;
    }

    /// Raw mean of psi per bin.
    pub fn mean(&self) -> Result<Vec<f64>> {
        if self.frames == 0 {
            return Err(Error::InvalidParameter(
                "no frames to average similarity over".into(),
            ));
        }
        Ok(self.sum.iter().map(|s| s / self.frames as f64).collect())
    }

    /// Smoothed and clamped average similarity.
    pub fn finish(
        &self,
        stem_type: StemType,
        sample_rate: u32,
        cfg: &PanningConfig,
    ) -> Result<AveragePanning> {
        let mean = self.mean().map_err(|_| Error::NoMeasurableStems(stem_type))?;
        let similarity = savgol_smooth(&mean, cfg.savgol_window, cfg.savgol_order)?
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        Ok(AveragePanning {
            similarity,
            fft_size: cfg.fft_size,
            sample_rate,
            stem_type,
        })
    }
}

/// Average similarity over a sequence of panning spectra.
pub fn corpus_average_similarity<'a>(
    stem_type: StemType,
    sample_rate: u32,
    spectra: impl IntoIterator<Item = &'a PanningSpectrum>,
    cfg: &PanningConfig,
) -> Result<AveragePanning> {
    let mut acc: Option<SimilarityAccumulator> = None;
    for p in spectra {
        acc.get_or_insert_with(|| SimilarityAccumulator::new(p.bins))
            .add_spectrum(p)?;
    }
    acc.ok_or(Error::NoMeasurableStems(stem_type))?
        .finish(stem_type, sample_rate, cfg)
}

/// New magnitudes of one bin, or `None` to leave it untouched.
#[inline]
fn repan_bin(xl: f64, xr: f64, target: f64, cfg: &PanningConfig) -> Option<(f64, f64)> {
    let (psi, side) = similarity(xl, xr);
    if side == 0 {
        return None;
    }
    let (tl, tr) = side_gains(weaker_gain(target, cfg.estimator), side);
    match cfg.estimator {
        PanGainEstimator::Exact => {
            // Under the linear law the source magnitude is X_L + X_R.
            let m = xl + xr;
            Some((tl * m, tr * m))
        }
        PanGainEstimator::Approximate => {
            let (gl, gr) = side_gains(weaker_gain(psi, cfg.estimator), side);
            let limit = crate::levels::db_to_linear(cfg.gain_clamp_db);
            let ratio = |t: f64, g: f64| (t / g.max(MIN_PAN_GAIN)).clamp(1.0 / limit, limit);
            Some((xl * ratio(tl, gl), xr * ratio(tr, gr)))
        }
    }
}

/// Re-pans `w` so its per-bin similarity moves to `target`, keeping each channel's
/// phase. Bins above the stem's cutoff and centered bins are left untouched.
pub fn repan(w: &StereoWaveform, target: &AveragePanning, cfg: &PanningConfig) -> Result<StereoWaveform> {
    let params = StftParams::with_hop_fraction(cfg.fft_size, cfg.hop_fraction)?;
    if target.similarity.len() != params.bins() || target.fft_size != cfg.fft_size {
        return Err(Error::DimensionMismatch(format!(
            "similarity curve has {} bins, analysis needs {}",
            target.similarity.len(),
            params.bins()
        )));
    }
    if w.sample_rate() != target.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: target.sample_rate,
            got: w.sample_rate(),
        });
    }
    let cutoff = *cfg.cutoff_hz.get(target.stem_type);
    let bin_hz = w.sample_rate() as f64 / cfg.fft_size as f64;
    let last_bin = ((cutoff / bin_hz).floor() as usize).min(params.bins() - 1);
    let (l, r) = process_stereo_frames(w.left(), w.right(), params, |_, l, r| {
        for k in 0..=last_bin {
            let (xl, xr) = (l[k].norm(), r[k].norm());
            let Some((ml, mr)) = repan_bin(xl, xr, target.similarity[k], cfg) else {
                continue;
            };
            // A silent channel borrows the other channel's phase.
            let phase_l = if xl > 0.0 { l[k].arg() } else { r[k].arg() };
            let phase_r = if xr > 0.0 { r[k].arg() } else { l[k].arg() };
            l[k] = Complex::from_polar(ml, phase_l);
            r[k] = Complex::from_polar(mr, phase_r);
        }
    })?;
    Ok(w.with_channels(l, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::stft;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect()
    }

    fn panned(alpha: f32, n: usize, seed: u64) -> StereoWaveform {
        let x = noise(n, seed);
        let l = x.iter().map(|v| v * (1.0 - alpha)).collect();
        let r = x.iter().map(|v| v * alpha).collect();
        StereoWaveform::new(l, r, 44_100).unwrap()
    }

    fn analyze(w: &StereoWaveform, est: PanGainEstimator) -> PanningSpectrum {
        let p = StftParams::new(2048, 1024).unwrap();
        let l = stft(w.left(), p, w.sample_rate()).unwrap();
        let r = stft(w.right(), p, w.sample_rate()).unwrap();
        panning_spectrum(&l, &r, est).unwrap()
    }

    fn flat_target(v: f64, stem: StemType) -> AveragePanning {
        AveragePanning {
            similarity: vec![v; 1025],
            fft_size: 2048,
            sample_rate: 44_100,
            stem_type: stem,
        }
    }

    fn bins_db_difference(w: &StereoWaveform, max_hz: f64) -> f64 {
        let p = StftParams::new(2048, 1024).unwrap();
        let l = stft(w.left(), p, 44_100).unwrap();
        let r = stft(w.right(), p, 44_100).unwrap();
        // Skip the analysis window's main lobe and first side lobe next to the cutoff, where
        // untouched content above it leaks back in.
        let kmax = (max_hz / (44_100.0 / 2048.0)) as usize - 4;
        let mut worst: f64 = 0.0;
        for t in 2..l.frames() - 2 {
            let (a, b) = (l.magnitude_frame(t), r.magnitude_frame(t));
            for k in 1..kmax {
                if a[k] > 1e-6 {
                    worst = worst.max((20.0 * (a[k] / b[k]).log10()).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn identical_channels_are_centered() {
        let x = noise(8000, 1);
        let w = StereoWaveform::new(x.clone(), x, 44_100).unwrap();
        let p = analyze(&w, PanGainEstimator::Approximate);
        assert!(p.psi.iter().all(|&v| v == 1.0));
        assert!(p.alpha.iter().all(|&v| v == 0.5));
        assert!(p.delta_sign.iter().all(|&s| s == 0));
    }

    #[test]
    fn silent_right_is_hard_left() {
        let w = panned(0.0, 8000, 2);
        let p = analyze(&w, PanGainEstimator::Approximate);
        for i in 0..p.psi.len() {
            assert_eq!(p.psi[i], 0.0);
            assert_eq!(p.gains_left[i], 1.0);
            assert_eq!(p.gains_right[i], 0.0);
        }
    }

    #[test]
    fn quarter_pan_closed_form() {
        let (psi, side) = similarity(0.75, 0.25);
        assert!((psi - 0.6).abs() < 1e-12);
        assert_eq!(side, 1);
        assert!((weaker_gain(psi, PanGainEstimator::Approximate) - 0.3).abs() < 1e-12);
        assert!((weaker_gain(psi, PanGainEstimator::Exact) - 0.25).abs() < 1e-12);
        let (_, side) = similarity(0.25, 0.75);
        assert_eq!(side, -1);
    }

    proptest! {
        #[test]
        fn exact_inversion_recovers_linear_law(a in 0.0f64..0.5) {
            let (psi, _) = similarity(1.0 - a, a);
            prop_assert!((weaker_gain(psi, PanGainEstimator::Exact) - a).abs() < 1e-7);
        }

        #[test]
        fn spectrum_invariants(xl in 0.0f64..2.0, xr in 0.0f64..2.0) {
            for est in [PanGainEstimator::Approximate, PanGainEstimator::Exact] {
                let (psi, side) = similarity(xl, xr);
                prop_assert!((0.0..=1.0).contains(&psi));
                prop_assert_eq!(side == 0, (1.0 - psi).abs() <= 1e-9);
                let a = if side == 0 { 0.5 } else { weaker_gain(psi, est) };
                let (gl, gr) = side_gains(a, side);
                prop_assert!((gl + gr - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corpus_mean_of_two_constant_stems() {
        let mk = |v: f64| PanningSpectrum {
            frames: 3,
            bins: 4,
            psi: vec![v; 12],
            delta_sign: vec![1; 12],
            alpha: vec![0.0; 12],
            gains_left: vec![0.0; 12],
            gains_right: vec![0.0; 12],
        };
        let (a, b) = (mk(0.4), mk(0.8));
        let mut acc = SimilarityAccumulator::new(4);
        acc.add_spectrum(&a).unwrap();
        acc.add_spectrum(&b).unwrap();
        for v in acc.mean().unwrap() {
            assert!((v - 0.6).abs() < 1e-12);
        }
        let cfg = PanningConfig::default();
        let avg = corpus_average_similarity(StemType::Other, 44_100, [&a, &b], &cfg).unwrap();
        assert!(avg.similarity.iter().all(|v| (v - 0.6).abs() < 1e-9));
        assert!(corpus_average_similarity(StemType::Other, 44_100, [], &cfg).is_err());
    }

    #[test]
    fn streaming_accumulation_matches_spectrum() {
        let w = panned(0.3, 20_000, 3).mixed_with(&panned(0.8, 20_000, 4)).unwrap();
        let cfg = PanningConfig::default();
        let mut streamed = SimilarityAccumulator::new(1025);
        streamed.add_waveform(&w, &cfg).unwrap();
        let mut direct = SimilarityAccumulator::new(1025);
        direct.add_spectrum(&analyze(&w, PanGainEstimator::Exact)).unwrap();
        assert_eq!(streamed.frames, direct.frames);
        for (a, b) in streamed.mean().unwrap().iter().zip(direct.mean().unwrap()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn centered_corpus_averages_to_one() {
        let x = noise(30_000, 5);
        let w = StereoWaveform::new(x.clone(), x, 44_100).unwrap();
        let cfg = PanningConfig::default();
        let mut acc = SimilarityAccumulator::new(1025);
        acc.add_waveform(&w, &cfg).unwrap();
        let avg = acc.finish(StemType::Vocals, 44_100, &cfg).unwrap();
        assert!(avg.similarity.iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn hard_left_to_center_equalizes_channels() {
        let w = panned(0.0, 44_100, 6);
        let out = repan(&w, &flat_target(1.0, StemType::Vocals), &PanningConfig::default()).unwrap();
        assert!(bins_db_difference(&out, 16_000.0) < 1.0);
    }

    #[test]
    fn matching_target_is_identity() {
        let w = panned(0.25, 30_000, 7);
        let target = flat_target(0.6, StemType::Bass);
        let out = repan(&w, &target, &PanningConfig::default()).unwrap();
        let err = w
            .left()
            .iter()
            .zip(out.left())
            .chain(w.right().iter().zip(out.right()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn silence_stays_silent() {
        let w = StereoWaveform::silence(10_000, 44_100);
        let out = repan(&w, &flat_target(0.3, StemType::Drums), &PanningConfig::default()).unwrap();
        assert!(out.left().iter().chain(out.right()).all(|&v| v == 0.0));
    }

    #[test]
    fn reanalysis_converges_and_keeps_side() {
        let w = panned(0.1, 44_100, 8);
        let cfg = PanningConfig::default();
        let target = flat_target(0.7, StemType::Other);
        let out = repan(&w, &target, &cfg).unwrap();
        let before = analyze(&w, PanGainEstimator::Exact);
        let after = analyze(&out, PanGainEstimator::Exact);
        let mean = after.mean_psi();
        let kmax = (16_000.0 / (44_100.0 / 2048.0)) as usize;
        let mad: f64 = mean[1..kmax].iter().map(|v| (v - 0.7).abs()).sum::<f64>() / (kmax - 1) as f64;
        assert!(mad < 0.1, "{mad}");
        for (a, b) in before.delta_sign.iter().zip(&after.delta_sign) {
            assert!(*b == 0 || a == b);
        }
    }

    #[test]
    fn approximate_mode_clamps_gain() {
        let cfg = PanningConfig {
            estimator: PanGainEstimator::Approximate,
            ..PanningConfig::default()
        };
        // Hard-left bin toward center: right side stays silent, left bounded.
        let (ml, mr) = repan_bin(1.0, 0.0, 1.0, &cfg).unwrap();
        assert!((ml - 0.5).abs() < 1e-12);
        assert_eq!(mr, 0.0);
        assert!(repan_bin(1.0, 1.0, 0.2, &cfg).is_none());
    }

    #[test]
    fn rejects_mismatched_target() {
        let w = panned(0.2, 10_000, 9);
        let mut t = flat_target(0.5, StemType::Vocals);
        t.similarity.pop();
        assert!(repan(&w, &t, &PanningConfig::default()).is_err());
    }
}
