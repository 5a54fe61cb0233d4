//! Human-readable and machine-readable outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fxnorm_core::evaluation::{FeatureGroup, LossBreakdown, LossVariant, MapeAveraging, MixFeatureReport};
use fxnorm_core::pipeline::{ProfileSet, StemTypeProfile};

use crate::failure::Outcome;

/// Least-squares slope of the profile spectrum in dB per octave over 100 Hz - 10 kHz.
pub fn spectral_tilt_db_per_octave(p: &StemTypeProfile) -> Option<f64> {
    let s = &p.spectrum_avg;
    let hz_per_bin = s.sample_rate as f64 / s.fft_size as f64;
    let pts: Vec<(f64, f64)> = s
        .magnitude
        .iter()
        .enumerate()
        .map(|(k, &m)| (k as f64 * hz_per_bin, m))
        .filter(|&(f, m)| (100.0..=10_000.0).contains(&f) && m > 0.0)
        .map(|(f, m)| (f.log2(), 20.0 * m.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

pub fn profile_summary(set: &ProfileSet) -> String {
    let mut out = format!(
        "{:<8} {:>6} {:>10} {:>8} {:>8} {:>12}\n",
        "stem", "stems", "LUFS", "P_mu", "P_sigma", "tilt dB/oct"
    );
    for (k, p) in set {
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>10.2} {:>8} {:>8} {:>12}",
            k.as_str(),
            p.stem_count,
            p.loudness_avg,
            opt(p.peak_mu, 2),
            opt(p.peak_sigma, 2),
            opt(spectral_tilt_db_per_octave(p), 2)
        );
    }
    out
}

/// One row of the evaluation table: group errors in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub song: String,
    pub spectral: Option<f64>,
    pub panning: Option<f64>,
    pub dynamic: Option<f64>,
    pub loudness: Option<f64>,
}

impl EvalRow {
    pub fn new(song: &str, groups: &BTreeMap<FeatureGroup, f64>) -> Self {
        let g = |k| groups.get(&k).copied();
        Self {
            song: song.to_string(),
            spectral: g(FeatureGroup::Spectral),
            panning: g(FeatureGroup::Panning),
            dynamic: g(FeatureGroup::Dynamic),
            loudness: g(FeatureGroup::Loudness),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub averaging: MapeAveraging,
    /// Per-song rows followed by the aggregate row.
    pub rows: Vec<EvalRow>,
    /// Per-song, per-feature errors (percent).
    pub features: BTreeMap<String, BTreeMap<String, f64>>,
}

pub const AGGREGATE_ROW: &str = "mean";

impl Evaluation {
    pub fn new(songs: &[(String, MixFeatureReport)], averaging: MapeAveraging) -> Self {
        let mut rows: Vec<EvalRow> = songs.iter().map(|(id, r)| EvalRow::new(id, &r.mape_by_group)).collect();
        let reports: Vec<MixFeatureReport> = songs.iter().map(|(_, r)| r.clone()).collect();
        rows.push(EvalRow::new(AGGREGATE_ROW, &fxnorm_core::evaluation::average_mape(&reports, averaging)));
        let features = songs.iter().map(|(id, r)| (id.clone(), r.mape_by_feature.clone())).collect();
        Self { averaging, rows, features }
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>10} {:>10} {:>10} {:>10}\n",
            "song", "spectral", "panning", "dynamic", "loudness"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>10} {:>10} {:>10}",
                r.song,
                opt(r.spectral, 2),
                opt(r.panning, 2),
                opt(r.dynamic, 2),
                opt(r.loudness, 2)
            );
        }
        out.push_str("(mean absolute percentage error, %)\n");
        out
    }

    pub fn csv(&self) -> Outcome<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::failure::Failure::Internal(e.to_string()))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn json(&self) -> Outcome<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, dir: &Path) -> Outcome {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("evaluation.csv"), self.csv()?)?;
        std::fs::write(dir.join("evaluation.json"), self.json()?)?;
        Ok(())
    }
}

#[derive(Serialize)]
pub struct LossOutput {
    pub variant: LossVariant,
    pub total: f64,
    #[serde(flatten)]
    pub breakdown: LossBreakdown,
}

impl LossOutput {
    pub fn table(&self) -> String {
        let b = &self.breakdown;
        let mut out = String::new();
        for (name, v) in [
            ("sc_sum", b.sc_sum),
            ("l1log_sum", b.l1log_sum),
            ("sc_diff", b.sc_diff),
            ("l1log_diff", b.l1log_diff),
            ("l2_sum", b.l2_sum),
            ("l2_diff", b.l2_diff),
            ("total_a", b.total_a),
            ("total_b", b.total_b),
        ] {
            let _ = writeln!(out, "{name:<11} {v:.9e}");
        }
        let _ = writeln!(out, "loss ({})   {:.9e}", self.variant, self.total);
        out
    }
}
