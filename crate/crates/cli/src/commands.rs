use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fxnorm_core::evaluation::{mape_report, stereo_invariant_loss, MixFeatureReport};
use fxnorm_core::fixtures::{self, FixtureSpec};
use fxnorm_core::pipeline::{
    analyze_dataset, load_profiles, normalize_corpus, save_profiles, AnalyzeOptions, Dataset,
    NormalizeOptions, ProfileSet, Stage,
};
use fxnorm_core::reverb::IrLibrary;
use fxnorm_core::{par, wav};

use crate::failure::{Failure, Outcome};
use crate::job::{self, JobConfig};
use crate::report::{profile_summary, Evaluation, LossOutput};
use crate::{Cli, Command, Common, Format};

#[cfg(feature = "parallel")]
fn init_workers(n: Option<usize>) -> Outcome {
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::user("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Internal(e.to_string()))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn init_workers(_: Option<usize>) -> Outcome {
    Ok(())
}

fn apply_common(cfg: &mut JobConfig, c: Common) {
    if c.dataset.is_some() {
        cfg.dataset_root = c.dataset;
    }
    if c.profiles.is_some() {
        cfg.profile_path = c.profiles;
    }
    if !c.stems.is_empty() {
        cfg.stem_types = c.stems;
    }
    cfg.resample |= c.resample;
}

pub fn run(cli: Cli) -> Outcome {
    let mut cfg = JobConfig::load(cli.config.as_deref())?;
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    init_workers(cfg.workers)?;
    match cli.command {
        Command::Analyze { common } => {
            apply_common(&mut cfg, common);
            analyze(&cfg)
        }
        Command::Normalize {
            common,
            out,
            mode,
            seed,
            skip,
            ir_library,
            keep_intermediates,
            bit_depth,
        } => {
            apply_common(&mut cfg, common);
            if out.is_some() {
                cfg.output_root = out;
            }
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.skip.extend(skip);
            if ir_library.is_some() {
                cfg.ir_library = ir_library;
            }
            cfg.keep_intermediates |= keep_intermediates;
            if let Some(d) = bit_depth {
                cfg.bit_depth = d.into();
            }
            normalize(&cfg)
        }
        Command::Evaluate {
            candidate,
            reference,
            out,
            format,
            averaging,
        } => evaluate(&cfg, &candidate, &reference, out.as_deref(), format, averaging),
        Command::Loss {
            target,
            estimate,
            variant,
            format,
        } => {
            let y = wav::read_audio(&target)?;
            let y_hat = wav::read_audio(&estimate)?;
            let breakdown = stereo_invariant_loss(&y, &y_hat, variant, &cfg.loss)?;
            let out = LossOutput {
                variant,
                total: breakdown.total(variant),
                breakdown,
            };
            match format {
                Format::Json => emit(&(serde_json::to_string_pretty(&out)? + "\n"))?,
                _ => emit(&out.table())?,
            }
            Ok(())
        }
        Command::Fixtures {
            out,
            songs,
            seconds,
            seed,
        } => {
            let spec = FixtureSpec {
                songs,
                seconds,
                sample_rate: cfg.preprocess.sample_rate,
                seed,
            };
            fixtures::write_corpus(&out.join("dataset"), &spec)?;
            fixtures::write_ir_library(&out.join("irs"), spec.sample_rate, seed)?;
            emit(&format!("wrote {songs} songs to {}\n", out.join("dataset").display()))?;
            emit(&format!("wrote impulse responses to {}\n", out.join("irs").display()))?;
            Ok(())
        }
        Command::Config => {
            emit(&(serde_json::to_string_pretty(&cfg)? + "\n"))?;
            Ok(())
        }
    }
}

fn analyze(cfg: &JobConfig) -> Outcome {
    let root = JobConfig::require(&cfg.dataset_root, "--dataset")?;
    let dir = JobConfig::require(&cfg.profile_path, "--profiles")?;
    let ds = Dataset::scan(root, &cfg.stem_types)?;
    log::info!("analyzing {} songs", ds.songs.len());
    let set = analyze_dataset(&ds, &cfg.preprocess, AnalyzeOptions { resample: cfg.resample })?;
    for p in save_profiles(dir, &set)? {
        log::info!("wrote {}", p.display());
    }
    job::echo(dir, "analyze", cfg)?;
    emit(&profile_summary(&set))?;
    Ok(())
}

fn normalize(cfg: &JobConfig) -> Outcome {
    let root = JobConfig::require(&cfg.dataset_root, "--dataset")?;
    let out = JobConfig::require(&cfg.output_root, "--out")?;
    let rate = cfg.preprocess.sample_rate;
    let runs = |s: Stage| !cfg.skip.contains(&s);
    let profiles = if [Stage::Eq, Stage::Drc, Stage::Panning, Stage::Loudness].into_iter().any(runs) {
        let dir = JobConfig::require(&cfg.profile_path, "--profiles")?;
        load_profiles(dir, &cfg.stem_types, Some(rate))?
    } else {
        ProfileSet::new()
    };
    let library = if runs(Stage::Reverb) {
        let dir = cfg.ir_library.as_deref().ok_or_else(|| {
            Failure::user("reverb augmentation needs --ir-library (or --skip reverb)")
        })?;
        Some(IrLibrary::load_dir(dir, rate, cfg.resample)?)
    } else {
        None
    };
    let ds = Dataset::scan(root, &cfg.stem_types)?;
    let opts = NormalizeOptions {
        mode: cfg.mode,
        seed: cfg.seed,
        skip: cfg.skip.clone(),
        keep_intermediates: cfg.keep_intermediates,
    };
    let manifest = normalize_corpus(
        &ds,
        out,
        &profiles,
        library.as_ref(),
        &opts,
        &cfg.preprocess,
        cfg.bit_depth,
        cfg.resample,
    )?;
    job::echo(out, "normalize", cfg)?;
    let applied: Vec<&str> = Stage::ORDER.iter().filter(|&&s| runs(s)).map(|s| s.as_str()).collect();
    emit(&format!(
        "normalized {} songs into {} ({})\n",
        manifest.songs.len(),
        out.display(),
        applied.join(", ")
    ))?;
    Ok(())
}

/// Mixes under `dir`: `<song>/mixture.wav` or a top-level `<song>.wav`.
fn list_mixes(dir: &Path) -> Outcome<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Failure::user(format!("{} is not a directory", dir.display())));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        let name = p.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if p.is_dir() && p.join("mixture.wav").is_file() {
            out.insert(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), p.join("mixture.wav"));
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.insert(name, p);
        }
    }
    Ok(out)
}

fn evaluate(
    cfg: &JobConfig,
    candidate: &Path,
    reference: &Path,
    out: Option<&Path>,
    format: Format,
    averaging: fxnorm_core::evaluation::MapeAveraging,
) -> Outcome {
    let cand = list_mixes(candidate)?;
    let refs = list_mixes(reference)?;
    let unmatched: Vec<String> = cand
        .keys()
        .filter(|k| !refs.contains_key(*k))
        .map(|k| format!("{k} (candidate only)"))
        .chain(refs.keys().filter(|k| !cand.contains_key(*k)).map(|k| format!("{k} (reference only)")))
        .collect();
    if !unmatched.is_empty() {
        return Err(Failure::user(format!("unmatched songs: {}", unmatched.join(", "))));
    }
    if cand.is_empty() {
        return Err(Failure::user(format!("no mixes found under {}", candidate.display())));
    }
    let pairs: Vec<(String, PathBuf, PathBuf)> = cand
        .into_iter()
        .map(|(k, c)| {
            let r = refs[&k].clone();
            (k, c, r)
        })
        .collect();
    let reports = par::map(&pairs, |(id, c, r)| -> Outcome<(String, MixFeatureReport)> {
        let c = wav::read_audio(c)?;
        let r = wav::read_audio(r)?;
        Ok((id.clone(), mape_report(&c, &r, &cfg.features)?))
    })
    .into_iter()
    .collect::<Outcome<Vec<_>>>()?;
    let eval = Evaluation::new(&reports, averaging);
    match format {
        Format::Table => emit(&eval.table())?,
        Format::Csv => emit(&eval.csv()?)?,
        Format::Json => emit(&eval.json()?)?,
    }
    if let Some(dir) = out {
        eval.write(dir)?;
        job::echo(dir, "evaluate", cfg)?;
    }
    Ok(())
}

/// Writes to stdout. A closed pipe (`fxnorm ... | head`) ends output quietly.
fn emit(text: &str) -> Outcome {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}
