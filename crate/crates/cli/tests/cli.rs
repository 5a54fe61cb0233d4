use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use fxnorm_core::config::{FeatureConfig, LossConfig, PreprocessConfig};
use fxnorm_core::evaluation::{mape_report, stereo_invariant_loss, FeatureGroup, LossVariant};
use fxnorm_core::fixtures::{self, FixtureSpec};
use fxnorm_core::pipeline::{check_contract, load_profiles, ContractTolerance, CorpusManifest, Stage, MANIFEST_FILE};
use fxnorm_core::wav::{self, BitDepth};
use fxnorm_core::StemType;

fn fxnorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fxnorm"))
        .args(args)
        .env_remove("FXNORM_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = fxnorm(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A two-song fixture corpus, IR library and its profiles, built once per run.
struct Shared {
    dataset: PathBuf,
    irs: PathBuf,
    profiles: PathBuf,
}

fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-shared");
        let _ = fs::remove_dir_all(&root);
        let sh = Shared {
            dataset: root.join("dataset"),
            irs: root.join("irs"),
            profiles: root.join("profiles"),
        };
        let spec = FixtureSpec { songs: 2, seconds: 3.0, ..Default::default() };
        fixtures::write_corpus(&sh.dataset, &spec).unwrap();
        fixtures::write_ir_library(&sh.irs, spec.sample_rate, 1).unwrap();
        ok(&["analyze", "--dataset", s(&sh.dataset), "--profiles", s(&sh.profiles)]);
        sh
    })
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir_in(env!("CARGO_TARGET_TMPDIR")).unwrap()
}

#[test]
fn analyze_writes_one_deterministic_profile_per_stem() {
    let sh = shared();
    let t = tmp();
    let again = t.path().join("again");
    ok(&["analyze", "--dataset", s(&sh.dataset), "--profiles", s(&again)]);
    for k in StemType::ALL {
        let name = format!("{k}.json");
        assert_eq!(fs::read(sh.profiles.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap());
    }
    let vocals = t.path().join("vocals_only");
    let out = ok(&["analyze", "--dataset", s(&sh.dataset), "--profiles", s(&vocals), "--stems", "vocals"]);
    assert!(out.contains("vocals"));
    let jsons: Vec<_> = fs::read_dir(&vocals)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "job.json")
        .collect();
    assert_eq!(jsons, ["vocals.json"]);
}

#[test]
fn missing_dataset_exits_with_two() {
    let o = fxnorm(&["analyze", "--dataset", "/nonexistent/fxnorm", "--profiles", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/fxnorm"));
}

#[test]
fn bad_usage_and_bad_config_exit_with_two() {
    assert_eq!(fxnorm(&["normalize", "--mode", "sideways"]).status.code(), Some(2));
    let t = tmp();
    let cfg = t.path().join("job.json");
    fs::write(&cfg, r#"{"sead": 1}"#).unwrap();
    assert_eq!(fxnorm(&["--config", s(&cfg), "config"]).status.code(), Some(2));
}

#[test]
fn config_from_environment_and_file() {
    let t = tmp();
    let cfg = t.path().join("job.toml");
    fs::write(&cfg, "seed = 42\n[preprocess.eq]\nfir_taps = 501\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fxnorm"))
        .arg("config")
        .env("FXNORM_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["preprocess"]["eq"]["fir_taps"], 501);
    assert_eq!(v["preprocess"]["eq"]["fft_size"], 65_536);
}

fn normalize(out: &Path, extra: &[&str]) {
    let sh = shared();
    let mut args = vec![
        "normalize",
        "--dataset",
        s(&sh.dataset),
        "--profiles",
        s(&sh.profiles),
        "--out",
        s(out),
        "--ir-library",
        s(&sh.irs),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

/// Re-analysis contract of every output stem, against the kept dynamics-stage output.
fn contract_of(out: &Path) -> BTreeMap<(String, StemType), fxnorm_core::pipeline::ContractCheck> {
    let cfg = PreprocessConfig::default();
    let profiles = load_profiles(&shared().profiles, &StemType::ALL, Some(cfg.sample_rate)).unwrap();
    let manifest: CorpusManifest = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    let mut checks = BTreeMap::new();
    for song in &manifest.songs {
        let dir = out.join(&song.id);
        for k in StemType::ALL {
            let fin = wav::read_audio(dir.join(format!("{k}.wav"))).unwrap();
            let drc = wav::read_audio(dir.join(format!("stages/03_drc/{k}.wav"))).unwrap();
            let c = check_contract(&fin, &drc, &profiles[&k], &cfg, &ContractTolerance::default()).unwrap();
            checks.insert((song.id.clone(), k), c);
        }
    }
    checks
}

#[test]
fn dry_normalization_meets_the_contract() {
    let t = tmp();
    normalize(t.path(), &["--skip", "reverb", "--keep-intermediates"]);
    for (key, c) in contract_of(t.path()) {
        assert!(c.passed(), "{key:?}: {c:?}");
    }
}

#[test]
fn inference_mode_on_dry_stems() {
    // Re-panning the added diffuse reverb per frame reshapes the spectrum of
    // reverb-eligible stems, so their spectrum check is reported, not asserted.
    let t = tmp();
    normalize(t.path(), &["--mode", "inference", "--seed", "4", "--keep-intermediates"]);
    let manifest: CorpusManifest =
        serde_json::from_str(&fs::read_to_string(t.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    for song in &manifest.songs {
        for (k, r) in &song.stems {
            // Inference: a pre-reverb send and a training send.
            assert_eq!(r.reverb_sends.len(), if k.reverb_eligible() { 2 } else { 0 });
        }
    }
    for ((song, k), c) in contract_of(t.path()) {
        assert!(c.loudness_ok && c.similarity_ok && c.peaks_ok, "{song}/{k}: {c:?}");
        if !k.reverb_eligible() {
            assert!(c.spectrum_ok, "{song}/{k}: {c:?}");
        } else {
            eprintln!("{song}/{k}: residual spectrum {:.2} dB", c.spectrum_max_dev_db);
        }
    }
}

#[test]
fn skipped_stages_are_recorded() {
    let t = tmp();
    normalize(t.path(), &["--skip", "reverb", "--skip", "drc"]);
    let manifest: CorpusManifest =
        serde_json::from_str(&fs::read_to_string(t.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.skipped, [Stage::Reverb, Stage::Drc]);
    for song in &manifest.songs {
        for r in song.stems.values() {
            assert_eq!(r.stages, [Stage::Eq, Stage::Panning, Stage::Loudness]);
            assert!(r.compressor.is_none() && r.reverb_sends.is_empty());
        }
    }
    let job: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.path().join("job.json")).unwrap()).unwrap();
    assert_eq!(job["command"], "normalize");
    assert_eq!(job["config"]["skip"], serde_json::json!(["reverb", "drc"]));
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (a, b) = (tmp(), tmp());
    normalize(a.path(), &["--seed", "9", "--bit-depth", "pcm24"]);
    normalize(b.path(), &["--seed", "9", "--bit-depth", "pcm24"]);
    let (ta, mut tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    // The echoed config names the output directory.
    let ja: serde_json::Value = serde_json::from_slice(&ta[Path::new("job.json")]).unwrap();
    let mut jb: serde_json::Value = serde_json::from_slice(&tb[Path::new("job.json")]).unwrap();
    jb["config"]["output_root"] = ja["config"]["output_root"].clone();
    assert_eq!(ja, jb);
    tb.remove(Path::new("job.json"));
    let ta: BTreeMap<_, _> = ta.into_iter().filter(|(p, _)| p != Path::new("job.json")).collect();
    assert_eq!(ta, tb);
}

fn evaluate(candidate: &Path, reference: &Path, extra: &[&str]) -> String {
    let mut args = vec!["evaluate", "--candidate", s(candidate), "--reference", s(reference)];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn evaluation_against_itself_is_zero() {
    let sh = shared();
    let json = evaluate(&sh.dataset, &sh.dataset, &["--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        for g in ["spectral", "panning", "dynamic", "loudness"] {
            assert_eq!(r[g].as_f64(), Some(0.0), "{r}");
        }
    }
}

#[test]
fn gain_offset_shows_in_loudness_and_formats_agree() {
    let sh = shared();
    let t = tmp();
    let cand = t.path().join("cand");
    let out = t.path().join("report");
    let mut expected = BTreeMap::new();
    for song in ["song_00", "song_01"] {
        let r = wav::read_audio(sh.dataset.join(song).join("mixture.wav")).unwrap();
        let c = r.scaled(0.5);
        fs::create_dir_all(cand.join(song)).unwrap();
        wav::write_audio(cand.join(song).join("mixture.wav"), &c, BitDepth::Float32).unwrap();
        let c = wav::read_audio(cand.join(song).join("mixture.wav")).unwrap();
        expected.insert(song, mape_report(&c, &r, &FeatureConfig::default()).unwrap());
    }
    evaluate(&cand, &sh.dataset, &["--out", s(&out)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    let mut csv = csv::Reader::from_path(out.join("evaluation.csv")).unwrap();
    let headers = csv.headers().unwrap().clone();
    let records: Vec<_> = csv.records().map(|r| r.unwrap()).collect();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(records.len(), rows.len());
    for (rec, row) in records.iter().zip(rows) {
        for (h, cell) in headers.iter().zip(rec.iter()) {
            match &row[h] {
                serde_json::Value::String(v) => assert_eq!(v, cell),
                serde_json::Value::Number(n) => assert_eq!(n.as_f64().unwrap(), cell.parse::<f64>().unwrap()),
                other => panic!("{h}: {other}"),
            }
        }
    }
    for row in &rows[..2] {
        let song = row["song"].as_str().unwrap();
        let e = &expected[song];
        let loud = row["loudness"].as_f64().unwrap();
        assert!(loud > 0.0);
        assert!((loud - e.mape_by_group[&FeatureGroup::Loudness]).abs() < 1e-9);
        assert!(row["spectral"].as_f64().unwrap() < 1e-3);
    }
    assert!(out.join("job.json").is_file());
}

#[test]
fn unmatched_songs_are_listed() {
    let sh = shared();
    let t = tmp();
    let cand = t.path().join("cand");
    fs::create_dir_all(cand.join("song_00")).unwrap();
    fs::copy(sh.dataset.join("song_00/mixture.wav"), cand.join("song_00/mixture.wav")).unwrap();
    let o = fxnorm(&["evaluate", "--candidate", s(&cand), "--reference", s(&sh.dataset)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("song_01 (reference only)"));
}

fn loss_json(target: &Path, estimate: &Path, variant: &str) -> serde_json::Value {
    let out = ok(&["loss", "--target", s(target), "--estimate", s(estimate), "--variant", variant, "--format", "json"]);
    serde_json::from_str(&out).unwrap()
}

#[test]
fn loss_command() {
    let sh = shared();
    let t = tmp();
    let y_path = sh.dataset.join("song_00/mixture.wav");
    let h_path = sh.dataset.join("song_01/mixture.wav");
    let same = loss_json(&y_path, &y_path, "a");
    assert_eq!(same["total"].as_f64(), Some(0.0));

    let y = wav::read_audio(&y_path).unwrap();
    let h = wav::read_audio(&h_path).unwrap();
    let direct = stereo_invariant_loss(&y, &h, LossVariant::B, &LossConfig::default()).unwrap();
    let v = loss_json(&y_path, &h_path, "b");
    assert_eq!(v["total"].as_f64(), Some(direct.total_b));
    assert_eq!(v["sc_diff"].as_f64(), Some(direct.sc_diff));

    let (ys, hs) = (t.path().join("ys.wav"), t.path().join("hs.wav"));
    wav::write_audio(&ys, &y.swapped(), BitDepth::Float32).unwrap();
    wav::write_audio(&hs, &h.swapped(), BitDepth::Float32).unwrap();
    let swapped = loss_json(&ys, &hs, "b");
    assert!((swapped["total"].as_f64().unwrap() - direct.total_b).abs() <= 1e-12 * direct.total_b);
}

#[test]
fn closed_stdout_pipe_is_not_an_error() {
    use std::io::Read;
    use std::process::Stdio;
    let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_fxnorm"))
        .arg("config")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdout.take());
    let status = child.wait().unwrap();
    let mut err = String::new();
    child.stderr.take().unwrap().read_to_string(&mut err).unwrap();
    assert!(status.success(), "{status:?}: {err}");
    assert!(!err.contains("panicked"), "{err}");
}
