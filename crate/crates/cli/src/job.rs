//! Job configuration: file values with command-line overrides, echoed into every
//! output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fxnorm_core::config::{FeatureConfig, LossConfig, PreprocessConfig};
use fxnorm_core::pipeline::Stage;
use fxnorm_core::reverb::AugmentMode;
use fxnorm_core::wav::BitDepth;
use fxnorm_core::StemType;

use crate::failure::{Failure, Outcome};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "FXNORM_CONFIG";
pub const JOB_FILE: &str = "job.json";

fn default_mode() -> AugmentMode {
    AugmentMode::Train
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub dataset_root: Option<PathBuf>,
    pub profile_path: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub ir_library: Option<PathBuf>,
    pub stem_types: Vec<StemType>,
    #[serde(default = "default_mode")]
    pub mode: AugmentMode,
    pub seed: u64,
    /// Stages to leave out.
    pub skip: BTreeSet<Stage>,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    pub resample: bool,
    pub keep_intermediates: bool,
    pub bit_depth: BitDepth,
    pub preprocess: PreprocessConfig,
    pub features: FeatureConfig,
    pub loss: LossConfig,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            profile_path: None,
            output_root: None,
            ir_library: None,
            stem_types: StemType::ALL.to_vec(),
            mode: default_mode(),
            seed: 0,
            skip: BTreeSet::new(),
            workers: None,
            resample: false,
            keep_intermediates: false,
            bit_depth: BitDepth::Float32,
            preprocess: PreprocessConfig::default(),
            features: FeatureConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl JobConfig {
    /// Reads a JSON or (by extension) TOML config; missing fields take defaults.
    pub fn from_file(path: &Path) -> Outcome<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::user(format!("cannot read config {}: {e}", path.display())))?;
        let bad = |e: String| Failure::user(format!("invalid config {}: {e}", path.display()));
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        } else {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }

    /// The explicit path, else the environment default, else built-in defaults.
    pub fn load(path: Option<&Path>) -> Outcome<Self> {
        match path {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Outcome<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Failure::user(format!("{flag} is required (flag or config file)")))
    }
}

#[derive(Serialize)]
struct JobEcho<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a JobConfig,
}

/// Writes the effective config and tool version to `dir/job.json`.
pub fn echo(dir: &Path, command: &str, cfg: &JobConfig) -> Outcome {
    fs::create_dir_all(dir)?;
    let echo = JobEcho {
        tool: "fxnorm",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
    };
    fs::write(dir.join(JOB_FILE), serde_json::to_string_pretty(&echo)? + "\n")?;
    Ok(())
}
