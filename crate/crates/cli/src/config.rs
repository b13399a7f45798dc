//! Run settings: built-in defaults, then command-line flags, then the TOML
//! config file, which wins over both.

use std::fs;
use std::path::{Path, PathBuf};

use facegate::classifier::TrainConfig;
use facegate::features::FeatureMask;
use facegate::providers::ProviderConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub dropout_rate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub mask: Option<FeatureMask>,
    pub match_threshold: Option<f64>,
    pub annotators: Option<usize>,
    #[serde(default)]
    pub train: TrainFile,
    #[serde(default)]
    pub providers: ProviderConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))
    }
}

/// Fully resolved settings shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub mask: FeatureMask,
    pub train: TrainConfig,
    pub match_threshold: f64,
    pub annotators: usize,
    pub providers: ProviderConfig,
}

/// Values given on the command line; `None` leaves the default.
#[derive(Debug, Default, Clone)]
pub struct Flags {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub mask: Option<FeatureMask>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub match_threshold: Option<f64>,
    pub annotators: Option<usize>,
    pub detector_threshold: Option<f64>,
}

impl RunConfig {
    pub fn resolve(flags: &Flags, file: Option<FileConfig>) -> CliResult<Self> {
        let file = file.unwrap_or_default();
        let seed = file.seed.or(flags.seed).unwrap_or(0);
        let d = TrainConfig::default();
        let t = &file.train;
        let train = TrainConfig {
            learning_rate: t.learning_rate.or(flags.learning_rate).unwrap_or(d.learning_rate),
            momentum: t.momentum.unwrap_or(d.momentum),
            batch_size: t.batch_size.or(flags.batch_size).unwrap_or(d.batch_size),
            epochs: t.epochs.or(flags.epochs).unwrap_or(d.epochs),
            dropout_rate: t.dropout_rate.or(flags.dropout_rate).unwrap_or(d.dropout_rate),
            seed,
        };
        train.validate()?;
        let flag_providers = ProviderConfig { detector_threshold: flags.detector_threshold, ..Default::default() };
        let config = Self {
            seed,
            jobs: file.jobs.or(flags.jobs).unwrap_or(0),
            mask: file.mask.or(flags.mask).unwrap_or(FeatureMask::FfFm),
            train,
            match_threshold: file
                .match_threshold
                .or(flags.match_threshold)
                .unwrap_or(facegate::audit::DEFAULT_MATCH_THRESHOLD),
            annotators: file.annotators.or(flags.annotators).unwrap_or(3),
            providers: file.providers.or(flag_providers).or(ProviderConfig::from_env()),
        };
        if !(0.0..=1.0).contains(&config.match_threshold) {
            return Err(CliError::Config(format!("match_threshold {} outside [0, 1]", config.match_threshold)));
        }
        if config.annotators == 0 {
            return Err(CliError::Config("annotators must be at least 1".into()));
        }
        if let Some(t) = config.providers.detector_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Config(format!("detector_threshold {t} outside [0, 1]")));
            }
        }
        Ok(config)
    }
}

/// Fails with a config error naming the first input path that does not exist.
pub fn require<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> CliResult<()> {
    for p in paths {
        if !p.exists() {
            return Err(CliError::Config(format!("input {} does not exist", p.display())));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Stamp<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub version: &'static str,
}

/// Writes `stamp.json` into `dir`. The hash covers the command, its
/// arguments and the resolved settings.
pub fn write_stamp<A: Serialize>(dir: &Path, command: &str, args: &A, config: &RunConfig) -> CliResult<()> {
    let canonical = serde_json::to_vec(&serde_json::json!({ "command": command, "args": args, "config": config }))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let digest = Sha256::digest(&canonical);
    let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
    let stamp = Stamp { command, seed: config.seed, config_hash, version: env!("CARGO_PKG_VERSION") };
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&stamp).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(dir.join("stamp.json"), json + "\n")?;
    Ok(())
}
