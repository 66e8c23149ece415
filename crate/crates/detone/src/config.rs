//! Operator configuration: named profiles, the flat `key=value` config
//! file, and the printable effective configuration. Precedence is
//! profile defaults, then config file, then command-line flags.

use std::fmt;
use std::fs;
use std::path::Path;

use detone_core::network::NetworkSpec;
use thiserror::Error;

use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Profile {
    /// CPU-scale profile for desk runs and the test suite.
    #[default]
    Desk,
    /// Full-scale profile (500-image corpus, 200k steps).
    Paper,
}

impl Profile {
    pub fn config(self) -> TrainConfig {
        match self {
            Profile::Desk => TrainConfig::desk(),
            Profile::Paper => TrainConfig::paper(),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Desk => write!(f, "desk"),
            Profile::Paper => write!(f, "paper"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected key=value, got {text:?}")]
    BadLine {
        path: String,
        line: usize,
        text: String,
    },
    #[error("{path}:{line}: unknown key {key:?}")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("{path}:{line}: cannot parse {key}={value:?}: {what}")]
    BadValue {
        path: String,
        line: usize,
        key: String,
        value: String,
        what: &'static str,
    },
    #[error("invalid network plan: {0}")]
    BadSpec(#[from] detone_core::network::NetworkError),
}

/// Apply a flat `key=value` file on top of a configuration. Blank lines
/// and `#` comments are ignored.
pub fn apply_config_file(config: &mut TrainConfig, path: &Path) -> Result<(), ConfigError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: display.clone(),
        source,
    })?;
    // Depths and widths combine into one spec at the end.
    let spec = config.spec;
    let mut p = spec.irs.depth;
    let mut q = spec.ismp.depth;
    let mut r = spec.rs.depth;
    let mut m = spec.hidden();
    let mut k = spec.kernel();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::BadLine {
                path: display.clone(),
                line,
                text: trimmed.to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        macro_rules! parse {
            ($ty:ty, $what:expr) => {
                value.parse::<$ty>().map_err(|_| ConfigError::BadValue {
                    path: display.clone(),
                    line,
                    key: key.to_string(),
                    value: value.to_string(),
                    what: $what,
                })?
            };
        }
        match key {
            "lr" => config.lr = parse!(f32, "expected a float"),
            "batch" => config.batch = parse!(usize, "expected an integer"),
            "epochs" => config.epochs = parse!(usize, "expected an integer"),
            "iters_per_epoch" => config.iters_per_epoch = parse!(usize, "expected an integer"),
            "momentum" => config.momentum = parse!(f32, "expected a float"),
            "lambda_ismp" => config.lambda_ismp = parse!(f32, "expected a float"),
            "seed" => config.seed = parse!(u64, "expected an integer"),
            "checkpoint_every" => config.checkpoint_every = parse!(usize, "expected an integer"),
            "pretrain_iters" => config.pretrain_iters = parse!(usize, "expected an integer"),
            "holdout" => config.holdout = parse!(f32, "expected a float"),
            "baseline_depth" => config.baseline_depth = parse!(usize, "expected an integer"),
            "freeze_irs" => config.freeze_irs = parse!(bool, "expected true or false"),
            "p" => p = parse!(usize, "expected an integer"),
            "q" => q = parse!(usize, "expected an integer"),
            "r" => r = parse!(usize, "expected an integer"),
            "m" => m = parse!(usize, "expected an integer"),
            "kernel" => k = parse!(usize, "expected an odd integer"),
            _ => {
                return Err(ConfigError::UnknownKey {
                    path: display.clone(),
                    line,
                    key: key.to_string(),
                })
            }
        }
    }
    config.spec = NetworkSpec::new(p, q, r, m, k)?;
    Ok(())
}

/// Render the effective configuration in the same `key=value` syntax the
/// config file uses.
pub fn print_config(config: &TrainConfig) -> String {
    format!(
        "lr={}\nbatch={}\nepochs={}\niters_per_epoch={}\nmomentum={}\nlambda_ismp={}\nseed={}\ncheckpoint_every={}\npretrain_iters={}\nholdout={}\nbaseline_depth={}\nfreeze_irs={}\np={}\nq={}\nr={}\nm={}\nkernel={}\n",
        config.lr,
        config.batch,
        config.epochs,
        config.iters_per_epoch,
        config.momentum,
        config.lambda_ismp,
        config.seed,
        config.checkpoint_every,
        config.pretrain_iters,
        config.holdout,
        config.baseline_depth,
        config.freeze_irs,
        config.spec.irs.depth,
        config.spec.ismp.depth,
        config.spec.rs.depth,
        config.spec.hidden(),
        config.spec.kernel(),
    )
}
