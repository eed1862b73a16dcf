use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stitch_core::{StitchConfig, StitchError};

/// What a single invocation reads and writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PathBuf,
    /// Frame directory of each view, resolved against the config location.
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub subcommand: String,
    pub seed: u64,
    pub threads: usize,
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> StitchError {
    StitchError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl RunManifest {
    /// Resolve every view directory and check that it exists.
    pub fn resolve(
        config_path: &Path,
        config: &StitchConfig,
        out: Option<&Path>,
        subcommand: &str,
    ) -> Result<Self, StitchError> {
        if !(2..=3).contains(&config.views.len()) {
            return Err(config_error(
                "views",
                format!("expected 2 or 3 views, got {}", config.views.len()),
            ));
        }
        let base = config_path.parent().unwrap_or(Path::new("."));
        let inputs = config
            .views
            .iter()
            .enumerate()
            .map(|(v, view)| {
                let dir = view
                    .dir
                    .as_ref()
                    .ok_or_else(|| config_error(format!("views[{v}].dir"), "missing frame directory"))?;
                let dir = base.join(dir);
                if !dir.is_dir() {
                    return Err(config_error(
                        format!("views[{v}].dir"),
                        format!("{} is not a directory", dir.display()),
                    ));
                }
                Ok(dir)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RunManifest {
            config: config_path.to_path_buf(),
            inputs,
            out: out.map(Path::to_path_buf),
            subcommand: subcommand.to_string(),
            seed: config.seed,
            threads: config.resolved_threads(),
        })
    }
}

/// First 12 hex digits of the config digest, taken with the thread count
/// cleared so single- and multi-threaded runs share a stamp.
pub fn config_stamp(config: &StitchConfig) -> String {
    let mut c = config.clone();
    c.threads = 0;
    c.digest()[..12].to_string()
}
