//! Experiment runner for csilab: TOML configurations, versioned dataset and
//! model files, and CSV reports stamped with the configuration hash and seed.

pub mod config;
pub mod dataset_file;
pub mod pipeline;
pub mod report;

use std::path::{Path, PathBuf};

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig, ExperimentKind};
pub use pipeline::{CliError, RunContext};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CSILAB_OUT";

/// Output directory: explicit flag, then the config, then `$CSILAB_OUT/<kind>`,
/// then `csilab-out/<kind>`.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: &ExperimentConfig, env_root: Option<&str>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    let root = env_root.filter(|s| !s.is_empty()).unwrap_or("csilab-out");
    Path::new(root).join(cfg.kind.name())
}

/// Reads a config file and applies a seed override before validation.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        errors: vec![format!("{}: {e}", path.display())],
    })?;
    match parse_config_str(&text) {
        Ok(mut c) => {
            if seed.is_some() {
                c.seed = seed;
            }
            Ok(c)
        }
        // a missing seed is fine when the flag supplies one
        Err(mut e) if seed.is_some() => {
            e.errors.retain(|m| !m.contains("`seed` is required"));
            if !e.errors.is_empty() {
                return Err(e);
            }
            let mut c: ExperimentConfig = toml::from_str(&text).map_err(|err| ConfigError {
                errors: vec![err.to_string()],
            })?;
            c.seed = seed;
            c.validate()?;
            Ok(c)
        }
        Err(e) => Err(e),
    }
}
