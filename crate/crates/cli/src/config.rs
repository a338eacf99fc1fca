//! Config-file loading with fail-closed parsing and seed/output overrides.
//!
//! The file is TOML mirroring the experiment config; unknown keys are
//! rejected. The seed resolves as: `--seed` flag, then the `GRAVOS_SEED`
//! environment variable, then the file. The output directory may likewise be
//! overridden with `GRAVOS_OUT`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use gravos_core::trainer::ExperimentConfig;

pub fn load(path: &Path, seed_flag: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| gravos_core::Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: ExperimentConfig = toml::from_str(&text)?;
    let env_seed = std::env::var("GRAVOS_SEED")
        .ok()
        .map(|s| {
            s.parse::<u64>()
                .with_context(|| format!("GRAVOS_SEED {s:?} is not a u64"))
        })
        .transpose()?;
    if let Some(seed) = seed_flag.or(env_seed) {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

pub fn resolve_out(out: &Path) -> PathBuf {
    std::env::var("GRAVOS_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|_| out.to_path_buf())
}

pub fn echo(config: &ExperimentConfig) -> anyhow::Result<String> {
    Ok(toml::to_string_pretty(config)?)
}
