pub mod evaluate;
pub mod report;
pub mod sweep;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use cdiff_core::hashing::write_atomic;

use crate::config::RunConfig;

/// Write the effective configuration next to a command's outputs so the
/// run can be reloaded and repeated.
pub fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(())
}
