//! Run manifests: every output directory records what produced it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: String,
    pub tool_version: String,
    pub wall_clock_secs: f64,
    pub stage_timings: Vec<(String, f64)>,
}

/// Collects per-stage timings while a command runs.
pub struct StageClock {
    started: Instant,
    last: Instant,
    stages: Vec<(String, f64)>,
}

impl StageClock {
    pub fn start() -> Self {
        let now = Instant::now();
        Self {
            started: now,
            last: now,
            stages: Vec::new(),
        }
    }

    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.stages
            .push((name.to_string(), now.duration_since(self.last).as_secs_f64()));
        self.last = now;
    }

    pub fn finish(
        self,
        subcommand: &str,
        config_path: Option<&Path>,
        seed: Option<u64>,
        out_dir: &Path,
    ) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            out_dir: out_dir.display().to_string(),
            tool_version: TOOL_VERSION.to_string(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            stage_timings: self.stages,
        }
    }
}

pub fn write_manifest(manifest: &RunManifest, dir: &Path) -> Result<()> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join("manifest.json");
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Resolve the output directory: explicit flag, or
/// `$KYLEBACK_OUT/<subcommand>-<suffix>` (default root `runs`).
pub fn resolve_out_dir(explicit: Option<&Path>, subcommand: &str, suffix: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var("KYLEBACK_OUT").unwrap_or_else(|_| "runs".into());
            Path::new(&root).join(format!("{subcommand}-{suffix}"))
        }
    }
}
