//! Run-wide configuration, loadable from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::MaskGenConfig;
use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::fda::FdaConfig;
use crate::losses::LossConfig;
use crate::metrics::MatchConfig;
use crate::postproc::PostprocConfig;
use crate::tiling::TileConfig;

/// Environment variable that replaces the built-in default seed.
pub const SEED_ENV: &str = "FDA_SEED";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    /// Working directory that relative paths in commands are resolved against.
    pub root: Option<PathBuf>,
    pub fda: FdaConfig,
    pub mask: MaskGenConfig,
    pub tile: TileConfig,
    pub augment: AugmentConfig,
    pub postproc: PostprocConfig,
    pub matching: MatchConfig,
    pub loss: LossConfig,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            reason: e.to_string(),
        })
    }

    /// Seed precedence: explicit flag, then config file, then `FDA_SEED`,
    /// then 0.
    pub fn resolve_seed(&self, flag: Option<u64>, env: Option<&str>) -> Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match env {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::invalid("FDA_SEED", format!("{v:?} is not an unsigned integer"))),
            None => Ok(0),
        }
    }

    /// Resolves `path` against [`PipelineConfig::root`] when it is relative.
    pub fn resolve_path(&self, path: &Path) -> PathBuf {
        match &self.root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }
}
