use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use xlab_core::extraction::Seeds;

/// Defaults loaded from `--config`. Command-line flags and the
/// `XLAB_DATA_ROOT` variable take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub seeds: SeedDefaults,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedDefaults {
    pub victim: Option<u64>,
    pub noise: Option<u64>,
    pub extract: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_root, &mut cfg.output_root, &mut cfg.registry].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Global settings after applying flags, environment and config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Settings {
    pub data_root: PathBuf,
    pub output_root: PathBuf,
    pub registry: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seeds: Seeds,
}

impl Settings {
    pub fn resolve(global: &crate::args::GlobalArgs) -> Result<Self> {
        let file = match &global.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let defaults = Seeds::default();
        Ok(Self {
            data_root: global.data_root.clone().or(file.data_root).unwrap_or_else(|| "data".into()),
            output_root: file.output_root.unwrap_or_else(|| "runs".into()),
            registry: global.registry.clone().or(file.registry),
            threads: global.threads.or(file.threads),
            seeds: Seeds {
                victim: file.seeds.victim.unwrap_or(defaults.victim),
                noise: file.seeds.noise.unwrap_or(defaults.noise),
                extract: file.seeds.extract.unwrap_or(defaults.extract),
            },
        })
    }
}
