use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ctquant_core::PipelineConfig;

/// Pipeline settings plus where they came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub source: String,
}

/// Reads `path` when given (flag or `CT_QUANT_CONFIG`), else the defaults.
pub fn load(path: Option<&Path>) -> Result<LoadedConfig> {
    match path {
        None => Ok(LoadedConfig {
            config: PipelineConfig::default(),
            source: "default".into(),
        }),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("read config {}", p.display()))?;
            let config = PipelineConfig::from_kv_text(&text)
                .with_context(|| format!("config {}", p.display()))?;
            Ok(LoadedConfig {
                config,
                source: p.display().to_string(),
            })
        }
    }
}
