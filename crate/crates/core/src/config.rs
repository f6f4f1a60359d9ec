//! Declarative run configuration, loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{BackendConfig, DetectorKind, EpisodeLimits};
use crate::error::{Error, Result};
use crate::model::{GenerationMode, MaskVariant};
use crate::sim::EnvConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of all randomness; overridden by `--seed`.
    pub seed: u64,
    pub env: EnvConfig,
    pub backend: BackendConfig,
    pub limits: EpisodeLimits,
    pub detector: DetectorKind,
    pub mode: GenerationMode,
    pub variant: MaskVariant,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            env: EnvConfig::default(),
            backend: BackendConfig::default(),
            limits: EpisodeLimits::default(),
            detector: DetectorKind::default(),
            mode: GenerationMode::Standard,
            variant: MaskVariant::InstructMasking,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a file; relative script paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let BackendConfig::Scripted { script } = &mut cfg.backend {
            if !is_builtin_script(script) && Path::new(script).is_relative() {
                if let Some(dir) = path.parent() {
                    *script = dir.join(&*script).display().to_string();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.limits.validate()?;
        match &self.backend {
            BackendConfig::Scripted { script } if !is_builtin_script(script) && !Path::new(script).exists() => {
                Err(Error::Config(format!("script file {script} does not exist")))
            }
            BackendConfig::HttpChat(h) if h.temperature < 0.0 => {
                Err(Error::Config("temperature must be non-negative".into()))
            }
            _ => Ok(()),
        }
    }
}

fn is_builtin_script(name: &str) -> bool {
    matches!(name, "optimal" | "fallback" | "self_reflecting")
}
