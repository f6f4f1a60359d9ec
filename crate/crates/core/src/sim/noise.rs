use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Perception tools served by the simulator. Library entries and noise
/// settings are keyed by these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Detector,
    CheckExistence,
    VerifyProperty,
    PropertyMatching,
    SimpleQuery,
    ExternalKnowledge,
    ImageCrop,
}

impl Tool {
    pub const ALL: [Tool; 7] = [
        Tool::Detector,
        Tool::CheckExistence,
        Tool::VerifyProperty,
        Tool::PropertyMatching,
        Tool::SimpleQuery,
        Tool::ExternalKnowledge,
        Tool::ImageCrop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tool::Detector => "detector",
            Tool::CheckExistence => "check_existence",
            Tool::VerifyProperty => "verify_property",
            Tool::PropertyMatching => "property_matching",
            Tool::SimpleQuery => "simple_query",
            Tool::ExternalKnowledge => "external_knowledge",
            Tool::ImageCrop => "image_crop",
        }
    }

    /// Error mode used when the config does not name one.
    pub fn default_mode(self) -> ErrorMode {
        match self {
            Tool::Detector => ErrorMode::MissDetection,
            Tool::ImageCrop => ErrorMode::RaiseException,
            _ => ErrorMode::WrongValue,
        }
    }
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The set of tools the agent may call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Library(pub BTreeSet<Tool>);

impl Library {
    pub fn complete() -> Self {
        Self(Tool::ALL.into_iter().collect())
    }

    pub fn empty() -> Self {
        Self(BTreeSet::new())
    }

    pub fn of(tools: &[Tool]) -> Self {
        Self(tools.iter().copied().collect())
    }

    pub fn enabled(&self, tool: Tool) -> bool {
        self.0.contains(&tool)
    }
}

impl Default for Library {
    fn default() -> Self {
        Self::complete()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// A plausible but wrong value of the same type.
    WrongValue,
    /// Detections go missing; on an empty result a spurious one appears.
    MissDetection,
    /// Counts and detection lists shift by one.
    OffByOne,
    /// The call fails outright.
    RaiseException,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolNoise {
    pub error_rate: f64,
    pub mode: ErrorMode,
}

/// Independent per-call corruption, configured per tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Rate for tools without an explicit entry.
    pub error_rate: f64,
    pub tools: BTreeMap<Tool, ToolNoise>,
    /// Noise stream seed; episode streams are split from it by task id.
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::uniform(0.25, 0)
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::uniform(0.0, 0)
    }

    /// Same rate for every tool, each with its default mode.
    pub fn uniform(error_rate: f64, seed: u64) -> Self {
        Self { error_rate, tools: BTreeMap::new(), seed }
    }

    pub fn with_tool(mut self, tool: Tool, error_rate: f64, mode: ErrorMode) -> Self {
        self.tools.insert(tool, ToolNoise { error_rate, mode });
        self
    }

    pub fn for_tool(&self, tool: Tool) -> ToolNoise {
        self.tools
            .get(&tool)
            .copied()
            .unwrap_or(ToolNoise { error_rate: self.error_rate, mode: tool.default_mode() })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.error_rate) {
            return Err(Error::Config(format!("error_rate {} outside [0, 1]", self.error_rate)));
        }
        for (tool, n) in &self.tools {
            if !ok(n.error_rate) {
                return Err(Error::Config(format!("{tool}: error_rate {} outside [0, 1]", n.error_rate)));
            }
        }
        Ok(())
    }
}
