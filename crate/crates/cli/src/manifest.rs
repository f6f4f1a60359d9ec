use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dwim_core::jsonl::sha256_hex;
use dwim_core::model::SCHEMA;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub command: String,
    pub seed: Option<u64>,
    pub records: usize,
    pub sha256: String,
    /// Input file name → SHA-256.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    /// Output file name (relative to the output directory) → entry.
    pub outputs: BTreeMap<String, Entry>,
}

/// Output directory with a manifest that accumulates across commands.
pub struct OutDir {
    root: PathBuf,
    manifest: Manifest,
}

impl OutDir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let path = root.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            serde_json::from_str(&fs::read_to_string(&path)?)
                .with_context(|| format!("{} is not a manifest", path.display()))?
        } else {
            Manifest { schema: SCHEMA.to_string(), outputs: BTreeMap::new() }
        };
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `bytes` to `name` and records it; the entry's digest is filled in.
    pub fn write(&mut self, name: &str, bytes: &[u8], mut entry: Entry) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        entry.sha256 = sha256_hex(bytes);
        self.manifest.outputs.insert(name.to_string(), entry);
        Ok(())
    }

    pub fn save(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(self.path(MANIFEST_FILE), text)?;
        Ok(())
    }
}

pub fn entry(command: &str, seed: Option<u64>, records: usize) -> Entry {
    Entry {
        command: command.to_string(),
        seed,
        records,
        sha256: String::new(),
        inputs: BTreeMap::new(),
        details: serde_json::Value::Null,
    }
}

/// Reads an input file and returns its bytes with a digest.
pub fn read_input(path: &Path) -> Result<(String, String)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let digest = sha256_hex(text.as_bytes());
    Ok((text, digest))
}

pub fn input_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}
