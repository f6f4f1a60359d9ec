//! Line-delimited JSON records with line-numbered diagnostics.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flagmask::FlagReport;
use crate::model::{MaskSample, Workflow};
use crate::sim::TaskRecord;

/// A record type with invariants beyond what decoding checks.
pub trait Record: Serialize + DeserializeOwned {
    fn check(&self) -> Result<()>;
}

impl Record for Workflow {
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Record for TaskRecord {
    fn check(&self) -> Result<()> {
        if self.schema != crate::model::SCHEMA {
            return Err(Error::Invalid(format!("unsupported schema {:?}", self.schema)));
        }
        self.scene.validate()?;
        self.task.validate()?;
        if self.task.scene_ref != self.scene.scene_id {
            return Err(Error::Invalid(format!(
                "task {} refers to scene {} but carries {}",
                self.task.task_id, self.task.scene_ref, self.scene.scene_id
            )));
        }
        Ok(())
    }
}

impl Record for FlagReport {
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Record for MaskSample {
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

/// One compact JSON document per line, each newline-terminated.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    out
}

/// Decodes and checks every non-blank line; `origin` names the source in errors.
pub fn parse_jsonl<T: Record>(text: &str, origin: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema { path: origin.to_string(), line: i + 1, message };
        let item: T = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        item.check().map_err(|e| schema(e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_jsonl<T: Record>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_jsonl(&text, &path.display().to_string())
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    crate::sim::hex_digest(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, GenerationMode};

    #[test]
    fn round_trip_and_line_numbers() {
        let mut wf = Workflow::new("t1", GenerationMode::Standard);
        wf.actions.push(Action::done().at(1));
        let bytes = to_jsonl(&[wf.clone(), wf.clone()]);
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: Vec<Workflow> = parse_jsonl(&text, "w.jsonl").unwrap();
        assert_eq!(back, vec![wf.clone(), wf]);

        let bad = format!("{}\n\n{{\"task_id\": 3}}\n", text.lines().next().unwrap());
        match parse_jsonl::<Workflow>(&bad, "w.jsonl") {
            Err(Error::Schema { path, line, .. }) => assert_eq!((path.as_str(), line), ("w.jsonl", 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invariant_violations_are_reported_with_line() {
        let mut wf = Workflow::new("t1", GenerationMode::Standard);
        wf.actions.push(Action::done().at(2));
        let text = String::from_utf8(to_jsonl(&[wf])).unwrap();
        let err = parse_jsonl::<Workflow>(&text, "x").unwrap_err().to_string();
        assert!(err.starts_with("x:1:"), "{err}");
    }
}
