//! Fixture loading shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use dwim_core::model::{ActionKind, GenerationMode, Workflow};
use dwim_core::protocol::parse_transcript;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// A transcript with the labels a human annotator gave it.
#[derive(Debug, Clone)]
pub struct Labeled {
    pub name: String,
    /// Transcript body without the label header.
    pub text: String,
    pub accepted: bool,
    /// Code actions the annotator saw fail by raising.
    pub traceback: Vec<usize>,
    /// Actions the annotator saw the agent itself walk back, including
    /// explicit reflection thoughts.
    pub reconsidered: Vec<usize>,
    pub workflow: Workflow,
}

fn indices(v: &str) -> Vec<usize> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse().unwrap()).collect()
}

pub fn transcripts() -> Vec<Labeled> {
    let mut paths: Vec<PathBuf> = fs::read_dir(fixtures().join("transcripts"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let raw = fs::read_to_string(p).unwrap();
            let (mut accepted, mut traceback, mut reconsidered) = (None, None, None);
            let mut body = String::new();
            for line in raw.lines() {
                match line.strip_prefix("# ").and_then(|l| l.split_once(':')) {
                    Some(("accepted", v)) if body.is_empty() => accepted = Some(v.trim() == "true"),
                    Some(("traceback", v)) if body.is_empty() => traceback = Some(indices(v)),
                    Some(("reconsidered", v)) if body.is_empty() => reconsidered = Some(indices(v)),
                    _ => {
                        body.push_str(line);
                        body.push('\n');
                    }
                }
            }
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let steps = parse_transcript(&body).unwrap_or_else(|e| panic!("{name}: {e}"));
            let mut wf = Workflow::new(name.clone(), GenerationMode::Standard);
            for step in steps {
                wf.feedbacks.extend(step.feedback);
                wf.actions.push(step.action);
            }
            wf.accepted = accepted.expect("accepted label");
            if wf.accepted {
                assert_eq!(wf.actions.last().map(|a| a.kind), Some(ActionKind::Done), "{name}");
            }
            wf.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            Labeled {
                name,
                text: body,
                accepted: wf.accepted,
                traceback: traceback.expect("traceback label"),
                reconsidered: reconsidered.expect("reconsidered label"),
                workflow: wf,
            }
        })
        .collect()
}
