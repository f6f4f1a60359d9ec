//! Helpers for driving the `dwim` binary from tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use dwim_core::model::{Action, Feedback, GenerationMode, Workflow};

pub fn dwim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dwim"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("dwim runs")
}

/// Runs and insists on success; returns stdout.
pub fn ok(out: &Path, args: &[&str]) -> String {
    let o = dwim(out, args);
    assert!(o.status.success(), "dwim {args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// An accepted workflow with `n` Code actions followed by Done.
pub fn accepted_with_codes(id: &str, n: usize) -> Workflow {
    let mut wf = Workflow::new(id, GenerationMode::Standard);
    for i in 1..=n {
        wf.actions.push(Action::code(format!("x{i} = count(find('chair'))")).at(i));
        wf.feedbacks.push(Feedback::new(i, ""));
    }
    wf.actions.push(Action::done().at(n + 1));
    wf.prediction = Some("2".into());
    wf.accepted = true;
    wf
}
