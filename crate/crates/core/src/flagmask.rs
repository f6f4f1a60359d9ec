//! Per-action effectiveness flags and the masked-regeneration dataset built
//! from them.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{sha256_hex, to_jsonl};
use crate::model::{
    ActionKind, MaskSample, MaskVariant, SampleTarget, Step, Workflow, DEFAULT_INSTRUCTION, MASK_TOKEN, SCHEMA,
};
use crate::protocol::{render_action, render_transcript, QUERY_PREFIX};
use crate::seed;

/// Instruction attached to whole-workflow samples.
pub const NAIVE_INSTRUCTION: &str = "Reproduce the full workflow.";

/// The flagging rules, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Code action whose feedback is a Traceback.
    Traceback,
    /// Action immediately before a Thought mentioning "however" or "rethink".
    RethinkContext,
    /// A Rethink thought.
    RethinkThought,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Traceback, Rule::RethinkContext, Rule::RethinkThought];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Traceback => "traceback",
            Rule::RethinkContext => "rethink_context",
            Rule::RethinkThought => "rethink_thought",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagReport {
    pub workflow_id: String,
    pub flags: Vec<u8>,
    /// Rules fired on each action, in rule order.
    pub rule_hits: Vec<Vec<Rule>>,
}

impl FlagReport {
    pub fn validate(&self) -> Result<()> {
        if self.flags.len() != self.rule_hits.len() {
            return Err(Error::Invalid(format!("flag report {}: flags and rule hits misaligned", self.workflow_id)));
        }
        for (f, hits) in self.flags.iter().zip(&self.rule_hits) {
            if *f > 1 || (*f == 0) == hits.is_empty() {
                return Err(Error::Invalid(format!(
                    "flag report {}: each 0-flag needs a rule hit and each 1-flag none",
                    self.workflow_id
                )));
            }
        }
        Ok(())
    }
}

fn mentions_rethink(text: &str) -> bool {
    let lower = text.to_lowercase();
    lower.contains("however") || lower.contains("rethink")
}

/// Applies the rules to every action; actions no rule fires on are effective.
pub fn flag_actions(workflow: &Workflow) -> FlagReport {
    let actions = &workflow.actions;
    let rule_hits: Vec<Vec<Rule>> = actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut hits = Vec::new();
            if a.kind == ActionKind::Code && workflow.feedback_for(a.index).is_some_and(|f| f.is_error) {
                hits.push(Rule::Traceback);
            }
            if actions
                .get(i + 1)
                .is_some_and(|next| next.kind == ActionKind::Thought && mentions_rethink(&next.content))
            {
                hits.push(Rule::RethinkContext);
            }
            if a.kind == ActionKind::Thought && a.is_rethink {
                hits.push(Rule::RethinkThought);
            }
            hits
        })
        .collect();
    FlagReport {
        workflow_id: workflow.task_id.clone(),
        flags: rule_hits.iter().map(|h| u8::from(h.is_empty())).collect(),
        rule_hits,
    }
}

/// Counts of rule hits and of ineffective actions by kind over a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleHistogram {
    pub workflows: usize,
    pub actions: usize,
    pub ineffective: usize,
    pub by_rule: BTreeMap<Rule, usize>,
    pub ineffective_by_kind: BTreeMap<ActionKind, usize>,
}

impl RuleHistogram {
    pub fn add(&mut self, workflow: &Workflow, report: &FlagReport) {
        self.workflows += 1;
        self.actions += report.flags.len();
        for ((action, flag), hits) in workflow.actions.iter().zip(&report.flags).zip(&report.rule_hits) {
            for rule in hits {
                *self.by_rule.entry(*rule).or_default() += 1;
            }
            if *flag == 0 {
                self.ineffective += 1;
                *self.ineffective_by_kind.entry(action.kind).or_default() += 1;
            }
        }
    }

    pub fn of(workflows: &[Workflow]) -> Self {
        let mut h = Self::default();
        for wf in workflows {
            h.add(wf, &flag_actions(wf));
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MaskOptions {
    /// Seed for random masking; the per-workflow stream is split by task id.
    pub seed: u64,
    /// Accept rejected workflows, emitting their samples with reward 0.
    pub include_rejected: bool,
}

/// 1-based indices that receive a mask under `variant`; empty for naive SFT.
pub fn masked_indices(workflow: &Workflow, report: &FlagReport, variant: MaskVariant, seed: u64) -> Vec<usize> {
    let n = workflow.actions.len();
    let effective = report.flags.iter().filter(|&&f| f == 1).count();
    match variant {
        MaskVariant::InstructMasking => (1..=n).filter(|&t| report.flags[t - 1] == 1).collect(),
        MaskVariant::MaskingWRethink => (1..=n)
            .filter(|&t| {
                report.flags[t - 1] == 1
                    || report.rule_hits[t - 1].iter().any(|r| matches!(r, Rule::RethinkContext | Rule::RethinkThought))
            })
            .collect(),
        MaskVariant::RandomMasking => {
            let mut rng = seed::rng(seed::split(seed, &workflow.task_id));
            let mut picked: Vec<usize> = sample(&mut rng, n, effective).into_iter().map(|i| i + 1).collect();
            picked.sort_unstable();
            picked
        }
        MaskVariant::NaiveSft => Vec::new(),
    }
}

/// Steps as they appear around a mask: the masked Code's own result is
/// withheld so it cannot leak the target.
fn context_steps(workflow: &Workflow, masked: usize) -> (Vec<Step>, Vec<Step>) {
    let mut steps = workflow.steps();
    let suffix = steps.split_off(masked);
    steps.truncate(masked - 1);
    (steps, suffix)
}

/// Instruction text; the task question, when known, leads it so that samples
/// of different tasks never share a context.
pub fn instruction_for(query: Option<&str>, base: &str) -> String {
    match query {
        Some(q) => format!("{QUERY_PREFIX}{q}\n{base}"),
        None => base.to_string(),
    }
}

/// Builds the samples of one workflow for one variant.
pub fn build_mask_samples(
    workflow: &Workflow,
    report: &FlagReport,
    variant: MaskVariant,
    options: MaskOptions,
    query: Option<&str>,
) -> Result<Vec<MaskSample>> {
    if !workflow.accepted && !options.include_rejected {
        return Err(Error::Usage(format!("workflow {} was not accepted", workflow.task_id)));
    }
    if report.workflow_id != workflow.task_id || report.flags.len() != workflow.actions.len() {
        return Err(Error::Usage(format!("flag report does not describe workflow {}", workflow.task_id)));
    }
    let reward = u8::from(workflow.accepted);
    if variant == MaskVariant::NaiveSft {
        return Ok(vec![MaskSample {
            schema: SCHEMA.to_string(),
            task_id: workflow.task_id.clone(),
            variant,
            target_index: None,
            prefix: Vec::new(),
            mask_token: None,
            suffix: Vec::new(),
            instruction: instruction_for(query, NAIVE_INSTRUCTION),
            target: SampleTarget::Workflow(workflow.steps()),
            reward,
            flags: report.flags.clone(),
        }]);
    }
    Ok(masked_indices(workflow, report, variant, options.seed)
        .into_iter()
        .map(|t| {
            let (prefix, suffix) = context_steps(workflow, t);
            MaskSample {
                schema: SCHEMA.to_string(),
                task_id: workflow.task_id.clone(),
                variant,
                target_index: Some(t),
                prefix,
                mask_token: Some(MASK_TOKEN.to_string()),
                suffix,
                instruction: instruction_for(query, DEFAULT_INSTRUCTION),
                target: SampleTarget::Action(workflow.actions[t - 1].clone()),
                reward,
                flags: report.flags.clone(),
            }
        })
        .collect())
}

/// Flags and masks a whole dataset, in input order. Rejected workflows are
/// skipped unless `options.include_rejected`; `queries` maps task ids to
/// their questions and may be empty.
pub fn build_dataset(
    workflows: &[Workflow],
    variant: MaskVariant,
    options: MaskOptions,
    queries: &BTreeMap<String, String>,
) -> Result<Vec<MaskSample>> {
    let mut out = Vec::new();
    for wf in workflows {
        if !wf.accepted && !options.include_rejected {
            continue;
        }
        let query = queries.get(&wf.task_id).map(String::as_str);
        out.extend(build_mask_samples(wf, &flag_actions(wf), variant, options, query)?);
    }
    Ok(out)
}

/// Model input for a sample: prefix, mask sentinel, suffix, instruction.
pub fn render_sample_context(sample: &MaskSample) -> String {
    let mut out = render_transcript(&sample.prefix);
    if let Some(token) = &sample.mask_token {
        out.push_str(token);
        out.push('\n');
    }
    out.push_str(&render_transcript(&sample.suffix));
    out.push_str(&sample.instruction);
    out
}

/// Model output for a sample.
pub fn render_sample_target(sample: &MaskSample) -> String {
    match &sample.target {
        SampleTarget::Action(a) => render_action(a),
        SampleTarget::Workflow(steps) => render_transcript(steps),
    }
}

impl MaskSample {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Invalid(format!("sample {}: {m}", self.task_id)));
        if self.schema != SCHEMA {
            return err("unsupported schema");
        }
        if self.reward > 1 || self.flags.iter().any(|&f| f > 1) {
            return err("reward and flags must be 0/1");
        }
        match (&self.target, self.target_index, &self.mask_token) {
            (SampleTarget::Workflow(_), None, None) if self.variant == MaskVariant::NaiveSft => Ok(()),
            (SampleTarget::Action(a), Some(t), Some(_)) if self.variant != MaskVariant::NaiveSft => {
                if a.index != t || self.prefix.len() + 1 != t || t + self.suffix.len() != self.flags.len() {
                    return err("target index does not line up with prefix, suffix and flags");
                }
                Ok(())
            }
            _ => err("target, target_index and mask_token disagree with the variant"),
        }
    }
}

/// Summary written next to an emitted mask dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskManifest {
    pub schema: String,
    /// Sample count per variant; every variant is listed.
    pub counts: BTreeMap<MaskVariant, usize>,
    pub total: usize,
    /// SHA-256 of the workflow file the samples came from.
    pub source_digest: String,
    pub seed: u64,
    /// SHA-256 of the emitted bytes.
    pub sha256: String,
}

/// Writes samples as line-delimited records and describes them.
pub fn emit_dataset(
    samples: &[MaskSample],
    sink: &mut impl Write,
    source_digest: &str,
    seed: u64,
) -> Result<MaskManifest> {
    let bytes = to_jsonl(samples);
    sink.write_all(&bytes)?;
    sink.flush()?;
    let mut counts: BTreeMap<MaskVariant, usize> = MaskVariant::ALL.iter().map(|&v| (v, 0)).collect();
    for s in samples {
        *counts.entry(s.variant).or_default() += 1;
    }
    Ok(MaskManifest {
        schema: SCHEMA.to_string(),
        counts,
        total: samples.len(),
        source_digest: source_digest.to_string(),
        seed,
        sha256: sha256_hex(&bytes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, Feedback, GenerationMode};

    const TB: &str = "Traceback (most recent call last):\n  Line 1, in <cell>\nToolError: detector failed";

    /// [Code(ok), Code(Traceback), Rethink, Code(ok), Done]
    fn fixture() -> Workflow {
        let mut wf = Workflow::new("t1", GenerationMode::DiscrepancyAware);
        wf.actions = vec![
            Action::code("patches = find(\"chair\")").at(1),
            Action::code("final_answer = count(patches)").at(2),
            Action::rethink("execution fault.", "use simple_query.").at(3),
            Action::code("final_answer = simple_query(\"How many chairs are there?\")").at(4),
            Action::done().at(5),
        ];
        wf.feedbacks = vec![Feedback::new(1, ""), Feedback::new(2, TB), Feedback::new(4, "")];
        wf.prediction = Some("2".into());
        wf.accepted = true;
        wf
    }

    #[test]
    fn fixture_flags() {
        let r = flag_actions(&fixture());
        assert_eq!(r.flags, [1, 0, 0, 1, 1]);
        assert_eq!(r.rule_hits[1], [Rule::Traceback, Rule::RethinkContext]);
        assert_eq!(r.rule_hits[2], [Rule::RethinkThought]);
        r.validate().unwrap();
    }

    #[test]
    fn histogram_counts() {
        let h = RuleHistogram::of(&[fixture()]);
        assert_eq!((h.workflows, h.actions, h.ineffective), (1, 5, 2));
        assert_eq!(h.by_rule[&Rule::Traceback], 1);
        assert_eq!(h.by_rule[&Rule::RethinkContext], 1);
        assert_eq!(h.ineffective_by_kind[&ActionKind::Code], 1);
        assert_eq!(h.ineffective_by_kind[&ActionKind::Thought], 1);
    }

    #[test]
    fn however_flags_the_preceding_code() {
        let mut wf = Workflow::new("t", GenerationMode::Standard);
        wf.actions = vec![
            Action::code("x = find(\"cat\")").at(1),
            Action::thought("However, that seems wrong").at(2),
            Action::done().at(3),
        ];
        wf.feedbacks = vec![Feedback::new(1, "")];
        assert_eq!(flag_actions(&wf).flags, [0, 1, 1]);
    }

    #[test]
    fn instruct_masking_targets() {
        let wf = fixture();
        let s = build_mask_samples(&wf, &flag_actions(&wf), MaskVariant::InstructMasking, MaskOptions::default(), None).unwrap();
        let idx: Vec<_> = s.iter().map(|s| s.target_index.unwrap()).collect();
        assert_eq!(idx, [1, 4, 5]);
        for sample in &s {
            sample.validate().unwrap();
            let ctx = render_sample_context(sample);
            assert_eq!(ctx.matches(MASK_TOKEN).count(), 1);
            // rethink stays visible
            assert!(ctx.contains("Discrepancy: execution fault."));
        }
        // masked code's own result is withheld
        assert!(s[0].suffix.iter().all(|st| st.action.index != 1));
    }

    #[test]
    fn other_variants() {
        let wf = fixture();
        let r = flag_actions(&wf);
        let opts = MaskOptions { seed: 3, include_rejected: false };
        let naive = build_mask_samples(&wf, &r, MaskVariant::NaiveSft, opts, Some("How many chairs are there?")).unwrap();
        assert_eq!(naive.len(), 1);
        assert!(!render_sample_context(&naive[0]).contains(MASK_TOKEN));
        assert_eq!(naive[0].instruction, "Question: How many chairs are there?\nReproduce the full workflow.");
        naive[0].validate().unwrap();

        let w = build_mask_samples(&wf, &r, MaskVariant::MaskingWRethink, opts, None).unwrap();
        assert_eq!(w.iter().map(|s| s.target_index.unwrap()).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);

        let random = build_mask_samples(&wf, &r, MaskVariant::RandomMasking, opts, None).unwrap();
        assert_eq!(random.len(), 3);
        let again = build_mask_samples(&wf, &r, MaskVariant::RandomMasking, opts, None).unwrap();
        assert_eq!(random, again);
    }

    #[test]
    fn rejected_input_is_usage_error() {
        let mut wf = fixture();
        wf.accepted = false;
        let r = flag_actions(&wf);
        assert!(matches!(
            build_mask_samples(&wf, &r, MaskVariant::InstructMasking, MaskOptions::default(), None),
            Err(Error::Usage(_))
        ));
        let s = build_mask_samples(&wf, &r, MaskVariant::InstructMasking, MaskOptions { seed: 0, include_rejected: true }, None)
            .unwrap();
        assert!(s.iter().all(|s| s.reward == 0));
    }

    #[test]
    fn emission() {
        let mut sink = Vec::new();
        let m = emit_dataset(&[], &mut sink, "abc", 1).unwrap();
        assert!(sink.is_empty());
        assert_eq!(m.total, 0);
        assert_eq!(m.counts.len(), 4);

        let s = build_dataset(&[fixture()], MaskVariant::InstructMasking, MaskOptions::default(), &BTreeMap::new()).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let ma = emit_dataset(&s, &mut a, "abc", 1).unwrap();
        let mb = emit_dataset(&s, &mut b, "abc", 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(ma.counts[&MaskVariant::InstructMasking], 3);
    }
}
