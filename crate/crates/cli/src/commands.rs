use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use dwim_core::config::RunConfig;
use dwim_core::engine::{data_utilization, tool_use_stats, CollectionStats, Collector};
use dwim_core::flagmask::{build_dataset, emit_dataset, flag_actions, FlagReport, MaskOptions, Rule, RuleHistogram};
use dwim_core::jsonl::{parse_jsonl, to_jsonl};
use dwim_core::loss::{objective_with, tokenize, Oracle, TokenScorer, Uniform, Unigram};
use dwim_core::model::{ActionKind, GenerationMode, MaskSample, MaskVariant, Workflow};
use dwim_core::protocol::PromptOptions;
use dwim_core::sim::{generate_task_set, TaskRecord};
use dwim_core::LossReport64;
use serde::Serialize;

use crate::manifest::{entry, input_name, read_input, OutDir};
use crate::{Cli, Command, Global, ScorerArg};

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let config = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = g.seed.unwrap_or(config.seed);
    match cli.command {
        Command::GenTasks { n } => gen_tasks(g, &config, seed, n),
        Command::Collect { tasks, mode, include_rejected } => {
            let mode = mode.map(GenerationMode::from).unwrap_or(config.mode);
            collect(g, &config, seed, &tasks, mode, include_rejected)
        }
        Command::Flag { workflows } => flag(g, &workflows),
        Command::BuildDataset { workflows, variant, tasks, include_rejected } => {
            let variant = variant.map(MaskVariant::from).unwrap_or(config.variant);
            build(g, seed, &workflows, variant, tasks.as_deref(), include_rejected)
        }
        Command::EvalLoss { dataset, scorer, vocab, unweighted } => eval_loss(g, &dataset, scorer, vocab, !unweighted),
        Command::Stats { artifact } => stats(g, &artifact),
    }
}

fn read_records<T: dwim_core::jsonl::Record>(path: &Path) -> Result<(Vec<T>, String)> {
    let (text, digest) = read_input(path)?;
    Ok((parse_jsonl(&text, &path.display().to_string())?, digest))
}

fn gen_tasks(g: &Global, config: &RunConfig, seed: u64, n: usize) -> Result<()> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    let records = generate_task_set(seed, n, &config.env)?;
    let mut out = OutDir::open(&g.out)?;
    let mut e = entry("gen-tasks", Some(seed), records.len());
    e.details = serde_json::json!({ "env_digest": config.env.digest() });
    out.write("tasks.jsonl", &to_jsonl(&records), e)?;
    out.save()?;
    println!("wrote {} tasks to {}", records.len(), out.path("tasks.jsonl").display());
    Ok(())
}

/// Stats block persisted next to a collected dataset.
#[derive(Debug, Serialize, serde::Deserialize)]
struct StatsBlock {
    #[serde(flatten)]
    stats: CollectionStats,
    data_utilization: f64,
    avg_tool_use: Option<f64>,
}

fn print_stats(block: &StatsBlock) {
    let s = &block.stats;
    println!("mode                  {}", s.mode.as_str());
    println!("attempts              {}", s.attempts);
    println!("accepted              {}", s.acceptances);
    println!("aborted               {}", s.aborted);
    println!("data utilization      {:.4}", block.data_utilization);
    match block.avg_tool_use {
        Some(t) => println!("avg tool use          {t:.4} code actions per accepted workflow"),
        None => println!("avg tool use          n/a"),
    }
    println!("tool calls            {} ({} corrupted)", s.tool_calls, s.corrupted_tool_calls);
    println!("rethinks              {}", s.rethinks);
}

fn collect(g: &Global, config: &RunConfig, seed: u64, tasks: &Path, mode: GenerationMode, include_rejected: bool) -> Result<()> {
    let (records, tasks_digest): (Vec<TaskRecord>, _) = read_records(tasks)?;
    let policy = config.backend.build()?;
    let collector = Collector {
        env: &config.env,
        policy: policy.as_ref(),
        limits: config.limits,
        detector: config.detector,
        seed,
        jobs: g.jobs,
        prompt: PromptOptions::default(),
    };
    let collection = collector.collect(&records, mode)?;
    let mut workflows = collection.accepted.clone();
    if include_rejected {
        workflows.extend(collection.rejected.iter().cloned());
        workflows.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    }
    let block = StatsBlock {
        data_utilization: data_utilization(&collection.stats)?,
        avg_tool_use: tool_use_stats(&collection.accepted).ok(),
        stats: collection.stats,
    };

    let mut out = OutDir::open(&g.out)?;
    let name = format!("workflows.{}.jsonl", mode.as_str());
    let mut e = entry("collect", Some(seed), workflows.len());
    e.inputs.insert(input_name(tasks), tasks_digest);
    e.details = serde_json::json!({ "mode": mode, "include_rejected": include_rejected, "env_digest": config.env.digest() });
    out.write(&name, &to_jsonl(&workflows), e.clone())?;
    let stats_name = format!("stats.{}.json", mode.as_str());
    let mut stats_bytes = serde_json::to_vec_pretty(&block)?;
    stats_bytes.push(b'\n');
    out.write(&stats_name, &stats_bytes, crate::manifest::Entry { records: 1, ..e })?;
    out.save()?;

    print_stats(&block);
    println!("wrote {}", out.path(&name).display());
    paired_comparison(&out)?;
    Ok(())
}

/// Prints the utilization gap when both multi-turn modes have been collected
/// into the same directory.
fn paired_comparison(out: &OutDir) -> Result<()> {
    let load = |mode: GenerationMode| -> Result<Option<StatsBlock>> {
        let path = out.path(&format!("stats.{}.json", mode.as_str()));
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(&path)?)?))
    };
    if let (Some(s), Some(d)) = (load(GenerationMode::Standard)?, load(GenerationMode::DiscrepancyAware)?) {
        println!();
        println!("paired comparison     standard {:.4} | discrepancy_aware {:.4}", s.data_utilization, d.data_utilization);
        println!("data utilization gap  {:+.4}", d.data_utilization - s.data_utilization);
    }
    Ok(())
}

fn print_histogram(h: &RuleHistogram) {
    println!("workflows             {}", h.workflows);
    println!("actions               {}", h.actions);
    println!("ineffective actions   {}", h.ineffective);
    for rule in Rule::ALL {
        println!("  rule {:<16} {}", rule.as_str(), h.by_rule.get(&rule).copied().unwrap_or(0));
    }
    for kind in [ActionKind::Code, ActionKind::Thought, ActionKind::Done] {
        let n = h.ineffective_by_kind.get(&kind).copied().unwrap_or(0);
        let pct = if h.ineffective == 0 { 0.0 } else { 100.0 * n as f64 / h.ineffective as f64 };
        println!("  ineffective {:<9} {n} ({pct:.1}%)", format!("{kind:?}").to_lowercase());
    }
}

fn flag(g: &Global, path: &Path) -> Result<()> {
    let (workflows, digest): (Vec<Workflow>, _) = read_records(path)?;
    let reports: Vec<FlagReport> = workflows.iter().map(flag_actions).collect();
    let mut hist = RuleHistogram::default();
    for (wf, r) in workflows.iter().zip(&reports) {
        hist.add(wf, r);
    }
    let mut out = OutDir::open(&g.out)?;
    let mut e = entry("flag", None, reports.len());
    e.inputs.insert(input_name(path), digest);
    e.details = serde_json::to_value(&hist)?;
    out.write("flags.jsonl", &to_jsonl(&reports), e)?;
    out.save()?;
    print_histogram(&hist);
    println!("wrote {}", out.path("flags.jsonl").display());
    Ok(())
}

fn build(
    g: &Global,
    seed: u64,
    path: &Path,
    variant: MaskVariant,
    tasks: Option<&Path>,
    include_rejected: bool,
) -> Result<()> {
    let (workflows, digest): (Vec<Workflow>, _) = read_records(path)?;
    let skipped = workflows.iter().filter(|w| !w.accepted).count();
    let mut queries = BTreeMap::new();
    let mut task_input = None;
    if let Some(tasks) = tasks {
        let (records, tasks_digest): (Vec<TaskRecord>, _) = read_records(tasks)?;
        queries.extend(records.into_iter().map(|r| (r.task.task_id, r.task.query)));
        if let Some(wf) = workflows.iter().find(|w| !queries.contains_key(&w.task_id)) {
            bail!("{}: no task {} for workflow", tasks.display(), wf.task_id);
        }
        task_input = Some((input_name(tasks), tasks_digest));
    }
    let samples = build_dataset(&workflows, variant, MaskOptions { seed, include_rejected }, &queries)?;
    let mut bytes = Vec::new();
    let manifest = emit_dataset(&samples, &mut bytes, &digest, seed)?;
    let mut out = OutDir::open(&g.out)?;
    let name = format!("dataset.{}.jsonl", variant.as_str());
    let mut e = entry("build-dataset", Some(seed), samples.len());
    e.inputs.insert(input_name(path), digest);
    e.inputs.extend(task_input);
    e.details = serde_json::to_value(&manifest)?;
    out.write(&name, &bytes, e)?;
    out.save()?;
    println!("variant               {}", variant.as_str());
    println!("workflows             {}", workflows.len());
    if !include_rejected && skipped > 0 {
        println!("skipped (rejected)    {skipped}");
    }
    println!("samples               {}", samples.len());
    println!("wrote {}", out.path(&name).display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct LossFile<'a> {
    scorer: &'a str,
    #[serde(flatten)]
    report: &'a LossReport64,
}

fn eval_loss(g: &Global, path: &Path, scorer: ScorerArg, vocab: Option<usize>, weighted: bool) -> Result<()> {
    let (samples, digest): (Vec<MaskSample>, _) = read_records(path)?;
    if samples.is_empty() {
        bail!("{}: dataset has no samples", path.display());
    }
    let (name, report): (&str, LossReport64) = match scorer {
        ScorerArg::Uniform => {
            let vocab_size = match vocab {
                Some(v) if v > 0 => v,
                Some(_) => bail!("--vocab must be positive"),
                None => dataset_vocabulary(&samples).max(1),
            };
            ("uniform", run_scorer(&Uniform { vocab_size }, &samples, weighted)?)
        }
        ScorerArg::Unigram => ("unigram", run_scorer(&Unigram::fit(&samples), &samples, weighted)?),
        ScorerArg::Oracle => ("oracle", run_scorer(&Oracle::fit(&samples)?, &samples, weighted)?),
    };
    let mut out = OutDir::open(&g.out)?;
    let mut e = entry("eval-loss", None, 1);
    e.inputs.insert(input_name(path), digest);
    let mut bytes = serde_json::to_vec_pretty(&LossFile { scorer: name, report: &report })?;
    bytes.push(b'\n');
    let file = format!("loss.{name}.json");
    out.write(&file, &bytes, e)?;
    out.save()?;

    let nll = &report.per_sample_nll;
    let min = nll.iter().copied().fold(f64::INFINITY, f64::min);
    let max = nll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("scorer                {name}");
    println!("samples               {}", report.sample_count);
    println!("reward weighted       {}", report.reward_weighted);
    println!("objective             {:.6}", report.objective);
    println!("nll min / max         {min:.6} / {max:.6}");
    println!("wrote {}", out.path(&file).display());
    Ok(())
}

fn run_scorer<S: TokenScorer<f64>>(scorer: &S, samples: &[MaskSample], weighted: bool) -> Result<LossReport64> {
    Ok(objective_with(scorer, samples, weighted)?)
}

fn dataset_vocabulary(samples: &[MaskSample]) -> usize {
    let mut vocab = BTreeSet::new();
    for s in samples {
        let ctx = dwim_core::flagmask::render_sample_context(s);
        let tgt = dwim_core::flagmask::render_sample_target(s);
        vocab.extend(tokenize(&ctx).into_iter().map(str::to_string));
        vocab.extend(tokenize(&tgt).into_iter().map(str::to_string));
    }
    vocab.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Artifact {
    Tasks,
    Workflows,
    Flags,
    Samples,
}

fn detect(text: &str, path: &Path) -> Result<Option<Artifact>> {
    let Some((i, line)) = text.lines().enumerate().find(|(_, l)| !l.trim().is_empty()) else {
        return Ok(None);
    };
    let value: serde_json::Value = serde_json::from_str(line)
        .with_context(|| format!("{}:{}: not a JSON record", path.display(), i + 1))?;
    let has = |k: &str| value.get(k).is_some();
    Ok(Some(if has("rule_hits") {
        Artifact::Flags
    } else if has("variant") && has("instruction") {
        Artifact::Samples
    } else if has("actions") {
        Artifact::Workflows
    } else if has("scene") && has("task") {
        Artifact::Tasks
    } else {
        bail!("{}:{}: unrecognized record type", path.display(), i + 1)
    }))
}

fn stats(g: &Global, path: &Path) -> Result<()> {
    let (text, digest) = read_input(path)?;
    let origin = path.display().to_string();
    let Some(kind) = detect(&text, path)? else {
        bail!("{origin}: empty artifact");
    };
    let report = match kind {
        Artifact::Tasks => {
            let records: Vec<TaskRecord> = parse_jsonl(&text, &origin)?;
            let mut kinds = BTreeMap::<String, usize>::new();
            for r in &records {
                let label = dwim_core::sim::Query::parse(&r.task.query)
                    .map(|q| q.kind().as_str().to_string())
                    .unwrap_or_else(|| "other".into());
                *kinds.entry(label).or_default() += 1;
            }
            println!("tasks                 {}", records.len());
            for (k, n) in &kinds {
                println!("  {k:<19} {n}");
            }
            serde_json::json!({ "artifact": "tasks", "tasks": records.len(), "by_kind": kinds })
        }
        Artifact::Workflows => {
            let workflows: Vec<Workflow> = parse_jsonl(&text, &origin)?;
            let accepted = workflows.iter().filter(|w| w.accepted).count();
            let tool_use = tool_use_stats(&workflows).ok();
            let hist = RuleHistogram::of(&workflows);
            println!("workflows             {}", workflows.len());
            println!("accepted              {accepted}");
            println!("data utilization      {:.4} (accepted / records in file)", accepted as f64 / workflows.len() as f64);
            match tool_use {
                Some(t) => println!("avg tool use          {t:.4} code actions per accepted workflow"),
                None => println!("avg tool use          n/a (no accepted workflows)"),
            }
            print_histogram(&hist);
            serde_json::json!({
                "artifact": "workflows",
                "workflows": workflows.len(),
                "accepted": accepted,
                "avg_tool_use": tool_use,
                "flags": hist,
            })
        }
        Artifact::Flags => {
            let reports: Vec<FlagReport> = parse_jsonl(&text, &origin)?;
            let actions: usize = reports.iter().map(|r| r.flags.len()).sum();
            let effective: usize = reports.iter().map(|r| r.flags.iter().filter(|&&f| f == 1).count()).sum();
            let mut by_rule = BTreeMap::<Rule, usize>::new();
            for hit in reports.iter().flat_map(|r| r.rule_hits.iter().flatten()) {
                *by_rule.entry(*hit).or_default() += 1;
            }
            println!("flag reports          {}", reports.len());
            println!("actions               {actions}");
            println!("effective (flag 1)    {effective}");
            for rule in Rule::ALL {
                println!("  rule {:<16} {}", rule.as_str(), by_rule.get(&rule).copied().unwrap_or(0));
            }
            serde_json::json!({ "artifact": "flags", "reports": reports.len(), "actions": actions, "effective": effective, "by_rule": by_rule })
        }
        Artifact::Samples => {
            let samples: Vec<MaskSample> = parse_jsonl(&text, &origin)?;
            let mut by_variant = BTreeMap::<MaskVariant, usize>::new();
            for s in &samples {
                *by_variant.entry(s.variant).or_default() += 1;
            }
            let rewarded = samples.iter().filter(|s| s.reward == 1).count();
            println!("samples               {}", samples.len());
            for (v, n) in &by_variant {
                println!("  {:<19} {n}", v.as_str());
            }
            println!("reward 1              {rewarded}");
            serde_json::json!({ "artifact": "samples", "samples": samples.len(), "by_variant": by_variant, "rewarded": rewarded })
        }
    };
    let label = report["artifact"].as_str().unwrap_or("artifact").to_string();
    let mut out = OutDir::open(&g.out)?;
    let mut e = entry("stats", None, 1);
    e.inputs.insert(input_name(path), digest);
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    out.write(&format!("report.{label}.json"), &bytes, e)?;
    out.save()?;
    Ok(())
}
