use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backend::Policy;
use super::detector::DetectorKind;
use super::episode::{run_episode, EpisodeLimits, EpisodeOutcome};
use crate::error::{Error, Result};
use crate::model::{GenerationMode, Workflow};
use crate::protocol::PromptOptions;
use crate::seed;
use crate::sim::{EnvConfig, TaskRecord, ToolSession};

/// Counters for one collection run; merged by field-wise addition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub mode: GenerationMode,
    pub attempts: usize,
    pub acceptances: usize,
    pub aborted: usize,
    /// Code actions summed over accepted workflows.
    pub accepted_code_actions: usize,
    pub tool_calls: usize,
    pub corrupted_tool_calls: usize,
    pub rethinks: usize,
}

impl CollectionStats {
    pub fn new(mode: GenerationMode) -> Self {
        Self {
            mode,
            attempts: 0,
            acceptances: 0,
            aborted: 0,
            accepted_code_actions: 0,
            tool_calls: 0,
            corrupted_tool_calls: 0,
            rethinks: 0,
        }
    }

    pub fn record(&mut self, outcome: &EpisodeOutcome) {
        self.attempts += 1;
        if outcome.workflow.accepted {
            self.acceptances += 1;
            self.accepted_code_actions += outcome.workflow.code_action_count();
        }
        self.aborted += usize::from(outcome.workflow.abort.is_some());
        self.tool_calls += outcome.tool_calls;
        self.corrupted_tool_calls += outcome.corrupted_calls;
        self.rethinks += outcome.rethinks;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        debug_assert_eq!(self.mode, other.mode);
        self.attempts += other.attempts;
        self.acceptances += other.acceptances;
        self.aborted += other.aborted;
        self.accepted_code_actions += other.accepted_code_actions;
        self.tool_calls += other.tool_calls;
        self.corrupted_tool_calls += other.corrupted_tool_calls;
        self.rethinks += other.rethinks;
        self
    }
}

/// Fraction of attempted tasks whose workflow was accepted.
pub fn data_utilization(stats: &CollectionStats) -> Result<f64> {
    if stats.attempts == 0 {
        return Err(Error::Usage("data utilization is undefined for zero attempts".into()));
    }
    Ok(stats.acceptances as f64 / stats.attempts as f64)
}

/// Mean Code actions per accepted workflow.
pub fn tool_use_stats(workflows: &[Workflow]) -> Result<f64> {
    let counts: Vec<usize> = workflows.iter().filter(|w| w.accepted).map(Workflow::code_action_count).collect();
    if counts.is_empty() {
        return Err(Error::Usage("tool-use statistics need at least one accepted workflow".into()));
    }
    Ok(counts.iter().sum::<usize>() as f64 / counts.len() as f64)
}

/// Result of one collection run, ordered by task id.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    /// The trainable dataset: accepted workflows only.
    pub accepted: Vec<Workflow>,
    pub rejected: Vec<Workflow>,
    pub stats: CollectionStats,
}

/// Everything an episode needs besides its task.
pub struct Collector<'a> {
    pub env: &'a EnvConfig,
    pub policy: &'a dyn Policy,
    pub limits: EpisodeLimits,
    pub detector: DetectorKind,
    pub seed: u64,
    /// Worker threads; 0 or 1 runs on the calling thread.
    pub jobs: usize,
    pub prompt: PromptOptions,
}

impl Collector<'_> {
    /// Noise stream for a task. Independent of the mode, so runs in
    /// different modes see paired tool draws.
    pub fn episode_seed(&self, task_id: &str) -> u64 {
        seed::split(seed::split(self.seed, "noise") ^ self.env.noise.seed, task_id)
    }

    pub fn run(&self, record: &TaskRecord, mode: GenerationMode) -> EpisodeOutcome {
        let session = ToolSession::new(
            record.scene.clone(),
            self.env.scene.clone(),
            self.env.noise.clone(),
            self.env.library.clone(),
            self.episode_seed(&record.task.task_id),
        );
        run_episode(&record.task, self.policy, session, mode, self.limits, self.detector, &self.prompt)
    }

    /// One episode per task. Failures are counted, never raised.
    pub fn collect(&self, records: &[TaskRecord], mode: GenerationMode) -> Result<Collection> {
        if records.is_empty() {
            return Err(Error::Usage("collection needs at least one task".into()));
        }
        self.env.validate()?;
        self.limits.validate()?;
        for r in records {
            if r.task.scene_ref != r.scene.scene_id {
                return Err(Error::Invalid(format!("task {} is not bound to its scene", r.task.task_id)));
            }
        }
        let mut outcomes: Vec<EpisodeOutcome> = if self.jobs <= 1 {
            records.iter().map(|r| self.run(r, mode)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.jobs)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            pool.install(|| records.par_iter().map(|r| self.run(r, mode)).collect())
        };
        outcomes.sort_by(|a, b| a.workflow.task_id.cmp(&b.workflow.task_id));
        let stats = outcomes.iter().fold(CollectionStats::new(mode), |mut s, o| {
            s.record(o);
            s
        });
        let (accepted, rejected) = outcomes.into_iter().map(|o| o.workflow).partition(|w| w.accepted);
        Ok(Collection { accepted, rejected, stats })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::script::Script;
    use crate::model::{Action, Feedback};
    use crate::sim::{generate_task_set, NoiseModel};

    fn collector<'a>(env: &'a EnvConfig, policy: &'a Script, jobs: usize) -> Collector<'a> {
        Collector {
            env,
            policy,
            limits: EpisodeLimits::default(),
            detector: DetectorKind::SimOracle,
            seed: 5,
            jobs,
            prompt: PromptOptions::default(),
        }
    }

    #[test]
    fn utilization_arithmetic() {
        let mut s = CollectionStats::new(GenerationMode::Standard);
        assert!(data_utilization(&s).is_err());
        s.attempts = 1000;
        s.acceptances = 683;
        assert_eq!(data_utilization(&s).unwrap(), 0.683);
        s.attempts = 10;
        s.acceptances = 0;
        assert_eq!(data_utilization(&s).unwrap(), 0.0);
        s.acceptances = 10;
        assert_eq!(data_utilization(&s).unwrap(), 1.0);
    }

    fn accepted_with_codes(n: usize) -> Workflow {
        let mut wf = Workflow::new(format!("t{n}"), GenerationMode::Standard);
        for i in 1..=n {
            wf.actions.push(Action::code("x = 1").at(i));
            wf.feedbacks.push(Feedback::new(i, ""));
        }
        wf.actions.push(Action::done().at(n + 1));
        wf.accepted = true;
        wf
    }

    #[test]
    fn tool_use_mean() {
        assert_eq!(tool_use_stats(&[accepted_with_codes(1), accepted_with_codes(3)]).unwrap(), 2.0);
        assert_eq!(tool_use_stats(&[accepted_with_codes(0)]).unwrap(), 0.0);
        assert!(tool_use_stats(&[]).is_err());
    }

    #[test]
    fn parallel_collection_matches_sequential() {
        let env = EnvConfig::default();
        let records = generate_task_set(3, 40, &env).unwrap();
        let policy = Script::with_fallbacks();
        let a = collector(&env, &policy, 1).collect(&records, GenerationMode::DiscrepancyAware).unwrap();
        let b = collector(&env, &policy, 4).collect(&records, GenerationMode::DiscrepancyAware).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stats.attempts, 40);
        assert_eq!(a.accepted.len() + a.rejected.len(), 40);
        assert!(a.accepted.windows(2).all(|w| w[0].task_id < w[1].task_id));
    }

    #[test]
    fn noiseless_optimal_accepts_everything() {
        let env = EnvConfig { noise: NoiseModel::noiseless(), ..EnvConfig::default() };
        let records = generate_task_set(9, 60, &env).unwrap();
        let policy = Script::optimal();
        for mode in GenerationMode::ALL {
            let c = collector(&env, &policy, 1).collect(&records, mode).unwrap();
            assert_eq!(data_utilization(&c.stats).unwrap(), 1.0, "{mode:?}: {:?}", c.rejected.first());
        }
    }

    #[test]
    fn empty_task_list_is_usage_error() {
        let env = EnvConfig::default();
        let policy = Script::optimal();
        assert!(matches!(collector(&env, &policy, 1).collect(&[], GenerationMode::Standard), Err(Error::Usage(_))));
    }
}
