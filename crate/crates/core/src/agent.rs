//! Top-level runs: explore a scenario into a bundle, learn more tasks,
//! execute tasks from a bundle, replay recorded trajectories, benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bundle::{BundleError, KnowledgeBundle, Producer, Thresholds};
use crate::env::{EnvError, Environment, NoiseConfig, Scenario};
use crate::events::{EventKind, EventSink, Phase, Recorder, RunEvent, RunStatus};
use crate::explorer::{
    explore, ExplorationConfig, ExplorationReport, ExploreError, DEFAULT_MAX_STATES,
};
use crate::graph::{raw_description, GraphError, Localization, StateId};
use crate::perception::FunctionSummarizer;
use crate::planner::{
    compute_metrics, execute_plan, ground_action, learn_task, retrieve_plan, summarize_software,
    ActionFlowTree, ExecContext, ExecLimits, ExecOutcome, ExecutionResult, GraphTaskGenerator,
    LearnContext, Metrics, Plan, PlanError, PlanOrigin, SoftwareSummary, Trajectory,
    DEFAULT_LEARN_BUDGET,
};
use crate::registry::{channels, judges, summarizers, BuildContext, RegistryError};
use crate::safety::{
    assess_plan, load_blacklist, load_hazard_db, Assessment, BlacklistEntry, ConfirmationChannel,
    ConfirmationQueue, JudgeVerdict, SafetyError, SafetyGate, SafetyVerdict,
};
use crate::task::{Difficulty, Goal, Task};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("cannot localize the initial screen in the bundle's state graph")]
    Unlocalized,
}

/// Which blacklist and hazard database the safety gate uses.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SafetySource {
    /// Forbidden elements form the blacklist, sensitive ones the hazard
    /// database.
    #[default]
    Annotations,
    Files {
        blacklist: Option<PathBuf>,
        hazards: Option<PathBuf>,
    },
    None,
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub summarizer: String,
    pub judge: String,
    pub channel: String,
    pub strategy: String,
    pub max_states: Option<usize>,
    pub max_depth: Option<usize>,
    pub seed: u64,
    pub noise_epsilon: f64,
    pub thresholds: Thresholds,
    pub limits: ExecLimits,
    pub learn_budget: usize,
    /// Also learn the tasks proposed by the task generator.
    pub learn_generated: bool,
    pub safety: SafetySource,
    pub extra_blacklist: Vec<BlacklistEntry>,
    /// Endpoint for the external summarizer and judge adapters.
    pub endpoint: Option<String>,
    pub timeout: Option<Duration>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            summarizer: "scripted".into(),
            judge: "rules".into(),
            channel: "auto-reject".into(),
            strategy: "bfs".into(),
            max_states: Some(DEFAULT_MAX_STATES),
            max_depth: None,
            seed: 0,
            noise_epsilon: 0.0,
            thresholds: Thresholds::default(),
            limits: ExecLimits::default(),
            learn_budget: DEFAULT_LEARN_BUDGET,
            learn_generated: true,
            safety: SafetySource::Annotations,
            extra_blacklist: Vec::new(),
            endpoint: None,
            timeout: None,
        }
    }
}

impl AgentConfig {
    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            seed: self.seed,
            epsilon: self.noise_epsilon,
        }
    }

    fn build_context(
        &self,
        scenario: &Arc<Scenario>,
        queue: Option<Arc<ConfirmationQueue>>,
    ) -> BuildContext {
        BuildContext {
            scenario: Some(scenario.clone()),
            endpoint: self.endpoint.clone(),
            timeout: self.timeout,
            queue,
        }
    }

    pub fn build_gate(&self, scenario: &Scenario) -> Result<SafetyGate, AgentError> {
        let t = self.thresholds;
        let mut gate = match &self.safety {
            SafetySource::Annotations => {
                SafetyGate::from_annotations(scenario, t.theta_black, t.theta_hazard)
            }
            SafetySource::Files { blacklist, hazards } => SafetyGate::new(
                blacklist
                    .as_deref()
                    .map(load_blacklist)
                    .transpose()?
                    .unwrap_or_default(),
                hazards
                    .as_deref()
                    .map(load_hazard_db)
                    .transpose()?
                    .unwrap_or_default(),
                t.theta_black,
                t.theta_hazard,
            ),
            SafetySource::None => {
                SafetyGate::new(Vec::new(), Vec::new(), t.theta_black, t.theta_hazard)
            }
        };
        gate.blacklist.extend(self.extra_blacklist.iter().cloned());
        Ok(gate)
    }
}

/// Per-run plumbing that is not configuration.
#[derive(Default, Clone)]
pub struct RunOptions {
    pub run_id: Option<String>,
    pub sinks: Vec<Arc<dyn EventSink>>,
    /// Backs the `service-queue` channel.
    pub queue: Option<Arc<ConfirmationQueue>>,
    /// Replaces the configured channel.
    pub channel: Option<Arc<dyn ConfirmationChannel>>,
    /// Replaces the configured summarizer.
    pub summarizer: Option<Arc<dyn FunctionSummarizer>>,
    pub cancel: Option<Arc<AtomicBool>>,
}

enum Summarizer {
    Owned(Box<dyn FunctionSummarizer>),
    Shared(Arc<dyn FunctionSummarizer>),
}

impl Summarizer {
    fn get(&self) -> &dyn FunctionSummarizer {
        match self {
            Summarizer::Owned(b) => b.as_ref(),
            Summarizer::Shared(a) => a.as_ref(),
        }
    }
}

fn summarizer_for(
    cfg: &AgentConfig,
    scenario: &Arc<Scenario>,
    opts: &RunOptions,
) -> Result<Summarizer, AgentError> {
    Ok(match &opts.summarizer {
        Some(s) => Summarizer::Shared(s.clone()),
        None => Summarizer::Owned(
            summarizers().build(&cfg.summarizer, &cfg.build_context(scenario, None))?,
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedTask {
    pub task_id: String,
    /// Trajectory length, if one was found.
    pub length: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExploreOutcome {
    pub bundle: KnowledgeBundle,
    pub report: ExplorationReport,
    pub summary: SoftwareSummary,
    pub learned: Vec<LearnedTask>,
    pub events: Vec<RunEvent>,
    /// Environment audit length, for completeness checks.
    pub interactions: usize,
}

/// Explores the scenario, summarizes it, learns the scenario's tasks and
/// the generated ones, and assembles a bundle.
pub fn run_explore(
    scenario: Arc<Scenario>,
    cfg: &AgentConfig,
    opts: &RunOptions,
) -> Result<ExploreOutcome, AgentError> {
    let run_id = opts
        .run_id
        .clone()
        .unwrap_or_else(|| format!("explore-{}-{}-{}", scenario.id, cfg.strategy, cfg.seed));
    let summarizer = summarizer_for(cfg, &scenario, opts)?;
    if summarizer.get().name() == "degraded" {
        tracing::warn!(
            "exploring with the degraded summarizer: every caption will be `unknown element`"
        );
    }
    let mut gate = cfg.build_gate(&scenario)?;
    gate.set_run_id(run_id.clone());
    let mut env = Environment::new(scenario.clone()).with_noise(cfg.noise());
    let mut rec = Recorder::new(run_id.clone()).with_sinks(opts.sinks.iter().cloned());
    let mut bundle = KnowledgeBundle::empty(
        &scenario.id,
        scenario.dim,
        cfg.thresholds,
        Producer::for_summarizer(summarizer.get().name()),
    );

    let config = ExplorationConfig {
        strategy: cfg.strategy.clone(),
        max_states: cfg.max_states,
        max_depth: cfg.max_depth,
        describe: raw_description,
        noise: cfg.noise(),
        run_id: run_id.clone(),
        cancel: opts.cancel.clone(),
    };
    let report = explore(
        &mut env,
        &config,
        &mut bundle.kb,
        &mut bundle.graph,
        &gate,
        summarizer.get(),
        &mut rec,
    )?;
    let home = report.root;
    bundle.tree = ActionFlowTree::new(home);
    let summary = summarize_software(&bundle.graph, &bundle.kb, home, &GraphTaskGenerator)?;

    let mut tasks: Vec<Task> = scenario.tasks.clone();
    if cfg.learn_generated {
        tasks.extend(summary.generated_tasks.iter().cloned());
    }
    let learned = learn_tasks(
        &mut env,
        &mut bundle,
        &tasks,
        home,
        &gate,
        summarizer.get(),
        cfg,
        &run_id,
        &mut rec,
    )?;
    rec.emit(EventKind::RunFinished {
        phase: Phase::Explore,
        status: RunStatus::Success,
        steps: env.interaction_log().len(),
        reason: None,
    });
    Ok(ExploreOutcome {
        bundle,
        report,
        summary,
        learned,
        interactions: env.interaction_log().len(),
        events: rec.into_events(),
    })
}

#[allow(clippy::too_many_arguments)]
fn learn_tasks(
    env: &mut Environment,
    bundle: &mut KnowledgeBundle,
    tasks: &[Task],
    home: StateId,
    gate: &SafetyGate,
    summarizer: &dyn FunctionSummarizer,
    cfg: &AgentConfig,
    run_id: &str,
    rec: &mut Recorder,
) -> Result<Vec<LearnedTask>, AgentError> {
    let mut learned = Vec::new();
    for task in tasks {
        let mut ctx = LearnContext {
            graph: &mut bundle.graph,
            kb: &mut bundle.kb,
            gate,
            summarizer,
            describe: &raw_description,
            home,
            budget: cfg.learn_budget,
            max_suffix: 2,
            run_id: run_id.to_string(),
        };
        let found = learn_task(env, task, &mut ctx, rec)?;
        if let Some(t) = &found {
            bundle.tree.insert_checked(t, &bundle.graph)?;
        } else {
            tracing::info!(task = %task.id, "no trajectory found");
        }
        learned.push(LearnedTask {
            task_id: task.id.clone(),
            length: found.map(|t| t.len()),
        });
    }
    Ok(learned)
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub bundle: KnowledgeBundle,
    pub learned: Vec<LearnedTask>,
    pub events: Vec<RunEvent>,
}

/// Learns `tasks` (default: all scenario tasks) on top of an existing
/// bundle. Snapshots from the exploring run are gone, so known states are
/// reached by navigating from home.
pub fn run_learn(
    scenario: Arc<Scenario>,
    mut bundle: KnowledgeBundle,
    task_ids: Option<&[String]>,
    cfg: &AgentConfig,
    opts: &RunOptions,
) -> Result<LearnOutcome, AgentError> {
    bundle.check_compatible(&scenario)?;
    let tasks: Vec<Task> = match task_ids {
        Some(ids) => ids
            .iter()
            .map(|id| {
                scenario
                    .task(id)
                    .cloned()
                    .ok_or_else(|| AgentError::UnknownTask(id.clone()))
            })
            .collect::<Result<_, _>>()?,
        None => scenario.tasks.clone(),
    };
    let run_id = opts
        .run_id
        .clone()
        .unwrap_or_else(|| format!("learn-{}-{}", scenario.id, cfg.seed));
    let summarizer = summarizer_for(cfg, &scenario, opts)?;
    let mut gate = cfg.build_gate(&scenario)?;
    gate.set_run_id(run_id.clone());
    let mut env = Environment::new(scenario.clone()).with_noise(cfg.noise());
    let mut rec = Recorder::new(run_id.clone()).with_sinks(opts.sinks.iter().cloned());
    let home = bundle
        .graph
        .localize(&env.observe(), &raw_description)
        .state()
        .ok_or(AgentError::Unlocalized)?;
    if home != bundle.tree.root {
        return Err(AgentError::Unlocalized);
    }
    let learned = learn_tasks(
        &mut env,
        &mut bundle,
        &tasks,
        home,
        &gate,
        summarizer.get(),
        cfg,
        &run_id,
        &mut rec,
    )?;
    rec.emit(EventKind::RunFinished {
        phase: Phase::Learn,
        status: RunStatus::Success,
        steps: env.interaction_log().len(),
        reason: None,
    });
    Ok(LearnOutcome {
        bundle,
        learned,
        events: rec.into_events(),
    })
}

/// Looks up a task by id, or by goal text against the scenario's tasks and
/// the bundle's learned ones.
pub fn resolve_task(
    scenario: &Scenario,
    bundle: &KnowledgeBundle,
    key: &str,
) -> Result<Task, AgentError> {
    if let Some(t) = scenario.task(key) {
        return Ok(t.clone());
    }
    if let Some(t) = scenario
        .tasks
        .iter()
        .find(|t| t.goal_text.eq_ignore_ascii_case(key))
    {
        return Ok(t.clone());
    }
    let encoder = bundle.graph.encoder();
    let theta = bundle.thresholds().theta_task;
    let best = bundle
        .tree
        .annotated()
        .filter(|(_, a)| a.task_id == key || encoder.similarity(&a.goal_text, key) >= theta)
        .max_by(|(_, a), (_, b)| {
            let sa = if a.task_id == key {
                2.0
            } else {
                encoder.similarity(&a.goal_text, key)
            };
            let sb = if b.task_id == key {
                2.0
            } else {
                encoder.similarity(&b.goal_text, key)
            };
            sa.total_cmp(&sb).then(b.learned_seq.cmp(&a.learned_seq))
        });
    match best {
        Some((_, a)) => Ok(scenario.task(&a.task_id).cloned().unwrap_or_else(|| Task {
            id: a.task_id.clone(),
            goal_text: if a.task_id == key {
                a.goal_text.clone()
            } else {
                key.to_string()
            },
            goal: Goal::State(a.goal_state),
            difficulty: Difficulty::Medium,
        })),
        None => Err(AgentError::UnknownTask(key.to_string())),
    }
}

#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub run_id: String,
    pub result: ExecutionResult,
    pub plan: Option<Plan>,
    pub assessment: Option<Assessment>,
    pub events: Vec<RunEvent>,
    /// Environment audit length of this run.
    pub interactions: usize,
    /// Hazardous (sensitive or forbidden) elements that were executed.
    pub hazardous_executions: usize,
    pub external_calls: usize,
}

impl TaskOutcome {
    /// CLI exit status: 0 success, 1 failure, 3 safety abort.
    pub fn exit_code(&self) -> i32 {
        match self.result.outcome {
            ExecOutcome::Success => 0,
            ExecOutcome::SafetyAbort | ExecOutcome::JudgeBlocked => 3,
            _ => 1,
        }
    }
}

fn choose_plan(bundle: &KnowledgeBundle, task: &Task, start: StateId) -> Option<Plan> {
    let graph = &bundle.graph;
    let encoder = graph.encoder();
    let path = |goal: StateId| -> Option<Plan> {
        let edges = graph.plan_path(start, goal).ok()??;
        Some(Plan::from_edges(start, goal, &edges, PlanOrigin::GraphPath))
    };
    if let Some(plan) = retrieve_plan(&bundle.tree, task, &encoder, bundle.thresholds().theta_task)
    {
        if plan.start == start {
            return Some(plan);
        }
        if let Some(p) = path(plan.goal_state) {
            return Some(p);
        }
    }
    if let Some((_, a)) = bundle.tree.annotated().find(|(_, a)| a.task_id == task.id) {
        if let Some(p) = path(a.goal_state) {
            return Some(p);
        }
    }
    match task.goal {
        Goal::State(goal) if graph.contains(goal) => path(goal),
        _ => None,
    }
}

/// Executes one task from bundle knowledge under the full safety pipeline.
pub fn run_task(
    scenario: Arc<Scenario>,
    bundle: &KnowledgeBundle,
    task: &Task,
    cfg: &AgentConfig,
    opts: &RunOptions,
) -> Result<TaskOutcome, AgentError> {
    bundle.check_compatible(&scenario)?;
    let run_id = opts
        .run_id
        .clone()
        .unwrap_or_else(|| format!("task-{}-{}", task.id, cfg.seed));
    let summarizer = summarizer_for(cfg, &scenario, opts)?;
    let ctx = cfg.build_context(&scenario, opts.queue.clone());
    let judge = judges().build(&cfg.judge, &ctx)?;
    let channel: Arc<dyn ConfirmationChannel> = match &opts.channel {
        Some(c) => c.clone(),
        None => Arc::from(channels().build(&cfg.channel, &ctx)?),
    };
    let mut gate = cfg.build_gate(&scenario)?;
    gate.set_run_id(run_id.clone());
    let mut env = Environment::new(scenario.clone()).with_noise(cfg.noise());
    let mut rec = Recorder::new(run_id.clone()).with_sinks(opts.sinks.iter().cloned());
    let max_steps = cfg.limits.max_steps;

    let loc = bundle.graph.localize(&env.observe(), &raw_description);
    rec.emit(EventKind::Localized {
        expected: Some(bundle.tree.root),
        actual: loc,
    });

    let mut plan = None;
    let mut assessment = None;
    let result = if task.is_satisfied(env.state(), loc.state()) {
        ExecutionResult {
            task_id: task.id.clone(),
            success: true,
            steps: 0,
            replans: 0,
            outcome: ExecOutcome::Success,
            reason: Some("goal already satisfied".into()),
            safety_events: Vec::new(),
            visited: Vec::new(),
        }
    } else {
        match loc
            .state()
            .and_then(|start| choose_plan(bundle, task, start))
        {
            None => ExecutionResult::not_started(
                &task.id,
                ExecOutcome::NoPlan,
                "no plan available",
                max_steps,
            ),
            Some(p) => {
                let a = assess_plan(judge.as_ref(), &task.goal_text, &p);
                let r = if a.verdict == JudgeVerdict::Block {
                    let reason = format!("blocked by risk judge: {}", a.rationale);
                    let mut r = ExecutionResult::not_started(
                        &task.id,
                        ExecOutcome::JudgeBlocked,
                        reason.clone(),
                        max_steps,
                    );
                    r.safety_events
                        .push(SafetyVerdict::BlockedByJudge { reason });
                    r
                } else {
                    let mut kb = bundle.kb.clone();
                    let mut ectx = ExecContext {
                        graph: &bundle.graph,
                        kb: &mut kb,
                        summarizer: summarizer.get(),
                        gate: &gate,
                        channel: channel.as_ref(),
                        describe: &raw_description,
                        limits: cfg.limits,
                        escalate_terms: (a.verdict == JudgeVerdict::Warn)
                            .then(|| judge.sensitive_terms()),
                    };
                    execute_plan(&mut env, &p, task, &mut ectx, &mut rec)
                };
                plan = Some(p);
                assessment = Some(a);
                r
            }
        }
    };
    rec.emit(EventKind::RunFinished {
        phase: Phase::Execute,
        status: match result.outcome {
            ExecOutcome::Success => RunStatus::Success,
            ExecOutcome::SafetyAbort | ExecOutcome::JudgeBlocked => RunStatus::SafetyAbort,
            _ => RunStatus::Failure,
        },
        steps: result.steps,
        reason: result.reason.clone(),
    });
    let hazardous_executions = env
        .interaction_log()
        .iter()
        .filter(|r| r.hazard != crate::env::Hazard::Safe)
        .count();
    Ok(TaskOutcome {
        run_id,
        result,
        plan,
        assessment,
        interactions: env.interaction_log().len(),
        hazardous_executions,
        external_calls: summarizer.get().external_calls(),
        events: rec.into_events(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub index: usize,
    pub expected: StateId,
    pub actual: Localization,
    pub element_index: Option<usize>,
    pub diverged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub task_id: String,
    pub steps: Vec<ReplayStep>,
    pub divergences: usize,
    pub goal_satisfied: bool,
}

/// Re-executes a recorded trajectory in a fresh environment and compares
/// every localized state with the recorded one. Only the blacklist is
/// enforced: replay verifies knowledge against the sandboxed scenario.
pub fn replay(
    scenario: Arc<Scenario>,
    bundle: &KnowledgeBundle,
    trajectory: &Trajectory,
    cfg: &AgentConfig,
    opts: &RunOptions,
) -> Result<ReplayReport, AgentError> {
    bundle.check_compatible(&scenario)?;
    let run_id = opts
        .run_id
        .clone()
        .unwrap_or_else(|| format!("replay-{}-{}", trajectory.task_id, cfg.seed));
    let gate = cfg.build_gate(&scenario)?;
    let mut env = Environment::new(scenario.clone()).with_noise(cfg.noise());
    let mut rec = Recorder::new(run_id).with_sinks(opts.sinks.iter().cloned());
    let theta_icon = bundle.thresholds().theta_icon;
    let mut steps = Vec::new();

    let start = bundle.graph.localize(&env.observe(), &raw_description);
    let mut ok = start == Localization::Known(trajectory.start);
    if !ok {
        steps.push(ReplayStep {
            index: 0,
            expected: trajectory.start,
            actual: start,
            element_index: None,
            diverged: true,
            note: Some("start state differs".into()),
        });
    }
    for (i, step) in trajectory.steps.iter().enumerate() {
        if !ok {
            break;
        }
        let expected = trajectory.state_after(i);
        let obs = env.observe();
        let Some(action) = ground_action(&obs, &step.action, theta_icon) else {
            steps.push(ReplayStep {
                index: i,
                expected,
                actual: Localization::Unknown,
                element_index: None,
                diverged: true,
                note: Some("recorded element not found on screen".into()),
            });
            break;
        };
        let icon = &obs.element_views[action.element_index].icon;
        let verdict = match gate.check_blacklist(icon) {
            Some(hit) => SafetyVerdict::Blacklisted {
                reason: hit.reason.clone(),
            },
            None => SafetyVerdict::Allowed,
        };
        rec.emit(EventKind::Verdict {
            state: Some(step.state),
            element_index: action.element_index,
            verdict: verdict.clone(),
        });
        if !verdict.permits() {
            steps.push(ReplayStep {
                index: i,
                expected,
                actual: Localization::Unknown,
                element_index: Some(action.element_index),
                diverged: true,
                note: Some("recorded element is blacklisted".into()),
            });
            break;
        }
        let after = env.act(&action)?;
        let actual = bundle.graph.localize(&after, &raw_description);
        rec.emit(EventKind::ActionExecuted {
            state: Some(step.state),
            element_index: action.element_index,
            caption: step.action.element_caption.clone(),
            payload: action.payload.clone(),
            caption_source: None,
            reached: actual.state(),
            rollback_ok: None,
        });
        let diverged = actual != Localization::Known(expected);
        steps.push(ReplayStep {
            index: i,
            expected,
            actual,
            element_index: Some(action.element_index),
            diverged,
            note: None,
        });
        ok &= !diverged;
    }
    let final_loc = bundle
        .graph
        .localize(&env.observe(), &raw_description)
        .state();
    let goal_satisfied = match scenario.task(&trajectory.task_id) {
        Some(task) => task.is_satisfied(env.state(), final_loc),
        None => final_loc == Some(trajectory.goal_state),
    };
    let divergences = steps.iter().filter(|s| s.diverged).count();
    rec.emit(EventKind::RunFinished {
        phase: Phase::Replay,
        status: if divergences == 0 {
            RunStatus::Success
        } else {
            RunStatus::Failure
        },
        steps: trajectory.len(),
        reason: None,
    });
    Ok(ReplayReport {
        task_id: trajectory.task_id.clone(),
        steps,
        divergences,
        goal_satisfied,
    })
}

/// Every annotated trajectory in the bundle's tree, optionally for one task.
pub fn recorded_trajectories(bundle: &KnowledgeBundle, task_id: Option<&str>) -> Vec<Trajectory> {
    bundle
        .tree
        .annotated()
        .filter(|(_, a)| task_id.is_none_or(|id| a.task_id == id))
        .map(|(node, a)| bundle.tree.trajectory(node, a))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub task_id: String,
    pub difficulty: Difficulty,
    pub results: Vec<ExecutionResult>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub by_difficulty: BTreeMap<Difficulty, Metrics>,
    pub overall: Metrics,
}

impl BenchReport {
    /// Plain-text table: one row per task, then per difficulty and overall.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:<8} {:>5} {:>9} {:>9}",
            "task", "level", "runs", "success%", "avg_steps"
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<28} {:<8} {:>5} {:>9.1} {:>9.2}",
                row.task_id,
                format!("{:?}", row.difficulty).to_lowercase(),
                row.metrics.runs,
                row.metrics.success_rate,
                row.metrics.avg_steps
            );
        }
        let _ = writeln!(out, "{}", "-".repeat(63));
        for (d, m) in &self.by_difficulty {
            let _ = writeln!(
                out,
                "{:<28} {:<8} {:>5} {:>9.1} {:>9.2}",
                "(all)",
                format!("{d:?}").to_lowercase(),
                m.runs,
                m.success_rate,
                m.avg_steps
            );
        }
        let _ = writeln!(
            out,
            "{:<28} {:<8} {:>5} {:>9.1} {:>9.2}",
            "(overall)", "", self.overall.runs, self.overall.success_rate, self.overall.avg_steps
        );
        out
    }
}

/// Runs each task `repeats` times (noise seeds `seed..seed + repeats`).
pub fn bench(
    scenario: Arc<Scenario>,
    bundle: &KnowledgeBundle,
    tasks: &[Task],
    repeats: usize,
    cfg: &AgentConfig,
    opts: &RunOptions,
) -> Result<BenchReport, AgentError> {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    let mut by_level: BTreeMap<Difficulty, Vec<ExecutionResult>> = BTreeMap::new();
    for task in tasks {
        let mut results = Vec::new();
        for r in 0..repeats.max(1) {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(r as u64);
            let mut o = opts.clone();
            o.run_id = Some(format!("bench-{}-{}", task.id, c.seed));
            results.push(run_task(scenario.clone(), bundle, task, &c, &o)?.result);
        }
        by_level
            .entry(task.difficulty)
            .or_default()
            .extend(results.iter().cloned());
        all.extend(results.iter().cloned());
        rows.push(BenchRow {
            task_id: task.id.clone(),
            difficulty: task.difficulty,
            metrics: compute_metrics(&results)?,
            results,
        });
    }
    let by_difficulty = by_level
        .into_iter()
        .map(|(d, rs)| compute_metrics(&rs).map(|m| (d, m)))
        .collect::<Result<_, _>>()?;
    Ok(BenchReport {
        rows,
        by_difficulty,
        overall: compute_metrics(&all)?,
    })
}
