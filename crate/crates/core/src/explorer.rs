//! Systematic exploration with snapshot rollback.
//!
//! Every visited state is snapshotted; each of its elements is acted on
//! once, captioned, recorded as a transition, and rolled back. The frontier
//! discipline (queue or stack) is a pluggable [`Frontier`].

use std::collections::{HashSet, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvError, Environment, NoiseConfig, Observation, SnapshotHandle};
use crate::events::{EventKind, Recorder};
use crate::graph::{
    raw_description, ActionDescriptor, Discovery, GraphError, StateGraph, StateId, TransitionEdge,
};
use crate::perception::{caption_element, FunctionSummarizer, KnowledgeBase, Provenance};
use crate::registry::{frontiers, BuildContext, RegistryError};
use crate::safety::{SafetyGate, SafetyVerdict};

/// Default cap on discovered states.
pub const DEFAULT_MAX_STATES: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("invalid exploration config: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct ExplorationConfig {
    /// Registered frontier name, `bfs` or `dfs` out of the box.
    pub strategy: String,
    pub max_states: Option<usize>,
    /// States at this depth are discovered but not expanded.
    pub max_depth: Option<usize>,
    pub describe: fn(&Observation) -> String,
    pub noise: NoiseConfig,
    pub run_id: String,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            strategy: "bfs".into(),
            max_states: Some(DEFAULT_MAX_STATES),
            max_depth: None,
            describe: raw_description,
            noise: NoiseConfig::none(),
            run_id: "explore".into(),
            cancel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrontierEntry {
    pub state: StateId,
    pub snapshot: SnapshotHandle,
    pub depth: usize,
}

/// Order in which discovered states are expanded.
pub trait Frontier: Send {
    fn name(&self) -> &str;

    /// Successors of one expanded state that have not been expanded yet, in
    /// canonical element order (duplicates possible).
    fn schedule(&mut self, batch: Vec<FrontierEntry>);

    /// Next state to expand. The explorer skips states already expanded.
    fn next(&mut self) -> Option<FrontierEntry>;
}

/// FIFO queue; a state is queued at most once.
#[derive(Debug, Default)]
pub struct BfsFrontier {
    queue: VecDeque<FrontierEntry>,
    queued: HashSet<StateId>,
}

impl Frontier for BfsFrontier {
    fn name(&self) -> &str {
        "bfs"
    }

    fn schedule(&mut self, batch: Vec<FrontierEntry>) {
        for entry in batch {
            if self.queued.insert(entry.state) {
                self.queue.push_back(entry);
            }
        }
    }

    fn next(&mut self) -> Option<FrontierEntry> {
        self.queue.pop_front()
    }
}

/// LIFO stack. A batch is pushed in reverse so the first element's
/// successor is expanded first, giving a preorder in element order.
#[derive(Debug, Default)]
pub struct DfsFrontier {
    stack: Vec<FrontierEntry>,
}

impl Frontier for DfsFrontier {
    fn name(&self) -> &str {
        "dfs"
    }

    fn schedule(&mut self, batch: Vec<FrontierEntry>) {
        self.stack.extend(batch.into_iter().rev());
    }

    fn next(&mut self) -> Option<FrontierEntry> {
        self.stack.pop()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Exhausted,
    MaxStates,
    MaxDepth,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedElement {
    pub state_id: StateId,
    pub element_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub run_id: String,
    pub strategy: String,
    pub root: StateId,
    pub states_discovered: usize,
    pub transitions_recorded: usize,
    pub captions_learned: usize,
    pub interactions: usize,
    pub elements_skipped_blacklist: Vec<SkippedElement>,
    pub snapshots_taken: u64,
    pub snapshots_restored: u64,
    pub terminated_by: Termination,
    /// States in the order they were expanded.
    pub visit_order: Vec<StateId>,
}

/// Explores with the frontier registered under `config.strategy`.
pub fn explore(
    env: &mut Environment,
    config: &ExplorationConfig,
    kb: &mut KnowledgeBase,
    graph: &mut StateGraph,
    gate: &SafetyGate,
    summarizer: &dyn FunctionSummarizer,
    rec: &mut Recorder,
) -> Result<ExplorationReport, ExploreError> {
    let frontier = frontiers().build(&config.strategy, &BuildContext::default())?;
    explore_with(env, config, frontier, kb, graph, gate, summarizer, rec)
}

#[allow(clippy::too_many_arguments)]
pub fn explore_with(
    env: &mut Environment,
    config: &ExplorationConfig,
    mut frontier: Box<dyn Frontier>,
    kb: &mut KnowledgeBase,
    graph: &mut StateGraph,
    gate: &SafetyGate,
    summarizer: &dyn FunctionSummarizer,
    rec: &mut Recorder,
) -> Result<ExplorationReport, ExploreError> {
    if config.max_states == Some(0) {
        return Err(ExploreError::Config("max_states must be at least 1".into()));
    }
    let describe = config.describe;
    let previous_noise = env.noise();
    env.set_noise(config.noise);
    let taken_before = env.snapshots_taken();
    let restored_before = env.restores();
    let kb_before = kb.len();

    let entry = env.snapshot();
    let root_obs = env.observe();
    let root_desc = describe(&root_obs);
    let root_fp = graph.fingerprint(&root_obs, &root_desc)?;
    let root = graph.upsert_state(
        root_fp,
        &root_desc,
        Some(entry.clone()),
        discovery(config, env),
    )?;
    graph.set_snapshot(root.id, entry.clone());

    let mut report = ExplorationReport {
        run_id: config.run_id.clone(),
        strategy: frontier.name().to_string(),
        root: root.id,
        states_discovered: usize::from(root.created),
        transitions_recorded: 0,
        captions_learned: 0,
        interactions: 0,
        elements_skipped_blacklist: Vec::new(),
        snapshots_taken: 0,
        snapshots_restored: 0,
        terminated_by: Termination::Exhausted,
        visit_order: Vec::new(),
    };
    let cap_reached =
        |r: &ExplorationReport| config.max_states.is_some_and(|m| r.states_discovered >= m);
    let mut visited: HashSet<StateId> = HashSet::new();
    let mut depth_cut = false;
    let mut stopped: Option<Termination> = cap_reached(&report).then_some(Termination::MaxStates);

    frontier.schedule(vec![FrontierEntry {
        state: root.id,
        snapshot: entry.clone(),
        depth: 0,
    }]);

    'outer: while stopped.is_none() {
        let Some(current) = frontier.next() else {
            break;
        };
        if !visited.insert(current.state) {
            continue;
        }
        report.visit_order.push(current.state);
        env.restore(&current.snapshot)?;
        let at_state = env.state().clone();
        let before = env.observe();
        let description = graph
            .node(current.state)
            .map(|n| n.description.clone())
            .unwrap_or_default();
        rec.emit(EventKind::StateVisited {
            state: current.state,
            description: description.clone(),
            depth: current.depth,
        });

        let mut batch = Vec::new();
        for view in &before.element_views {
            if config
                .cancel
                .as_ref()
                .is_some_and(|c| c.load(Ordering::SeqCst))
            {
                env.restore(&current.snapshot)?;
                stopped = Some(Termination::Cancelled);
                break 'outer;
            }
            if let Some(hit) = gate.check_blacklist(&view.icon) {
                report.elements_skipped_blacklist.push(SkippedElement {
                    state_id: current.state,
                    element_index: view.index,
                });
                rec.emit(EventKind::Verdict {
                    state: Some(current.state),
                    element_index: view.index,
                    verdict: SafetyVerdict::Blacklisted {
                        reason: hit.reason.clone(),
                    },
                });
                continue;
            }
            rec.emit(EventKind::Verdict {
                state: Some(current.state),
                element_index: view.index,
                verdict: SafetyVerdict::Allowed,
            });

            let action = Action::for_view(view);
            let after = env.act(&action)?;
            report.interactions += 1;
            let provenance = Provenance {
                state_fingerprint_id: current.state,
                action_index: view.index,
                discovered_run_id: config.run_id.clone(),
            };
            let caption =
                caption_element(kb, summarizer, &before, view, &action, &after, provenance);

            let after_desc = describe(&after);
            let fp = graph.fingerprint(&after, &after_desc)?;
            let up = graph.upsert_state(fp, &after_desc, None, discovery(config, env))?;
            if up.created {
                report.states_discovered += 1;
            }
            let needs_snapshot = graph
                .node(up.id)
                .is_none_or(|n| n.snapshot.as_ref().is_none_or(|h| !env.owns(h)));
            if needs_snapshot {
                let handle = env.snapshot();
                graph.set_snapshot(up.id, handle);
            }
            let edge = TransitionEdge {
                from: current.state,
                to: up.id,
                action: ActionDescriptor {
                    element_caption: caption.caption.clone(),
                    icon: view.icon.clone(),
                    action_kind: view.kind,
                    label: view.label.clone(),
                    payload: action.payload.clone(),
                },
            };
            if graph.add_transition(edge)? {
                report.transitions_recorded += 1;
            }

            env.restore(&current.snapshot)?;
            rec.emit(EventKind::ActionExecuted {
                state: Some(current.state),
                element_index: view.index,
                caption: caption.caption,
                payload: action.payload,
                caption_source: Some(caption.source),
                reached: Some(up.id),
                rollback_ok: Some(env.state() == &at_state),
            });

            if !visited.contains(&up.id) {
                let depth = current.depth + 1;
                if config.max_depth.is_some_and(|d| depth >= d) {
                    depth_cut = true;
                } else {
                    let snapshot = graph
                        .node(up.id)
                        .and_then(|n| n.snapshot.clone())
                        .expect("snapshot set above");
                    batch.push(FrontierEntry {
                        state: up.id,
                        snapshot,
                        depth,
                    });
                }
            }
            if cap_reached(&report) {
                stopped = Some(Termination::MaxStates);
                break;
            }
        }
        frontier.schedule(batch);
    }

    env.restore(&entry)?;
    env.set_noise(previous_noise);
    report.terminated_by = match stopped {
        Some(t) => t,
        None if depth_cut => Termination::MaxDepth,
        None => Termination::Exhausted,
    };
    report.captions_learned = kb.len() - kb_before;
    report.snapshots_taken = env.snapshots_taken() - taken_before;
    report.snapshots_restored = env.restores() - restored_before;
    Ok(report)
}

fn discovery(config: &ExplorationConfig, env: &Environment) -> Discovery {
    Discovery {
        run_id: config.run_id.clone(),
        step: env.state().step_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::parse_scenario;
    use crate::perception::ScriptedOracleSummarizer;

    /// A -> {B, C, D}, B -> E.
    const STAR: &str = r#"
format_version = 1
id = "star"
initial_screen = "a"

[icons]
b = 1
c = 2
d = 3
e = 4

[[screens]]
id = "a"
description = "alpha hub"
visual_seed = 1
elements = [
  { id = "ab", icon = "b", caption = "to bravo", goto = "b" },
  { id = "ac", icon = "c", caption = "to charlie", goto = "c" },
  { id = "ad", icon = "d", caption = "to delta", goto = "d" },
]

[[screens]]
id = "b"
description = "bravo page"
visual_seed = 2
elements = [{ id = "be", icon = "e", caption = "to echo", goto = "e" }]

[[screens]]
id = "c"
description = "charlie page"
visual_seed = 3

[[screens]]
id = "d"
description = "delta page"
visual_seed = 4

[[screens]]
id = "e"
description = "echo page"
visual_seed = 5
"#;

    fn run(
        strategy: &str,
        max_depth: Option<usize>,
    ) -> (ExplorationReport, StateGraph, Environment) {
        let scenario = Arc::new(parse_scenario(STAR).unwrap());
        let mut env = Environment::new(scenario.clone());
        let mut kb = KnowledgeBase::new(0.9);
        let mut graph = StateGraph::new(16, 0.5, 0.9);
        let summarizer = ScriptedOracleSummarizer::new(env.ground_truth());
        let config = ExplorationConfig {
            strategy: strategy.into(),
            max_depth,
            ..Default::default()
        };
        let mut rec = Recorder::new("t");
        let report = explore(
            &mut env,
            &config,
            &mut kb,
            &mut graph,
            &SafetyGate::permissive(),
            &summarizer,
            &mut rec,
        )
        .unwrap();
        (report, graph, env)
    }

    fn names(graph: &StateGraph, order: &[StateId]) -> Vec<String> {
        order
            .iter()
            .map(|id| {
                graph
                    .node(*id)
                    .unwrap()
                    .description
                    .split(' ')
                    .next()
                    .unwrap()
                    .to_string()
            })
            .collect()
    }

    #[test]
    fn bfs_visits_echo_last() {
        let (report, graph, _) = run("bfs", None);
        assert_eq!(
            names(&graph, &report.visit_order),
            ["alpha", "bravo", "charlie", "delta", "echo"]
        );
        assert_eq!(report.states_discovered, 5);
        assert_eq!(report.snapshots_taken, 5);
        assert_eq!(report.terminated_by, Termination::Exhausted);
    }

    #[test]
    fn dfs_visits_echo_after_bravo() {
        let (report, graph, _) = run("dfs", None);
        assert_eq!(
            names(&graph, &report.visit_order),
            ["alpha", "bravo", "echo", "charlie", "delta"]
        );
    }

    #[test]
    fn depth_cap_discovers_without_expanding() {
        let (report, _, _) = run("dfs", Some(1));
        assert_eq!(report.states_discovered, 4);
        assert_eq!(report.visit_order.len(), 1);
        assert_eq!(report.terminated_by, Termination::MaxDepth);
    }

    #[test]
    fn unknown_strategy_is_an_error() {
        let scenario = Arc::new(parse_scenario(STAR).unwrap());
        let mut env = Environment::new(scenario);
        let config = ExplorationConfig {
            strategy: "astar".into(),
            ..Default::default()
        };
        let err = explore(
            &mut env,
            &config,
            &mut KnowledgeBase::new(0.9),
            &mut StateGraph::new(16, 0.5, 0.9),
            &SafetyGate::permissive(),
            &crate::perception::DegradedSummarizer,
            &mut Recorder::new("t"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("astar"), "{err}");
    }

    #[test]
    fn cancellation_restores_entry_state() {
        let scenario = Arc::new(parse_scenario(STAR).unwrap());
        let mut env = Environment::new(scenario);
        let start = env.state().clone();
        let cancel = Arc::new(AtomicBool::new(true));
        let config = ExplorationConfig {
            cancel: Some(cancel),
            ..Default::default()
        };
        let report = explore(
            &mut env,
            &config,
            &mut KnowledgeBase::new(0.9),
            &mut StateGraph::new(16, 0.5, 0.9),
            &SafetyGate::permissive(),
            &crate::perception::DegradedSummarizer,
            &mut Recorder::new("t"),
        )
        .unwrap();
        assert_eq!(report.terminated_by, Termination::Cancelled);
        assert_eq!(env.state(), &start);
    }
}
