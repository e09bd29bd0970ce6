//! Task learning, action-flow trees, plan retrieval and reflective
//! execution.

mod execute;
mod learn;
mod summary;
mod tree;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use execute::{
    execute_plan, ExecContext, ExecLimits, ExecOutcome, ExecutionResult, DEFAULT_MAX_REPLANS,
    MAX_STEPS,
};
pub use learn::{learn_task, LearnContext, DEFAULT_LEARN_BUDGET};
pub use summary::{summarize_software, GraphTaskGenerator, SoftwareSummary, TaskGenerator};
pub use tree::{retrieve_plan, ActionFlowTree, Annotation, Trajectory, TrajectoryStep, TreeNode};

use crate::env::{Action, ActionKind, EnvError, Observation};
use crate::graph::{ActionDescriptor, GraphError, StateId, TransitionEdge};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("cannot summarize an empty graph")]
    EmptyGraph,
    #[error("trajectory starts at {found}, tree root is {root}")]
    RootMismatch { root: StateId, found: StateId },
    #[error("trajectory step {step} is not an edge of the state graph")]
    Disconnected { step: usize },
    #[error("no execution results to aggregate")]
    NoResults,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanOrigin {
    Retrieved,
    GraphPath,
    Replanned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub from: StateId,
    pub action: ActionDescriptor,
    pub expected: StateId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub start: StateId,
    pub goal_state: StateId,
    pub steps: Vec<PlanStep>,
    pub origin: PlanOrigin,
}

impl Plan {
    pub fn from_edges(
        start: StateId,
        goal_state: StateId,
        edges: &[TransitionEdge],
        origin: PlanOrigin,
    ) -> Self {
        Self {
            start,
            goal_state,
            steps: edges
                .iter()
                .map(|e| PlanStep {
                    from: e.from,
                    action: e.action.clone(),
                    expected: e.to,
                })
                .collect(),
            origin,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// One line per step, for the risk judge and for humans.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = write!(out, "{}. {}", i + 1, describe_action(&step.action));
        }
        out
    }
}

/// Short human-readable form of an action.
pub fn describe_action(a: &ActionDescriptor) -> String {
    let verb = match a.action_kind {
        ActionKind::Click => "click",
        ActionKind::TypeText => "type into",
        ActionKind::Toggle => "toggle",
    };
    let mut s = format!("{verb} \"{}\"", a.element_caption);
    if let Some(label) = &a.label {
        let _ = write!(s, " [{label}]");
    }
    if let Some(p) = &a.payload {
        let _ = write!(s, " with \"{p}\"");
    }
    s
}

/// Finds the element in `obs` that `action` refers to: same kind, icon
/// similarity at or above `theta_icon`. A matching label wins, then higher
/// similarity, then the lowest index.
pub fn ground_action(
    obs: &Observation,
    action: &ActionDescriptor,
    theta_icon: f64,
) -> Option<Action> {
    let mut best: Option<(bool, f64, usize)> = None;
    for view in &obs.element_views {
        if view.kind != action.action_kind {
            continue;
        }
        let sim = view
            .icon
            .similarity(&action.icon)
            .unwrap_or(f64::NEG_INFINITY);
        if sim < theta_icon {
            continue;
        }
        let label_match = view.label == action.label;
        let better = match best {
            None => true,
            Some((bl, bs, _)) => (label_match, sim) > (bl, bs),
        };
        if better {
            best = Some((label_match, sim, view.index));
        }
    }
    let (_, _, index) = best?;
    let view = &obs.element_views[index];
    Some(match view.kind {
        ActionKind::TypeText => Action::type_text(
            index,
            action
                .payload
                .clone()
                .or_else(|| view.input_hint.clone())
                .unwrap_or_default(),
        ),
        _ => Action::click(index),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub runs: usize,
    pub successes: usize,
    /// Percentage in [0, 100].
    pub success_rate: f64,
    pub avg_steps: f64,
}

/// Success rate and mean steps, where every failure counts as
/// [`MAX_STEPS`] steps.
pub fn compute_metrics(results: &[ExecutionResult]) -> Result<Metrics, PlanError> {
    if results.is_empty() {
        return Err(PlanError::NoResults);
    }
    let successes = results.iter().filter(|r| r.success).count();
    let total_steps: usize = results
        .iter()
        .map(|r| if r.success { r.steps } else { MAX_STEPS })
        .sum();
    Ok(Metrics {
        runs: results.len(),
        successes,
        success_rate: 100.0 * successes as f64 / results.len() as f64,
        avg_steps: total_steps as f64 / results.len() as f64,
    })
}
