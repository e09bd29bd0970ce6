use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{describe_action, ground_action, Plan, PlanOrigin, PlanStep};
use crate::env::Environment;
use crate::events::{EventKind, Recorder};
use crate::graph::{ActionDescriptor, Describe, Localization, StateGraph, StateId, TransitionEdge};
use crate::perception::{caption_element, FunctionSummarizer, KnowledgeBase, Provenance};
use crate::safety::{ConfirmationChannel, GateContext, SafetyGate, SafetyVerdict};
use crate::task::Task;

/// Step cap per task; failures are reported with exactly this many steps.
pub const MAX_STEPS: usize = 20;
pub const DEFAULT_MAX_REPLANS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecLimits {
    pub max_steps: usize,
    pub max_replans: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            max_steps: MAX_STEPS,
            max_replans: DEFAULT_MAX_REPLANS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecOutcome {
    Success,
    Failed,
    NoPlan,
    SafetyAbort,
    JudgeBlocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub task_id: String,
    pub success: bool,
    pub steps: usize,
    pub replans: usize,
    pub outcome: ExecOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub safety_events: Vec<SafetyVerdict>,
    /// Localized states after each executed action.
    pub visited: Vec<Localization>,
}

impl ExecutionResult {
    /// A failure that never touched the environment.
    pub fn not_started(
        task_id: &str,
        outcome: ExecOutcome,
        reason: impl Into<String>,
        max_steps: usize,
    ) -> Self {
        Self {
            task_id: task_id.to_string(),
            success: false,
            steps: max_steps,
            replans: 0,
            outcome,
            reason: Some(reason.into()),
            safety_events: Vec::new(),
            visited: Vec::new(),
        }
    }
}

/// Knowledge and policy used while executing.
pub struct ExecContext<'a> {
    pub graph: &'a StateGraph,
    pub kb: &'a mut KnowledgeBase,
    pub summarizer: &'a dyn FunctionSummarizer,
    pub gate: &'a SafetyGate,
    pub channel: &'a dyn ConfirmationChannel,
    pub describe: Describe<'a>,
    pub limits: ExecLimits,
    /// Present after a plan-level warning from the risk judge.
    pub escalate_terms: Option<Vec<String>>,
}

/// Runs `plan` through the safety gate, localizing after every action and
/// replanning from the observed state when it differs from the expected
/// one.
pub fn execute_plan(
    env: &mut Environment,
    plan: &Plan,
    task: &Task,
    ctx: &mut ExecContext<'_>,
    rec: &mut Recorder,
) -> ExecutionResult {
    let limits = ctx.limits;
    let mut result = ExecutionResult {
        task_id: task.id.clone(),
        success: false,
        steps: 0,
        replans: 0,
        outcome: ExecOutcome::Failed,
        reason: None,
        safety_events: Vec::new(),
        visited: Vec::new(),
    };
    let fail = |mut r: ExecutionResult, outcome: ExecOutcome, reason: String| {
        r.success = false;
        r.steps = limits.max_steps;
        r.outcome = outcome;
        r.reason = Some(reason);
        r
    };

    let mut queue: VecDeque<PlanStep> = plan.steps.iter().cloned().collect();
    let mut current = plan.start;
    let mut avoided: Vec<(StateId, ActionDescriptor)> = Vec::new();

    loop {
        if task.is_satisfied(env.state(), Some(current)) {
            result.success = true;
            result.outcome = ExecOutcome::Success;
            return result;
        }
        if result.steps >= limits.max_steps {
            return fail(result, ExecOutcome::Failed, "step limit reached".into());
        }
        let Some(step) = queue.pop_front() else {
            if current != plan.goal_state {
                match replan(ctx.graph, current, plan.goal_state, &avoided) {
                    Some(steps) if result.replans < limits.max_replans => {
                        result.replans += 1;
                        emit_replan(
                            rec,
                            current,
                            plan.goal_state,
                            steps.len(),
                            "plan exhausted before goal state",
                        );
                        queue = steps.into();
                        continue;
                    }
                    _ => {}
                }
            }
            return fail(
                result,
                ExecOutcome::Failed,
                "plan exhausted without satisfying the goal".into(),
            );
        };

        let before = env.observe();
        let Some(action) = ground_action(&before, &step.action, ctx.kb.theta_icon()) else {
            avoided.push((current, step.action.clone()));
            if result.replans >= limits.max_replans {
                return fail(
                    result,
                    ExecOutcome::Failed,
                    "element not found and replan limit reached".into(),
                );
            }
            match resume(ctx.graph, current, &queue, plan.goal_state, &avoided) {
                Some(steps) => {
                    result.replans += 1;
                    emit_replan(
                        rec,
                        current,
                        plan.goal_state,
                        steps.len(),
                        "planned element not on screen",
                    );
                    queue = steps.into();
                    continue;
                }
                None => {
                    return fail(
                        result,
                        ExecOutcome::Failed,
                        "planned element not on screen".into(),
                    )
                }
            }
        };
        let view = before.element_views[action.element_index].clone();
        let caption = ctx
            .kb
            .lookup(&view.icon)
            .map(|(p, _)| p.caption.clone())
            .unwrap_or_else(|| step.action.element_caption.clone());
        let state_description = ctx
            .graph
            .node(current)
            .map(|n| n.description.clone())
            .unwrap_or_else(|| (ctx.describe)(&before));
        let proposed = describe_action(&ActionDescriptor {
            element_caption: caption.clone(),
            icon: view.icon.clone(),
            action_kind: view.kind,
            label: view.label.clone(),
            payload: action.payload.clone(),
        });
        let gate_ctx = GateContext {
            icon: &view.icon,
            caption: &caption,
            label: view.label.as_deref(),
            state_description: &state_description,
            proposed_action: &proposed,
            escalate_terms: ctx.escalate_terms.as_deref(),
        };
        let verdict = ctx.gate.gate_action(&gate_ctx, ctx.channel, &mut |req| {
            rec.emit(EventKind::ConfirmationRequested {
                request: req.clone(),
            });
        });
        rec.emit(EventKind::Verdict {
            state: Some(current),
            element_index: action.element_index,
            verdict: verdict.clone(),
        });
        result.safety_events.push(verdict.clone());

        match verdict {
            SafetyVerdict::RejectedByOperator { reason } => {
                return fail(
                    result,
                    ExecOutcome::SafetyAbort,
                    format!("rejected by operator: {reason}"),
                );
            }
            SafetyVerdict::Blacklisted { reason } | SafetyVerdict::BlockedByJudge { reason } => {
                result.steps += 1;
                avoided.push((current, step.action.clone()));
                if result.replans >= limits.max_replans {
                    return fail(
                        result,
                        ExecOutcome::Failed,
                        format!("blocked action ({reason}) and replan limit reached"),
                    );
                }
                match resume(ctx.graph, current, &queue, plan.goal_state, &avoided) {
                    Some(steps) => {
                        result.replans += 1;
                        emit_replan(
                            rec,
                            current,
                            plan.goal_state,
                            steps.len(),
                            &format!("blocked: {reason}"),
                        );
                        queue = steps.into();
                        continue;
                    }
                    None => {
                        return fail(
                            result,
                            ExecOutcome::Failed,
                            format!("blocked action ({reason}), no alternative route"),
                        )
                    }
                }
            }
            SafetyVerdict::Allowed | SafetyVerdict::Approved { .. } => {}
        }

        let after = match env.act(&action) {
            Ok(obs) => obs,
            Err(e) => return fail(result, ExecOutcome::Failed, e.to_string()),
        };
        result.steps += 1;
        let outcome = caption_element(
            ctx.kb,
            ctx.summarizer,
            &before,
            &view,
            &action,
            &after,
            Provenance {
                state_fingerprint_id: current,
                action_index: action.element_index,
                discovered_run_id: rec.run_id().to_string(),
            },
        );
        let loc = ctx.graph.localize(&after, ctx.describe);
        rec.emit(EventKind::ActionExecuted {
            state: Some(current),
            element_index: action.element_index,
            caption: outcome.caption,
            payload: action.payload.clone(),
            caption_source: Some(outcome.source),
            reached: loc.state(),
            rollback_ok: None,
        });
        rec.emit(EventKind::Localized {
            expected: Some(step.expected),
            actual: loc,
        });
        result.visited.push(loc);

        match loc {
            Localization::Known(id) if id == step.expected => current = id,
            Localization::Known(id) => {
                current = id;
                if task.is_satisfied(env.state(), Some(current)) {
                    continue;
                }
                if result.replans >= limits.max_replans {
                    return fail(
                        result,
                        ExecOutcome::Failed,
                        "unexpected state and replan limit reached".into(),
                    );
                }
                match resume(ctx.graph, current, &queue, plan.goal_state, &avoided) {
                    Some(steps) => {
                        result.replans += 1;
                        emit_replan(
                            rec,
                            current,
                            plan.goal_state,
                            steps.len(),
                            &format!("expected {} but localized {id}", step.expected),
                        );
                        queue = steps.into();
                    }
                    None => {
                        return fail(
                            result,
                            ExecOutcome::Failed,
                            format!("no route from {id} to {}", plan.goal_state),
                        )
                    }
                }
            }
            Localization::Unknown => {
                return fail(
                    result,
                    ExecOutcome::Failed,
                    "lost: current screen matches no known state".into(),
                );
            }
        }
    }
}

fn replan(
    graph: &StateGraph,
    from: StateId,
    to: StateId,
    avoided: &[(StateId, ActionDescriptor)],
) -> Option<Vec<PlanStep>> {
    let avoid = |e: &TransitionEdge| avoided.iter().any(|(s, a)| *s == e.from && *a == e.action);
    let edges = graph.plan_path_avoiding(from, to, &avoid).ok()??;
    Some(Plan::from_edges(from, to, &edges, PlanOrigin::Replanned).steps)
}

/// Shortest way from `current` back onto the remaining plan: a graph path to
/// the start of some remaining step, then the rest of the plan from there.
/// Self-loop steps (typing, toggling) carry the state effects a goal may
/// depend on, so the rejoin point never skips past one. Ties go to the
/// earliest rejoin point.
fn resume(
    graph: &StateGraph,
    current: StateId,
    remaining: &VecDeque<PlanStep>,
    goal: StateId,
    avoided: &[(StateId, ActionDescriptor)],
) -> Option<Vec<PlanStep>> {
    let last = remaining
        .iter()
        .position(|s| s.from == s.expected)
        .unwrap_or(remaining.len());
    let mut best: Option<Vec<PlanStep>> = None;
    for k in 0..=last {
        let target = remaining.get(k).map_or(goal, |s| s.from);
        let Some(mut steps) = replan(graph, current, target, avoided) else {
            continue;
        };
        steps.extend(remaining.iter().skip(k).cloned());
        if best.as_ref().is_none_or(|b| steps.len() < b.len()) {
            best = Some(steps);
        }
    }
    best
}

fn emit_replan(rec: &mut Recorder, from: StateId, target: StateId, steps: usize, reason: &str) {
    rec.emit(EventKind::Replanned {
        from,
        target,
        steps,
        reason: reason.to_string(),
    });
}
