use super::{ground_action, PlanError, Trajectory};
use crate::env::{Action, Environment, SnapshotHandle};
use crate::events::{EventKind, Recorder};
use crate::graph::{
    ActionDescriptor, Describe, Discovery, Localization, StateGraph, StateId, TransitionEdge,
};
use crate::perception::{caption_element, FunctionSummarizer, KnowledgeBase, Provenance};
use crate::safety::{SafetyGate, SafetyVerdict};
use crate::task::Task;

/// Default interaction budget for one task.
pub const DEFAULT_LEARN_BUDGET: usize = 400;

/// Everything task learning reads or extends.
pub struct LearnContext<'a> {
    pub graph: &'a mut StateGraph,
    pub kb: &'a mut KnowledgeBase,
    pub gate: &'a SafetyGate,
    pub summarizer: &'a dyn FunctionSummarizer,
    pub describe: Describe<'a>,
    pub home: StateId,
    /// Maximum number of env interactions spent on the search.
    pub budget: usize,
    /// Longest action suffix tried beyond known states.
    pub max_suffix: usize,
    pub run_id: String,
}

struct Search<'c, 'a> {
    ctx: &'c mut LearnContext<'a>,
    home_snapshot: SnapshotHandle,
    used: usize,
}

/// Finds and validates a goal-reaching trajectory from the home state.
///
/// Known graph states are tried first, nearest first. Then short action
/// suffixes from each known state are explored with rollback; anything new
/// is added to the graph. A candidate is accepted only after replaying it
/// from home. The environment is left at home either way.
pub fn learn_task(
    env: &mut Environment,
    task: &Task,
    ctx: &mut LearnContext<'_>,
    rec: &mut Recorder,
) -> Result<Option<Trajectory>, PlanError> {
    let home_snapshot = env.snapshot();
    let mut search = Search {
        ctx,
        home_snapshot,
        used: 0,
    };
    let found = search.run(env, task, rec);
    env.restore(&search.home_snapshot)?;
    found
}

impl Search<'_, '_> {
    fn exhausted(&self) -> bool {
        self.used >= self.ctx.budget
    }

    fn run(
        &mut self,
        env: &mut Environment,
        task: &Task,
        rec: &mut Recorder,
    ) -> Result<Option<Trajectory>, PlanError> {
        let home = self.ctx.home;
        if !self.ctx.graph.contains(home) {
            return Ok(None);
        }
        let known: Vec<StateId> = self
            .ctx
            .graph
            .distances_from(home)
            .into_iter()
            .map(|(s, _)| s)
            .collect();
        for &state in &known {
            if self.exhausted() {
                return Ok(None);
            }
            if !self.reach(env, state, rec)? {
                continue;
            }
            if task.is_satisfied(env.state(), Some(state)) {
                let path = self.ctx.graph.plan_path(home, state)?.unwrap_or_default();
                if let Some(t) = self.validate(env, task, &path, rec)? {
                    return Ok(Some(t));
                }
            }
        }
        for depth in 1..=self.ctx.max_suffix {
            let known: Vec<StateId> = self
                .ctx
                .graph
                .distances_from(home)
                .into_iter()
                .map(|(s, _)| s)
                .collect();
            for state in known {
                if self.exhausted() {
                    return Ok(None);
                }
                if !self.reach(env, state, rec)? {
                    continue;
                }
                let handle = self
                    .ctx
                    .graph
                    .node(state)
                    .and_then(|n| n.snapshot.clone())
                    .expect("reach sets a snapshot");
                let prefix = self.ctx.graph.plan_path(home, state)?.unwrap_or_default();
                if let Some(t) = self.suffixes(env, task, state, &handle, depth, prefix, rec)? {
                    return Ok(Some(t));
                }
            }
        }
        Ok(None)
    }

    /// Puts the env in `state`, by snapshot when one from this env exists,
    /// otherwise by navigating from home. Records a snapshot on success.
    fn reach(
        &mut self,
        env: &mut Environment,
        state: StateId,
        rec: &mut Recorder,
    ) -> Result<bool, PlanError> {
        if let Some(h) = self.ctx.graph.node(state).and_then(|n| n.snapshot.clone()) {
            if env.owns(&h) {
                env.restore(&h)?;
                return Ok(true);
            }
        }
        let Some(path) = self.ctx.graph.plan_path(self.ctx.home, state)? else {
            return Ok(false);
        };
        env.restore(&self.home_snapshot)?;
        if !self.follow(env, &path, rec)? {
            return Ok(false);
        }
        let h = env.snapshot();
        self.ctx.graph.set_snapshot(state, h);
        Ok(true)
    }

    /// Executes recorded edges, checking each lands where expected.
    fn follow(
        &mut self,
        env: &mut Environment,
        path: &[TransitionEdge],
        rec: &mut Recorder,
    ) -> Result<bool, PlanError> {
        for edge in path {
            let obs = env.observe();
            let Some(action) = ground_action(&obs, &edge.action, self.ctx.kb.theta_icon()) else {
                return Ok(false);
            };
            if !self.gate(
                edge.from,
                &obs.element_views[action.element_index].icon,
                action.element_index,
                rec,
            ) {
                return Ok(false);
            }
            let after = env.act(&action)?;
            self.used += 1;
            let reached = self.ctx.graph.localize(&after, self.ctx.describe);
            rec.emit(EventKind::ActionExecuted {
                state: Some(edge.from),
                element_index: action.element_index,
                caption: edge.action.element_caption.clone(),
                payload: action.payload.clone(),
                caption_source: None,
                reached: reached.state(),
                rollback_ok: None,
            });
            if reached != Localization::Known(edge.to) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn gate(
        &self,
        state: StateId,
        icon: &crate::embedding::Embedding,
        index: usize,
        rec: &mut Recorder,
    ) -> bool {
        let verdict = match self.ctx.gate.check_blacklist(icon) {
            Some(hit) => SafetyVerdict::Blacklisted {
                reason: hit.reason.clone(),
            },
            None => SafetyVerdict::Allowed,
        };
        let ok = verdict.permits();
        rec.emit(EventKind::Verdict {
            state: Some(state),
            element_index: index,
            verdict,
        });
        ok
    }

    /// Replays `path` from home and returns it as a trajectory if the goal
    /// holds at the end.
    fn validate(
        &mut self,
        env: &mut Environment,
        task: &Task,
        path: &[TransitionEdge],
        rec: &mut Recorder,
    ) -> Result<Option<Trajectory>, PlanError> {
        env.restore(&self.home_snapshot)?;
        if !self.follow(env, path, rec)? {
            return Ok(None);
        }
        let last = path.last().map_or(self.ctx.home, |e| e.to);
        Ok(task
            .is_satisfied(env.state(), Some(last))
            .then(|| Trajectory::from_edges(task, self.ctx.home, path)))
    }

    /// Tries every action sequence of exactly `depth` steps from `state`.
    #[allow(clippy::too_many_arguments)]
    fn suffixes(
        &mut self,
        env: &mut Environment,
        task: &Task,
        state: StateId,
        handle: &SnapshotHandle,
        depth: usize,
        prefix: Vec<TransitionEdge>,
        rec: &mut Recorder,
    ) -> Result<Option<Trajectory>, PlanError> {
        env.restore(handle)?;
        let before = env.observe();
        for view in &before.element_views {
            if self.exhausted() {
                return Ok(None);
            }
            if !self.gate(state, &view.icon, view.index, rec) {
                continue;
            }
            env.restore(handle)?;
            let action = Action::for_view(view);
            let after = env.act(&action)?;
            self.used += 1;
            let provenance = Provenance {
                state_fingerprint_id: state,
                action_index: view.index,
                discovered_run_id: self.ctx.run_id.clone(),
            };
            let caption = caption_element(
                self.ctx.kb,
                self.ctx.summarizer,
                &before,
                view,
                &action,
                &after,
                provenance,
            );
            let desc = (self.ctx.describe)(&after);
            let fp = self.ctx.graph.fingerprint(&after, &desc)?;
            let discovered_at = Discovery {
                run_id: self.ctx.run_id.clone(),
                step: env.state().step_count,
            };
            let up = self
                .ctx
                .graph
                .upsert_state(fp, &desc, None, discovered_at)?;
            let here = env.snapshot();
            if self
                .ctx
                .graph
                .node(up.id)
                .is_none_or(|n| n.snapshot.as_ref().is_none_or(|h| !env.owns(h)))
            {
                self.ctx.graph.set_snapshot(up.id, here.clone());
            }
            let edge = TransitionEdge {
                from: state,
                to: up.id,
                action: ActionDescriptor {
                    element_caption: caption.caption.clone(),
                    icon: view.icon.clone(),
                    action_kind: view.kind,
                    label: view.label.clone(),
                    payload: action.payload.clone(),
                },
            };
            self.ctx.graph.add_transition(edge.clone())?;
            rec.emit(EventKind::ActionExecuted {
                state: Some(state),
                element_index: view.index,
                caption: caption.caption,
                payload: action.payload.clone(),
                caption_source: Some(caption.source),
                reached: Some(up.id),
                rollback_ok: None,
            });
            let mut path = prefix.clone();
            path.push(edge);
            if depth == 1 {
                if task.is_satisfied(env.state(), Some(up.id)) {
                    if let Some(t) = self.validate(env, task, &path, rec)? {
                        return Ok(Some(t));
                    }
                }
            } else if let Some(t) = self.suffixes(env, task, up.id, &here, depth - 1, path, rec)? {
                return Ok(Some(t));
            }
        }
        Ok(None)
    }
}
