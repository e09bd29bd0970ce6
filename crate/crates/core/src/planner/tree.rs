use serde::{Deserialize, Serialize};

use super::{Plan, PlanError, PlanOrigin, PlanStep};
use crate::embedding::TextEncoder;
use crate::graph::{ActionDescriptor, StateGraph, StateId, TransitionEdge};
use crate::task::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: StateId,
    pub action: ActionDescriptor,
}

/// A successful action sequence from the home state. Step `i` acts in
/// `steps[i].state` and leads to `steps[i + 1].state`, the last one to
/// `goal_state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub goal_text: String,
    pub start: StateId,
    pub steps: Vec<TrajectoryStep>,
    pub goal_state: StateId,
}

impl Trajectory {
    pub fn from_edges(task: &Task, start: StateId, edges: &[TransitionEdge]) -> Self {
        Self {
            task_id: task.id.clone(),
            goal_text: task.goal_text.clone(),
            start,
            steps: edges
                .iter()
                .map(|e| TrajectoryStep {
                    state: e.from,
                    action: e.action.clone(),
                })
                .collect(),
            goal_state: edges.last().map_or(start, |e| e.to),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State reached after step `i`.
    pub fn state_after(&self, i: usize) -> StateId {
        self.steps.get(i + 1).map_or(self.goal_state, |s| s.state)
    }

    pub fn edges(&self) -> Vec<TransitionEdge> {
        (0..self.steps.len())
            .map(|i| TransitionEdge {
                from: self.steps[i].state,
                to: self.state_after(i),
                action: self.steps[i].action.clone(),
            })
            .collect()
    }

    /// Index of the first step that is not an edge of `graph`.
    pub fn first_gap(&self, graph: &StateGraph) -> Option<usize> {
        self.edges().iter().position(|e| !graph.edges().contains(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub task_id: String,
    pub goal_text: String,
    pub goal_state: StateId,
    /// Insertion order, used to break ties toward the earliest learned.
    pub learned_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub state: StateId,
    pub parent: Option<usize>,
    pub action: Option<ActionDescriptor>,
    pub children: Vec<usize>,
    pub annotations: Vec<Annotation>,
}

/// Prefix-merged successful trajectories rooted at the home state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionFlowTree {
    pub root: StateId,
    nodes: Vec<TreeNode>,
    next_seq: u64,
}

impl ActionFlowTree {
    pub fn new(root: StateId) -> Self {
        Self {
            root,
            nodes: vec![TreeNode {
                state: root,
                parent: None,
                action: None,
                children: Vec::new(),
                annotations: Vec::new(),
            }],
            next_seq: 0,
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn depth(&self, mut node: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[node].parent {
            d += 1;
            node = p;
        }
        d
    }

    /// Edges from the root down to `node`.
    pub fn path_to(&self, node: usize) -> Vec<TransitionEdge> {
        let mut path = Vec::new();
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            path.push(TransitionEdge {
                from: self.nodes[p].state,
                to: self.nodes[cur].state,
                action: self.nodes[cur]
                    .action
                    .clone()
                    .expect("non-root nodes have an action"),
            });
            cur = p;
        }
        path.reverse();
        path
    }

    /// All tree edges, parent to child.
    pub fn edges(&self) -> Vec<TransitionEdge> {
        self.nodes
            .iter()
            .filter_map(|n| {
                let p = n.parent?;
                Some(TransitionEdge {
                    from: self.nodes[p].state,
                    to: n.state,
                    action: n.action.clone()?,
                })
            })
            .collect()
    }

    /// Annotated nodes with their annotations, in node order.
    pub fn annotated(&self) -> impl Iterator<Item = (usize, &Annotation)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.annotations.iter().map(move |a| (i, a)))
    }

    /// Recorded trajectory ending at annotated node `node`.
    pub fn trajectory(&self, node: usize, annotation: &Annotation) -> Trajectory {
        let edges = self.path_to(node);
        Trajectory {
            task_id: annotation.task_id.clone(),
            goal_text: annotation.goal_text.clone(),
            start: self.root,
            steps: edges
                .iter()
                .map(|e| TrajectoryStep {
                    state: e.from,
                    action: e.action.clone(),
                })
                .collect(),
            goal_state: self.nodes[node].state,
        }
    }

    /// Merges `t` into the tree, sharing existing prefixes, and annotates
    /// its last node. Inserting the same trajectory twice changes nothing.
    pub fn insert(&mut self, t: &Trajectory) -> Result<usize, PlanError> {
        let first = t.steps.first().map_or(t.start, |s| s.state);
        if first != self.root || t.start != self.root {
            return Err(PlanError::RootMismatch {
                root: self.root,
                found: first,
            });
        }
        let mut cur = 0;
        for (i, step) in t.steps.iter().enumerate() {
            let to = t.state_after(i);
            let existing = self.nodes[cur].children.iter().copied().find(|&c| {
                self.nodes[c].state == to && self.nodes[c].action.as_ref() == Some(&step.action)
            });
            cur = match existing {
                Some(c) => c,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(TreeNode {
                        state: to,
                        parent: Some(cur),
                        action: Some(step.action.clone()),
                        children: Vec::new(),
                        annotations: Vec::new(),
                    });
                    self.nodes[cur].children.push(id);
                    id
                }
            };
        }
        let node = &mut self.nodes[cur];
        if !node.annotations.iter().any(|a| a.task_id == t.task_id) {
            node.annotations.push(Annotation {
                task_id: t.task_id.clone(),
                goal_text: t.goal_text.clone(),
                goal_state: t.goal_state,
                learned_seq: self.next_seq,
            });
            self.next_seq += 1;
        }
        Ok(cur)
    }

    /// Inserts after checking every step is an edge of `graph`.
    pub fn insert_checked(
        &mut self,
        t: &Trajectory,
        graph: &StateGraph,
    ) -> Result<usize, PlanError> {
        if let Some(step) = t.first_gap(graph) {
            return Err(PlanError::Disconnected { step });
        }
        self.insert(t)
    }
}

/// Shortest stored trajectory of the task whose text best matches
/// `task.goal_text` (similarity at least `theta_task`). All stored tasks
/// tied at the best score are considered; ties in length go to the
/// earliest learned.
pub fn retrieve_plan(
    tree: &ActionFlowTree,
    task: &Task,
    encoder: &TextEncoder,
    theta_task: f64,
) -> Option<Plan> {
    let query = encoder.encode(&task.goal_text)?;
    let scored: Vec<(usize, &Annotation, f64)> = tree
        .annotated()
        .map(|(node, a)| {
            let sim = encoder
                .encode(&a.goal_text)
                .and_then(|e| e.similarity(&query).ok())
                .unwrap_or(f64::NEG_INFINITY);
            (node, a, sim)
        })
        .collect();
    let best = scored.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    if best < theta_task {
        return None;
    }
    let (node, _, _) = scored
        .into_iter()
        .filter(|s| best - s.2 <= 1e-12)
        .min_by_key(|(node, a, _)| (tree.depth(*node), a.learned_seq))?;
    let edges = tree.path_to(node);
    Some(Plan {
        start: tree.root,
        goal_state: tree.nodes()[node].state,
        steps: edges
            .iter()
            .map(|e| PlanStep {
                from: e.from,
                action: e.action.clone(),
                expected: e.to,
            })
            .collect(),
        origin: PlanOrigin::Retrieved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Embedding, DEFAULT_DIM};
    use crate::env::ActionKind;
    use crate::task::{Difficulty, Goal};

    fn act(tag: u64) -> ActionDescriptor {
        ActionDescriptor {
            element_caption: format!("a{tag}"),
            icon: Embedding::seeded("icon", tag, DEFAULT_DIM),
            action_kind: ActionKind::Click,
            label: None,
            payload: None,
        }
    }

    fn traj(task: &str, text: &str, hops: &[(u32, u64)], goal: u32) -> Trajectory {
        Trajectory {
            task_id: task.into(),
            goal_text: text.into(),
            start: StateId(0),
            steps: hops
                .iter()
                .map(|&(s, a)| TrajectoryStep {
                    state: StateId(s),
                    action: act(a),
                })
                .collect(),
            goal_state: StateId(goal),
        }
    }

    fn task(id: &str, text: &str) -> Task {
        Task {
            id: id.into(),
            goal_text: text.into(),
            goal: Goal::State(StateId(0)),
            difficulty: Difficulty::Easy,
        }
    }

    #[test]
    fn shared_prefix_is_merged_and_insert_is_idempotent() {
        let mut tree = ActionFlowTree::new(StateId(0));
        let a = traj("t1", "open rack", &[(0, 1), (1, 2), (2, 3)], 3);
        let b = traj("t2", "open server", &[(0, 1), (1, 2), (2, 4)], 4);
        tree.insert(&a).unwrap();
        tree.insert(&b).unwrap();
        assert_eq!(tree.nodes().len(), 1 + 2 + 2);
        let before = tree.clone();
        tree.insert(&a).unwrap();
        assert_eq!(tree, before);
    }

    #[test]
    fn wrong_root_rejected() {
        let mut tree = ActionFlowTree::new(StateId(0));
        let t = traj("t", "x", &[(5, 1)], 6);
        assert!(matches!(
            tree.insert(&t),
            Err(PlanError::RootMismatch { .. })
        ));
    }

    #[test]
    fn retrieval_picks_shortest_route() {
        let mut tree = ActionFlowTree::new(StateId(0));
        tree.insert(&traj(
            "t",
            "open the alarm list",
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)],
            5,
        ))
        .unwrap();
        tree.insert(&traj(
            "t",
            "open the alarm list",
            &[(0, 6), (6, 7), (7, 8)],
            5,
        ))
        .unwrap();
        tree.insert(&traj("u", "check rack power", &[(0, 9)], 9))
            .unwrap();
        let enc = TextEncoder::default();
        let plan = retrieve_plan(&tree, &task("t", "open the alarm list"), &enc, 0.8).unwrap();
        assert_eq!(plan.len(), 3);
        assert_eq!(plan.origin, PlanOrigin::Retrieved);
        assert!(retrieve_plan(&tree, &task("z", "zzqx"), &enc, 0.8).is_none());
    }

    #[test]
    fn empty_trajectory_annotates_root() {
        let mut tree = ActionFlowTree::new(StateId(0));
        assert_eq!(tree.insert(&traj("home", "go home", &[], 0)).unwrap(), 0);
        let plan = retrieve_plan(
            &tree,
            &task("home", "go home"),
            &TextEncoder::default(),
            0.8,
        )
        .unwrap();
        assert!(plan.is_empty());
    }
}
