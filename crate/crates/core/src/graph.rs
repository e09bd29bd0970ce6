//! Fingerprinted interface states and the directed transition graph.
//!
//! A state is identified by a blend of a semantic embedding (its textual
//! description) and a visual embedding (the screen visual), never by any
//! hidden identifier. The graph deduplicates states by combined similarity
//! and supports localization and shortest-path planning.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingError, TextEncoder};
use crate::env::{ActionKind, Observation, SnapshotHandle};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("state description is empty")]
    EmptyDescription,
    #[error("fingerprints use different blend weights ({0} vs {1})")]
    AlphaMismatch(f64, f64),
    #[error("unknown state {0}")]
    UnknownState(StateId),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub u32);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFingerprint {
    pub semantic: Embedding,
    pub visual: Embedding,
    pub alpha: f64,
}

/// Blended semantic/visual fingerprint of an observation.
pub fn fingerprint(
    obs: &Observation,
    description: &str,
    alpha: f64,
    encoder: &TextEncoder,
) -> Result<StateFingerprint, GraphError> {
    let semantic = encoder
        .encode(description)
        .ok_or(GraphError::EmptyDescription)?;
    let visual = Embedding::normalized(obs.screen_visual.clone())?;
    Ok(StateFingerprint {
        semantic,
        visual,
        alpha,
    })
}

/// `alpha * cos(semantic) + (1 - alpha) * cos(visual)`.
pub fn combined_similarity(a: &StateFingerprint, b: &StateFingerprint) -> Result<f64, GraphError> {
    if a.alpha != b.alpha {
        return Err(GraphError::AlphaMismatch(a.alpha, b.alpha));
    }
    let sem = a.semantic.similarity(&b.semantic)?;
    let vis = a.visual.similarity(&b.visual)?;
    Ok(a.alpha * sem + (1.0 - a.alpha) * vis)
}

/// What an edge does, in agent-visible terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDescriptor {
    pub element_caption: String,
    pub icon: Embedding,
    pub action_kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEdge {
    pub from: StateId,
    pub to: StateId,
    pub action: ActionDescriptor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discovery {
    pub run_id: String,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNode {
    pub id: StateId,
    pub fingerprint: StateFingerprint,
    pub description: String,
    /// Only meaningful inside the run that took it.
    pub snapshot: Option<SnapshotHandle>,
    pub discovered_at: Discovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "state")]
pub enum Localization {
    Known(StateId),
    Unknown,
}

impl Localization {
    pub fn state(self) -> Option<StateId> {
        match self {
            Localization::Known(id) => Some(id),
            Localization::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Upsert {
    pub id: StateId,
    pub created: bool,
}

/// Hook producing a textual description of an observation.
pub type Describe<'a> = &'a dyn Fn(&Observation) -> String;

/// Description hook that uses the observation's extracted text as-is.
pub fn raw_description(obs: &Observation) -> String {
    obs.raw_description.clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGraph {
    pub dim: usize,
    pub alpha: f64,
    pub theta_state: f64,
    nodes: Vec<StateNode>,
    edges: Vec<TransitionEdge>,
}

impl StateGraph {
    pub fn new(dim: usize, alpha: f64, theta_state: f64) -> Self {
        Self {
            dim,
            alpha,
            theta_state,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn encoder(&self) -> TextEncoder {
        TextEncoder::new(self.dim)
    }

    pub fn nodes(&self) -> &[StateNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[TransitionEdge] {
        &self.edges
    }

    pub fn node(&self, id: StateId) -> Option<&StateNode> {
        self.nodes.get(id.0 as usize)
    }

    pub fn contains(&self, id: StateId) -> bool {
        (id.0 as usize) < self.nodes.len()
    }

    pub fn set_snapshot(&mut self, id: StateId, handle: SnapshotHandle) {
        if let Some(n) = self.nodes.get_mut(id.0 as usize) {
            n.snapshot = Some(handle);
        }
    }

    pub fn fingerprint(
        &self,
        obs: &Observation,
        description: &str,
    ) -> Result<StateFingerprint, GraphError> {
        fingerprint(obs, description, self.alpha, &self.encoder())
    }

    /// Best-matching node at or above `theta_state`; ties go to the earliest
    /// node.
    pub fn match_state(&self, fp: &StateFingerprint) -> Result<Option<StateId>, GraphError> {
        let mut best: Option<(StateId, f64)> = None;
        for node in &self.nodes {
            let sim = combined_similarity(&node.fingerprint, fp)?;
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((node.id, sim));
            }
        }
        Ok(best
            .filter(|&(_, sim)| sim >= self.theta_state)
            .map(|(id, _)| id))
    }

    pub fn upsert_state(
        &mut self,
        fp: StateFingerprint,
        description: &str,
        snapshot: Option<SnapshotHandle>,
        discovered_at: Discovery,
    ) -> Result<Upsert, GraphError> {
        if let Some(id) = self.match_state(&fp)? {
            return Ok(Upsert { id, created: false });
        }
        let id = StateId(self.nodes.len() as u32);
        self.nodes.push(StateNode {
            id,
            fingerprint: fp,
            description: description.to_string(),
            snapshot,
            discovered_at,
        });
        Ok(Upsert { id, created: true })
    }

    /// Appends `edge` unless an identical `(from, action, to)` exists.
    /// Returns whether the edge was new.
    pub fn add_transition(&mut self, edge: TransitionEdge) -> Result<bool, GraphError> {
        for id in [edge.from, edge.to] {
            if !self.contains(id) {
                return Err(GraphError::UnknownState(id));
            }
        }
        if self.edges.contains(&edge) {
            return Ok(false);
        }
        self.edges.push(edge);
        Ok(true)
    }

    pub fn localize(&self, obs: &Observation, describe: Describe<'_>) -> Localization {
        let description = describe(obs);
        match self.fingerprint(obs, &description) {
            Ok(fp) => match self.match_state(&fp) {
                Ok(Some(id)) => Localization::Known(id),
                _ => Localization::Unknown,
            },
            Err(_) => Localization::Unknown,
        }
    }

    pub fn edges_from(&self, id: StateId) -> impl Iterator<Item = &TransitionEdge> {
        self.edges.iter().filter(move |e| e.from == id)
    }

    /// Shortest directed path by edge count; ties follow edge insertion
    /// order.
    pub fn plan_path(
        &self,
        from: StateId,
        to: StateId,
    ) -> Result<Option<Vec<TransitionEdge>>, GraphError> {
        self.plan_path_avoiding(from, to, &|_| false)
    }

    /// [`Self::plan_path`] ignoring every edge for which `avoid` is true.
    pub fn plan_path_avoiding(
        &self,
        from: StateId,
        to: StateId,
        avoid: &dyn Fn(&TransitionEdge) -> bool,
    ) -> Result<Option<Vec<TransitionEdge>>, GraphError> {
        for id in [from, to] {
            if !self.contains(id) {
                return Err(GraphError::UnknownState(id));
            }
        }
        if from == to {
            return Ok(Some(Vec::new()));
        }
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            if !avoid(e) {
                adjacency[e.from.0 as usize].push(i);
            }
        }
        let mut parent: Vec<Option<usize>> = vec![None; self.nodes.len()];
        let mut seen = vec![false; self.nodes.len()];
        seen[from.0 as usize] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(s) = queue.pop_front() {
            for &ei in &adjacency[s.0 as usize] {
                let t = self.edges[ei].to;
                if seen[t.0 as usize] {
                    continue;
                }
                seen[t.0 as usize] = true;
                parent[t.0 as usize] = Some(ei);
                if t == to {
                    let mut path = Vec::new();
                    let mut cur = t;
                    while cur != from {
                        let ei = parent[cur.0 as usize].expect("reached nodes have a parent");
                        path.push(self.edges[ei].clone());
                        cur = self.edges[ei].from;
                    }
                    path.reverse();
                    return Ok(Some(path));
                }
                queue.push_back(t);
            }
        }
        Ok(None)
    }

    /// Nodes reachable from `from`, in BFS order, with their distances.
    pub fn distances_from(&self, from: StateId) -> Vec<(StateId, usize)> {
        let mut out = Vec::new();
        if !self.contains(from) {
            return out;
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[from.0 as usize] = true;
        let mut queue = VecDeque::from([(from, 0usize)]);
        while let Some((s, d)) = queue.pop_front() {
            out.push((s, d));
            for e in self.edges_from(s) {
                if !seen[e.to.0 as usize] {
                    seen[e.to.0 as usize] = true;
                    queue.push_back((e.to, d + 1));
                }
            }
        }
        out
    }
}
