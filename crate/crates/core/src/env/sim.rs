use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scenario::{
    ActionKind, Hazard, Mutation, Scenario, ScreenDef, ScreenId, Value, PAYLOAD_PLACEHOLDER,
};
use crate::embedding::{fnv1a, l2_norm, Embedding};

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid action: element index {index} out of range ({count} elements)")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("invalid action: element {index} is type_text and needs a payload")]
    MissingPayload { index: usize },
    #[error("invalid action: element {index} does not take a payload")]
    UnexpectedPayload { index: usize },
    #[error("unknown snapshot handle {0}")]
    UnknownSnapshot(u64),
}

/// Full internal state of the simulated application.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub current_screen: ScreenId,
    pub world_vars: BTreeMap<String, Value>,
    pub step_count: u64,
    pub rng_cursor: u64,
}

/// Equality over the full internal state.
pub fn env_equals(a: &EnvState, b: &EnvState) -> bool {
    a == b
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub seed: u64,
    pub epsilon: f64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self::default()
    }
}

/// What the agent can see of one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementView {
    pub index: usize,
    pub bounding_slot: u32,
    pub icon: Embedding,
    pub label: Option<String>,
    pub kind: ActionKind,
    /// Placeholder text of an input field, used as the probe payload.
    pub input_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub screen_visual: Vec<f64>,
    pub element_views: Vec<ElementView>,
    pub raw_description: String,
    /// Provenance for the privileged oracle only; never serialized.
    #[serde(skip)]
    pub(crate) origin: Option<ScreenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub element_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl Action {
    pub fn click(element_index: usize) -> Self {
        Self {
            element_index,
            payload: None,
        }
    }

    pub fn type_text(element_index: usize, payload: impl Into<String>) -> Self {
        Self {
            element_index,
            payload: Some(payload.into()),
        }
    }

    /// Action on `view`, supplying its input hint as payload if it is a
    /// text field.
    pub fn for_view(view: &ElementView) -> Self {
        match view.kind {
            ActionKind::TypeText => Self {
                element_index: view.index,
                payload: Some(view.input_hint.clone().unwrap_or_default()),
            },
            _ => Self::click(view.index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnapshotHandle {
    pub id: u64,
    pub created_at_step: u64,
    /// Environment instance that produced the handle; not persisted, so a
    /// reloaded handle never restores in another run.
    #[serde(skip)]
    owner: u64,
}

/// Audit entry for every executed action. Not affected by rollback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub seq: u64,
    pub screen: ScreenId,
    pub element_id: String,
    pub element_index: usize,
    pub hazard: Hazard,
    pub payload: Option<String>,
}

/// Privileged view of hidden scenario data, used by the scripted
/// summarizer and by tests. Agent logic must not depend on it.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    scenario: Arc<Scenario>,
}

impl GroundTruth {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        Self { scenario }
    }

    pub fn screen_of<'a>(&self, obs: &'a Observation) -> Option<&'a ScreenId> {
        obs.origin.as_ref()
    }

    pub fn caption(&self, obs: &Observation, element_index: usize) -> Option<&str> {
        let screen = self.scenario.screen(obs.origin.as_ref()?)?;
        screen
            .elements
            .get(element_index)
            .map(|e| e.ground_truth_caption.as_str())
    }

    pub fn hazard(&self, obs: &Observation, element_index: usize) -> Option<Hazard> {
        let screen = self.scenario.screen(obs.origin.as_ref()?)?;
        screen.elements.get(element_index).map(|e| e.hazard)
    }
}

/// One simulated application instance. Single writer.
#[derive(Debug)]
pub struct Environment {
    scenario: Arc<Scenario>,
    state: EnvState,
    noise: NoiseConfig,
    instance: u64,
    snapshots: HashMap<u64, EnvState>,
    next_snapshot: u64,
    audit: Vec<InteractionRecord>,
    next_seq: u64,
    snapshots_taken: u64,
    restores: u64,
}

impl Environment {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        let state = Self::initial_state(&scenario);
        Self {
            scenario,
            state,
            noise: NoiseConfig::none(),
            instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
            snapshots: HashMap::new(),
            next_snapshot: 1,
            audit: Vec::new(),
            next_seq: 0,
            snapshots_taken: 0,
            restores: 0,
        }
    }

    pub fn with_noise(mut self, noise: NoiseConfig) -> Self {
        self.noise = noise;
        self
    }

    fn initial_state(scenario: &Scenario) -> EnvState {
        EnvState {
            current_screen: scenario.initial_screen.clone(),
            world_vars: scenario.world_vars.clone(),
            step_count: 0,
            rng_cursor: 0,
        }
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth::new(self.scenario.clone())
    }

    pub fn noise(&self) -> NoiseConfig {
        self.noise
    }

    pub fn set_noise(&mut self, noise: NoiseConfig) {
        self.noise = noise;
    }

    /// Returns to the scenario's initial state. Snapshots and the audit log
    /// survive.
    pub fn reset(&mut self) -> &EnvState {
        self.state = Self::initial_state(&self.scenario);
        &self.state
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    fn current_screen(&self) -> &ScreenDef {
        self.scenario
            .screen(&self.state.current_screen)
            .expect("current screen is validated")
    }

    pub fn observe(&self) -> Observation {
        self.observe_with(self.noise)
    }

    /// Observation of the current state. Pure: depends only on the state
    /// and `noise`, never mutates anything.
    pub fn observe_with(&self, noise: NoiseConfig) -> Observation {
        let screen = self.current_screen();
        let dim = self.scenario.dim;
        let clean = Embedding::seeded("visual", screen.visual_seed, dim);
        let mut visual: Vec<f64> = clean.as_slice().to_vec();
        if noise.epsilon > 0.0 {
            let key = fnv1a(screen.id.0.as_bytes())
                ^ noise.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
                ^ self.state.rng_cursor.rotate_left(32);
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = l2_norm(&dir);
            if norm > 0.0 {
                // Shrink slightly so rounding never pushes the norm past epsilon.
                let scale = noise.epsilon * (1.0 - 1e-9) / norm;
                for (v, d) in visual.iter_mut().zip(&dir) {
                    *v += d * scale;
                }
            }
        }
        let element_views = screen
            .elements
            .iter()
            .enumerate()
            .map(|(index, el)| ElementView {
                index,
                bounding_slot: index as u32,
                icon: el.icon_vector.clone(),
                label: el.label.clone(),
                kind: el.action_kind,
                input_hint: el.probe_payload.clone(),
            })
            .collect();
        Observation {
            screen_visual: visual,
            element_views,
            raw_description: screen.description.clone(),
            origin: Some(screen.id.clone()),
        }
    }

    pub fn act(&mut self, action: &Action) -> Result<Observation, EnvError> {
        let screen = self.current_screen();
        let count = screen.elements.len();
        let el = screen
            .elements
            .get(action.element_index)
            .ok_or(EnvError::IndexOutOfRange {
                index: action.element_index,
                count,
            })?;
        match (el.action_kind, &action.payload) {
            (ActionKind::TypeText, None) => {
                return Err(EnvError::MissingPayload {
                    index: action.element_index,
                })
            }
            (ActionKind::Click | ActionKind::Toggle, Some(_)) => {
                return Err(EnvError::UnexpectedPayload {
                    index: action.element_index,
                })
            }
            _ => {}
        }
        let effect = el.effect.clone();
        let record = InteractionRecord {
            seq: self.next_seq,
            screen: screen.id.clone(),
            element_id: el.id.clone(),
            element_index: action.element_index,
            hazard: el.hazard,
            payload: action.payload.clone(),
        };
        for m in &effect.mutate {
            apply_mutation(&mut self.state.world_vars, m, action.payload.as_deref());
        }
        if let Some(target) = effect.goto {
            self.state.current_screen = target;
        }
        self.state.step_count += 1;
        self.state.rng_cursor += 1;
        self.next_seq += 1;
        self.audit.push(record);
        Ok(self.observe())
    }

    pub fn snapshot(&mut self) -> SnapshotHandle {
        let id = self.next_snapshot;
        self.next_snapshot += 1;
        self.snapshots.insert(id, self.state.clone());
        self.snapshots_taken += 1;
        SnapshotHandle {
            id,
            created_at_step: self.state.step_count,
            owner: self.instance,
        }
    }

    pub fn restore(&mut self, handle: &SnapshotHandle) -> Result<(), EnvError> {
        if handle.owner != self.instance {
            return Err(EnvError::UnknownSnapshot(handle.id));
        }
        let saved = self
            .snapshots
            .get(&handle.id)
            .ok_or(EnvError::UnknownSnapshot(handle.id))?;
        self.state = saved.clone();
        self.restores += 1;
        Ok(())
    }

    /// True if `handle` was produced by this instance and is still held.
    pub fn owns(&self, handle: &SnapshotHandle) -> bool {
        handle.owner == self.instance && self.snapshots.contains_key(&handle.id)
    }

    pub fn interaction_log(&self) -> &[InteractionRecord] {
        &self.audit
    }

    pub fn snapshots_taken(&self) -> u64 {
        self.snapshots_taken
    }

    pub fn restores(&self) -> u64 {
        self.restores
    }
}

fn apply_mutation(vars: &mut BTreeMap<String, Value>, m: &Mutation, payload: Option<&str>) {
    let subst = |v: &str| -> String {
        if v == PAYLOAD_PLACEHOLDER {
            payload.unwrap_or_default().to_string()
        } else {
            v.to_string()
        }
    };
    match m {
        Mutation::Set { var, value } => {
            let value = match value {
                Value::Text(t) => Value::Text(subst(t)),
                other => other.clone(),
            };
            vars.insert(var.clone(), value);
        }
        Mutation::Add { var, delta } => {
            let entry = vars.entry(var.clone()).or_insert(Value::Int(0));
            if let Value::Int(n) = entry {
                *n = n.saturating_add(*delta);
            }
        }
        Mutation::Push { var, value } => {
            let entry = vars.entry(var.clone()).or_insert(Value::List(Vec::new()));
            if let Value::List(items) = entry {
                items.push(subst(value));
            }
        }
        Mutation::Remove { var, value } => {
            if let Some(Value::List(items)) = vars.get_mut(var) {
                let target = subst(value);
                if let Some(pos) = items.iter().position(|i| *i == target) {
                    items.remove(pos);
                }
            }
        }
        Mutation::Pop { var } => {
            if let Some(Value::List(items)) = vars.get_mut(var) {
                items.pop();
            }
        }
        Mutation::Toggle { var } => {
            let entry = vars.entry(var.clone()).or_insert(Value::Bool(false));
            if let Value::Bool(b) = entry {
                *b = !*b;
            }
        }
    }
}
