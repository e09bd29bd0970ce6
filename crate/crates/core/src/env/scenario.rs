//! Scenario documents: screens, elements, effects and tasks.
//!
//! Scenarios are TOML files (see `scenarios/FORMAT.md`). They are parsed
//! into [`ScenarioFile`], then resolved and validated into [`Scenario`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, DEFAULT_DIM};
use crate::task::{Difficulty, Goal, Task};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario validation failed ({invariant}): {detail}")]
    Validation {
        invariant: &'static str,
        detail: String,
    },
}

impl ScenarioError {
    fn invalid(invariant: &'static str, detail: impl Into<String>) -> Self {
        Self::Validation {
            invariant,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScreenId(pub String);

impl fmt::Display for ScreenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ScreenId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// A world variable value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Text(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    TypeText,
    Toggle,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Hazard {
    #[default]
    Safe,
    Sensitive,
    Forbidden,
}

/// Placeholder in mutation values that is replaced by the typed payload.
pub const PAYLOAD_PLACEHOLDER: &str = "$payload";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    Set { var: String, value: Value },
    Add { var: String, delta: i64 },
    Push { var: String, value: String },
    Remove { var: String, value: String },
    Pop { var: String },
    Toggle { var: String },
}

impl Mutation {
    pub fn var(&self) -> &str {
        match self {
            Mutation::Set { var, .. }
            | Mutation::Add { var, .. }
            | Mutation::Push { var, .. }
            | Mutation::Remove { var, .. }
            | Mutation::Pop { var }
            | Mutation::Toggle { var } => var,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransitionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goto: Option<ScreenId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mutate: Vec<Mutation>,
}

/// Condition on a single world variable. All present checks must hold.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VarCondition {
    pub var: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absent: Option<String>,
}

/// Conjunctive predicate over an environment state.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoalSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen: Option<ScreenId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vars: Vec<VarCondition>,
}

impl GoalSpec {
    pub fn is_satisfied(&self, state: &super::EnvState) -> bool {
        if let Some(screen) = &self.screen {
            if &state.current_screen != screen {
                return false;
            }
        }
        self.vars
            .iter()
            .all(|c| c.holds(state.world_vars.get(&c.var)))
    }
}

impl VarCondition {
    fn holds(&self, value: Option<&Value>) -> bool {
        if let Some(expected) = &self.equals {
            if value != Some(expected) {
                return false;
            }
        }
        let list = match value {
            Some(Value::List(items)) => Some(items),
            _ => None,
        };
        if let Some(n) = self.len {
            if list.map(Vec::len) != Some(n) {
                return false;
            }
        }
        if let Some(item) = &self.contains {
            if !list.is_some_and(|l| l.contains(item)) {
                return false;
            }
        }
        if let Some(item) = &self.absent {
            if list.is_some_and(|l| l.contains(item)) {
                return false;
            }
        }
        true
    }
}

/// Icon source in a scenario file: a seed for a generated unit vector, or
/// explicit components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IconSource {
    Seed(u64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementFile {
    pub id: String,
    pub icon: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "default_kind")]
    pub kind: ActionKind,
    #[serde(default)]
    pub hazard: Hazard,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goto: Option<ScreenId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mutate: Vec<Mutation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<String>,
}

fn default_kind() -> ActionKind {
    ActionKind::Click
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenFile {
    pub id: ScreenId,
    pub description: String,
    pub visual_seed: u64,
    #[serde(default)]
    pub elements: Vec<ElementFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub id: String,
    pub goal_text: String,
    pub difficulty: Difficulty,
    pub goal: GoalSpec,
}

impl From<&TaskFile> for Task {
    fn from(t: &TaskFile) -> Self {
        Task {
            id: t.id.clone(),
            goal_text: t.goal_text.clone(),
            goal: Goal::Predicate(t.goal.clone()),
            difficulty: t.difficulty,
        }
    }
}

/// The on-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub format_version: u32,
    pub id: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub initial_screen: ScreenId,
    #[serde(default)]
    pub world: BTreeMap<String, Value>,
    #[serde(default)]
    pub icons: BTreeMap<String, IconSource>,
    pub screens: Vec<ScreenFile>,
    #[serde(default)]
    pub tasks: Vec<TaskFile>,
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementDef {
    pub id: String,
    pub icon_name: String,
    pub icon_vector: Embedding,
    pub label: Option<String>,
    pub action_kind: ActionKind,
    pub hazard: Hazard,
    pub effect: TransitionSpec,
    /// Hidden from the agent; read only through the privileged oracle.
    pub ground_truth_caption: String,
    pub probe_payload: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenDef {
    pub id: ScreenId,
    pub description: String,
    pub elements: Vec<ElementDef>,
    pub visual_seed: u64,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub dim: usize,
    pub initial_screen: ScreenId,
    pub world_vars: BTreeMap<String, Value>,
    pub tasks: Vec<Task>,
    screens: Vec<ScreenDef>,
    index: HashMap<ScreenId, usize>,
}

impl Scenario {
    /// Screens in file order.
    pub fn screens(&self) -> &[ScreenDef] {
        &self.screens
    }

    pub fn screen(&self, id: &ScreenId) -> Option<&ScreenDef> {
        self.index.get(id).map(|&i| &self.screens[i])
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// `(screen, element)` pairs in canonical order.
    pub fn elements(&self) -> impl Iterator<Item = (&ScreenDef, &ElementDef)> {
        self.screens
            .iter()
            .flat_map(|s| s.elements.iter().map(move |e| (s, e)))
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        if file.format_version != FORMAT_VERSION {
            return Err(ScenarioError::invalid(
                "format_version",
                format!("unsupported format_version {}", file.format_version),
            ));
        }
        if file.dim == 0 {
            return Err(ScenarioError::invalid("dimension", "dim must be positive"));
        }
        let mut icons = HashMap::new();
        for (name, source) in &file.icons {
            let vector = match source {
                IconSource::Seed(seed) => Embedding::seeded("icon", *seed, file.dim),
                IconSource::Vector(values) => {
                    if values.len() != file.dim {
                        return Err(ScenarioError::invalid(
                            "icon dimension",
                            format!(
                                "icon `{name}` has {} components, expected {}",
                                values.len(),
                                file.dim
                            ),
                        ));
                    }
                    Embedding::new(values.clone()).map_err(|e| {
                        ScenarioError::invalid("icon unit norm", format!("icon `{name}`: {e}"))
                    })?
                }
            };
            icons.insert(name.clone(), vector);
        }

        let mut index = HashMap::new();
        for (i, screen) in file.screens.iter().enumerate() {
            if index.insert(screen.id.clone(), i).is_some() {
                return Err(ScenarioError::invalid(
                    "unique screen ids",
                    format!("duplicate screen `{}`", screen.id),
                ));
            }
        }
        if !index.contains_key(&file.initial_screen) {
            return Err(ScenarioError::invalid(
                "initial screen exists",
                format!("unknown screen `{}` as initial_screen", file.initial_screen),
            ));
        }

        let mut element_ids = HashSet::new();
        let mut screens = Vec::with_capacity(file.screens.len());
        for screen in &file.screens {
            if screen.description.trim().is_empty() {
                return Err(ScenarioError::invalid(
                    "screen description",
                    format!("screen `{}` has an empty description", screen.id),
                ));
            }
            let mut elements = Vec::with_capacity(screen.elements.len());
            for el in &screen.elements {
                if !element_ids.insert(el.id.clone()) {
                    return Err(ScenarioError::invalid(
                        "unique element ids",
                        format!("duplicate element `{}`", el.id),
                    ));
                }
                if let Some(target) = &el.goto {
                    if !index.contains_key(target) {
                        return Err(ScenarioError::invalid(
                            "transition targets exist",
                            format!("unknown screen `{target}` targeted by element `{}`", el.id),
                        ));
                    }
                }
                let icon_vector = icons.get(&el.icon).cloned().ok_or_else(|| {
                    ScenarioError::invalid(
                        "icon references",
                        format!("unknown icon `{}` on element `{}`", el.icon, el.id),
                    )
                })?;
                if el.kind == ActionKind::TypeText && el.probe.is_none() {
                    return Err(ScenarioError::invalid(
                        "type_text probe payload",
                        format!("type_text element `{}` declares no probe payload", el.id),
                    ));
                }
                if el.caption.trim().is_empty() {
                    return Err(ScenarioError::invalid(
                        "element caption",
                        format!("element `{}` has an empty caption", el.id),
                    ));
                }
                elements.push(ElementDef {
                    id: el.id.clone(),
                    icon_name: el.icon.clone(),
                    icon_vector,
                    label: el.label.clone(),
                    action_kind: el.kind,
                    hazard: el.hazard,
                    effect: TransitionSpec {
                        goto: el.goto.clone(),
                        mutate: el.mutate.clone(),
                    },
                    ground_truth_caption: el.caption.clone(),
                    probe_payload: el.probe.clone(),
                });
            }
            screens.push(ScreenDef {
                id: screen.id.clone(),
                description: screen.description.clone(),
                elements,
                visual_seed: screen.visual_seed,
            });
        }

        let mut task_ids = HashSet::new();
        for task in &file.tasks {
            if !task_ids.insert(task.id.clone()) {
                return Err(ScenarioError::invalid(
                    "unique task ids",
                    format!("duplicate task `{}`", task.id),
                ));
            }
            if let Some(target) = &task.goal.screen {
                if !index.contains_key(target) {
                    return Err(ScenarioError::invalid(
                        "task goals reference known screens",
                        format!("unknown screen `{target}` in goal of task `{}`", task.id),
                    ));
                }
            }
        }

        Ok(Self {
            id: file.id,
            dim: file.dim,
            initial_screen: file.initial_screen,
            world_vars: file.world,
            tasks: file.tasks.iter().map(Task::from).collect(),
            screens,
            index,
        })
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    Scenario::from_file(file)
}

/// Loads a scenario; a path without extension also tries `<path>.toml`.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let resolved = if path.exists() {
        path.to_path_buf()
    } else {
        path.with_extension("toml")
    };
    let text = std::fs::read_to_string(&resolved).map_err(|source| ScenarioError::Io {
        path: resolved.clone(),
        source,
    })?;
    parse_scenario(&text)
}
