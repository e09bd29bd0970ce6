use serde::{Deserialize, Serialize};

use crate::env::{EnvState, GoalSpec};
use crate::graph::StateId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    /// Predicate over the environment state (fixture tasks).
    Predicate(GoalSpec),
    /// Reaching a known graph state.
    State(StateId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub goal_text: String,
    pub goal: Goal,
    pub difficulty: Difficulty,
}

impl Task {
    /// Evaluates the goal given the environment state and the state the
    /// agent currently localizes to.
    pub fn is_satisfied(&self, env: &EnvState, localized: Option<StateId>) -> bool {
        match &self.goal {
            Goal::Predicate(spec) => spec.is_satisfied(env),
            Goal::State(id) => localized == Some(*id),
        }
    }
}
