//! Deterministic simulated GUI environment with snapshot and rollback.

pub mod generate;
mod scenario;
mod sim;

pub use scenario::{
    load_scenario, parse_scenario, ActionKind, ElementDef, ElementFile, GoalSpec, Hazard,
    IconSource, Mutation, Scenario, ScenarioError, ScenarioFile, ScreenDef, ScreenFile, ScreenId,
    TaskFile, TransitionSpec, Value, VarCondition, FORMAT_VERSION, PAYLOAD_PLACEHOLDER,
};
pub use sim::{
    env_equals, Action, ElementView, EnvError, EnvState, Environment, GroundTruth,
    InteractionRecord, NoiseConfig, Observation, SnapshotHandle,
};
