//! Exploration, planning and safety engine for GUI agents, driven against a
//! deterministic simulated environment with snapshot and rollback.

pub mod agent;
pub mod bundle;
pub mod embedding;
pub mod env;
pub mod events;
pub mod explorer;
pub mod graph;
pub mod perception;
pub mod planner;
pub mod registry;
pub mod safety;
pub mod task;
