//! Structured run log shared by the explorer, the planner and the service
//! event stream.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::graph::{Localization, StateId};
use crate::perception::CaptionSource;
use crate::safety::{ConfirmationRequest, SafetyVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Explore,
    Learn,
    Execute,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    Failure,
    SafetyAbort,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    StateVisited {
        state: StateId,
        description: String,
        depth: usize,
    },
    Verdict {
        state: Option<StateId>,
        element_index: usize,
        #[serde(flatten)]
        verdict: SafetyVerdict,
    },
    ConfirmationRequested {
        request: ConfirmationRequest,
    },
    ActionExecuted {
        state: Option<StateId>,
        element_index: usize,
        caption: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        payload: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        caption_source: Option<CaptionSource>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reached: Option<StateId>,
        /// Set when the interaction was rolled back (exploration).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rollback_ok: Option<bool>,
    },
    Localized {
        expected: Option<StateId>,
        actual: Localization,
    },
    Replanned {
        from: StateId,
        target: StateId,
        steps: usize,
        reason: String,
    },
    RunFinished {
        phase: Phase,
        status: RunStatus,
        steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::StateVisited { .. } => "state_visited",
            EventKind::Verdict { .. } => "verdict",
            EventKind::ConfirmationRequested { .. } => "confirmation_requested",
            EventKind::ActionExecuted { .. } => "action_executed",
            EventKind::Localized { .. } => "localized",
            EventKind::Replanned { .. } => "replanned",
            EventKind::RunFinished { .. } => "run_finished",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub seq: u64,
    pub run_id: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Receives events as they are recorded.
pub trait EventSink: Send + Sync {
    fn publish(&self, event: &RunEvent);
}

/// Collects published events; handy for tests and the CLI.
#[derive(Debug, Default)]
pub struct MemorySink {
    events: Mutex<Vec<RunEvent>>,
}

impl MemorySink {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn events(&self) -> Vec<RunEvent> {
        self.events.lock().expect("sink lock").clone()
    }
}

impl EventSink for MemorySink {
    fn publish(&self, event: &RunEvent) {
        self.events.lock().expect("sink lock").push(event.clone());
    }
}

/// Append-only event log of one run, forwarding to any attached sinks.
#[derive(Clone)]
pub struct Recorder {
    run_id: String,
    next_seq: u64,
    events: Vec<RunEvent>,
    sinks: Vec<Arc<dyn EventSink>>,
}

impl std::fmt::Debug for Recorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recorder")
            .field("run_id", &self.run_id)
            .field("events", &self.events.len())
            .field("sinks", &self.sinks.len())
            .finish()
    }
}

impl Recorder {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            next_seq: 0,
            events: Vec::new(),
            sinks: Vec::new(),
        }
    }

    pub fn with_sinks(mut self, sinks: impl IntoIterator<Item = Arc<dyn EventSink>>) -> Self {
        self.sinks.extend(sinks);
        self
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn emit(&mut self, kind: EventKind) {
        let event = RunEvent {
            seq: self.next_seq,
            run_id: self.run_id.clone(),
            kind,
        };
        self.next_seq += 1;
        for sink in &self.sinks {
            sink.publish(&event);
        }
        self.events.push(event);
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<RunEvent> {
        self.events
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.kind.name() == name).count()
    }
}
