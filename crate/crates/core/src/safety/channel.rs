use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::mpsc::{self, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;

/// Pending confirmations resolve to reject after this long.
pub const DEFAULT_CONFIRMATION_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationRequest {
    pub id: String,
    pub caption: String,
    pub icon: Embedding,
    pub state_description: String,
    pub proposed_action: String,
    pub reason: String,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("confirmation timed out")]
    Timeout,
    #[error("confirmation channel closed")]
    Closed,
    #[error("confirmation channel I/O: {0}")]
    Io(String),
}

/// Asks an operator to approve or reject a hazardous action. Exactly one
/// answer per request.
pub trait ConfirmationChannel: Send + Sync {
    fn name(&self) -> &str;
    fn request(&self, request: &ConfirmationRequest) -> Result<Decision, ChannelError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AutoApprove;

impl ConfirmationChannel for AutoApprove {
    fn name(&self) -> &str {
        "auto-approve"
    }
    fn request(&self, _: &ConfirmationRequest) -> Result<Decision, ChannelError> {
        Ok(Decision::Approve)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AutoReject;

impl ConfirmationChannel for AutoReject {
    fn name(&self) -> &str {
        "auto-reject"
    }
    fn request(&self, _: &ConfirmationRequest) -> Result<Decision, ChannelError> {
        Ok(Decision::Reject)
    }
}

/// Prompts on a terminal. Anything but `y`/`yes` rejects; end of input is
/// an error (and therefore a rejection at the gate).
pub struct InteractiveTerminal {
    io: Mutex<(Box<dyn BufRead + Send>, Box<dyn Write + Send>)>,
}

impl InteractiveTerminal {
    pub fn stdio() -> Self {
        Self::new(
            Box::new(std::io::BufReader::new(std::io::stdin())),
            Box::new(std::io::stderr()),
        )
    }

    pub fn new(input: Box<dyn BufRead + Send>, output: Box<dyn Write + Send>) -> Self {
        Self {
            io: Mutex::new((input, output)),
        }
    }
}

impl ConfirmationChannel for InteractiveTerminal {
    fn name(&self) -> &str {
        "interactive"
    }

    fn request(&self, r: &ConfirmationRequest) -> Result<Decision, ChannelError> {
        let mut guard = self.io.lock().map_err(|_| ChannelError::Closed)?;
        let (input, output) = &mut *guard;
        let io = |e: std::io::Error| ChannelError::Io(e.to_string());
        writeln!(output, "\n[confirmation {}] {}", r.id, r.reason).map_err(io)?;
        writeln!(output, "  screen : {}", r.state_description).map_err(io)?;
        writeln!(output, "  element: {}", r.caption).map_err(io)?;
        write!(output, "  action : {}\napprove? [y/N] ", r.proposed_action).map_err(io)?;
        output.flush().map_err(io)?;
        let mut line = String::new();
        if input.read_line(&mut line).map_err(io)? == 0 {
            return Err(ChannelError::Closed);
        }
        Ok(match line.trim().to_ascii_lowercase().as_str() {
            "y" | "yes" => Decision::Approve,
            _ => Decision::Reject,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("no such confirmation")]
    NotFound,
    #[error("confirmation already resolved")]
    Conflict,
}

#[derive(Default)]
struct QueueState {
    pending: BTreeMap<String, (ConfirmationRequest, SyncSender<Decision>)>,
    resolved: BTreeMap<String, Decision>,
}

/// Confirmation requests awaiting an answer from outside the agent loop.
/// Each request is resolved exactly once: by an operator, or by timeout.
#[derive(Default)]
pub struct ConfirmationQueue {
    state: Mutex<QueueState>,
}

impl ConfirmationQueue {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn pending(&self) -> Vec<ConfirmationRequest> {
        let state = self.state.lock().expect("queue lock");
        let mut out: Vec<_> = state.pending.values().map(|(r, _)| r.clone()).collect();
        out.sort_by_key(|r| r.created_at_ms);
        out
    }

    pub fn resolution(&self, id: &str) -> Option<Decision> {
        self.state
            .lock()
            .expect("queue lock")
            .resolved
            .get(id)
            .copied()
    }

    pub fn resolve(&self, id: &str, decision: Decision) -> Result<(), ResolveError> {
        let mut state = self.state.lock().expect("queue lock");
        if state.resolved.contains_key(id) {
            return Err(ResolveError::Conflict);
        }
        let (_, tx) = state.pending.remove(id).ok_or(ResolveError::NotFound)?;
        state.resolved.insert(id.to_string(), decision);
        // Capacity 1 and a single send per request: never blocks.
        let _ = tx.try_send(decision);
        Ok(())
    }

    fn submit(&self, request: &ConfirmationRequest) -> mpsc::Receiver<Decision> {
        let (tx, rx) = mpsc::sync_channel(1);
        self.state
            .lock()
            .expect("queue lock")
            .pending
            .insert(request.id.clone(), (request.clone(), tx));
        rx
    }

    /// Resolves `id` as rejected if still pending. Returns the decision that
    /// won.
    fn expire(&self, id: &str) -> Decision {
        let mut state = self.state.lock().expect("queue lock");
        if let Some(d) = state.resolved.get(id) {
            return *d;
        }
        state.pending.remove(id);
        state.resolved.insert(id.to_string(), Decision::Reject);
        Decision::Reject
    }
}

/// Hands requests to a [`ConfirmationQueue`] and blocks until they are
/// resolved or time out (timeout rejects).
#[derive(Clone)]
pub struct ServiceQueueChannel {
    queue: Arc<ConfirmationQueue>,
    timeout: Duration,
}

impl ServiceQueueChannel {
    pub fn new(queue: Arc<ConfirmationQueue>, timeout: Duration) -> Self {
        Self { queue, timeout }
    }
}

impl ConfirmationChannel for ServiceQueueChannel {
    fn name(&self) -> &str {
        "service-queue"
    }

    fn request(&self, request: &ConfirmationRequest) -> Result<Decision, ChannelError> {
        let rx = self.queue.submit(request);
        match rx.recv_timeout(self.timeout) {
            Ok(d) => Ok(d),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                match self.queue.expire(&request.id) {
                    Decision::Reject => Err(ChannelError::Timeout),
                    // Resolved between the timeout and the expiry check.
                    Decision::Approve => Ok(Decision::Approve),
                }
            }
        }
    }
}
