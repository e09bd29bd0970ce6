use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::kb::UNKNOWN_CAPTION;
use crate::env::{Action, ElementView, GroundTruth, Observation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SummarizerError {
    #[error("ground truth unavailable for element {0}")]
    NoGroundTruth(usize),
    #[error("summarizer endpoint failed: {0}")]
    Endpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub caption: String,
    pub confidence: f64,
}

/// Infers what an element does from the observation before and after it
/// was acted on. Implementations return the same caption for the same
/// inputs.
pub trait FunctionSummarizer: Send + Sync {
    fn name(&self) -> &str;

    fn summarize(
        &self,
        before: &Observation,
        element: &ElementView,
        action: &Action,
        after: &Observation,
    ) -> Result<Summary, SummarizerError>;

    /// Calls made through an external service boundary.
    fn external_calls(&self) -> usize {
        0
    }
}

/// Reads the hidden ground-truth caption. Stands in for a strong
/// captioning model.
#[derive(Debug, Clone)]
pub struct ScriptedOracleSummarizer {
    truth: GroundTruth,
}

impl ScriptedOracleSummarizer {
    pub fn new(truth: GroundTruth) -> Self {
        Self { truth }
    }
}

impl FunctionSummarizer for ScriptedOracleSummarizer {
    fn name(&self) -> &str {
        "scripted"
    }

    fn summarize(
        &self,
        before: &Observation,
        element: &ElementView,
        _action: &Action,
        _after: &Observation,
    ) -> Result<Summary, SummarizerError> {
        self.truth
            .caption(before, element.index)
            .map(|c| Summary {
                caption: c.to_string(),
                confidence: 1.0,
            })
            .ok_or(SummarizerError::NoGroundTruth(element.index))
    }
}

/// Knows nothing; stands in for a compact model without learned knowledge.
#[derive(Debug, Clone, Copy, Default)]
pub struct DegradedSummarizer;

impl FunctionSummarizer for DegradedSummarizer {
    fn name(&self) -> &str {
        "degraded"
    }

    fn summarize(
        &self,
        _before: &Observation,
        _element: &ElementView,
        _action: &Action,
        _after: &Observation,
    ) -> Result<Summary, SummarizerError> {
        Ok(Summary {
            caption: UNKNOWN_CAPTION.to_string(),
            confidence: 0.0,
        })
    }
}

#[derive(Serialize)]
struct SummarizeRequest<'a> {
    before: &'a Observation,
    element: &'a ElementView,
    action: &'a Action,
    after: &'a Observation,
}

/// Posts the `(before, element, action, after)` triple as JSON to a model
/// endpoint and expects `{"caption": .., "confidence": ..}` back.
#[derive(Debug, Clone)]
pub struct ExternalSummarizer {
    endpoint: String,
    agent: ureq::Agent,
    calls: Arc<AtomicUsize>,
}

impl ExternalSummarizer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn call_counter(&self) -> Arc<AtomicUsize> {
        self.calls.clone()
    }
}

impl FunctionSummarizer for ExternalSummarizer {
    fn name(&self) -> &str {
        "external"
    }

    fn summarize(
        &self,
        before: &Observation,
        element: &ElementView,
        action: &Action,
        after: &Observation,
    ) -> Result<Summary, SummarizerError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let body = SummarizeRequest {
            before,
            element,
            action,
            after,
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| SummarizerError::Endpoint(e.to_string()))?;
        let mut summary: Summary = resp
            .body_mut()
            .read_json()
            .map_err(|e| SummarizerError::Endpoint(e.to_string()))?;
        summary.confidence = summary.confidence.clamp(0.0, 1.0);
        Ok(summary)
    }

    fn external_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}
