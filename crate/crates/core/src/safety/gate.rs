use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::channel::{ConfirmationChannel, ConfirmationRequest, Decision};
use crate::embedding::{tokenize, Embedding};
use crate::env::{Hazard, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum SafetyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlacklistEntry {
    pub icon: Embedding,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardEntry {
    pub icon: Embedding,
    pub description: String,
}

/// Highest-similarity blacklist entry at or above `theta_black`.
pub fn check_element<'a>(
    blacklist: &'a [BlacklistEntry],
    icon: &Embedding,
    theta_black: f64,
) -> Option<&'a BlacklistEntry> {
    best_match(blacklist.iter().map(|e| (&e.icon, e)), icon, theta_black)
}

fn best_match<'a, T>(
    entries: impl Iterator<Item = (&'a Embedding, &'a T)>,
    icon: &Embedding,
    theta: f64,
) -> Option<&'a T> {
    let mut best: Option<(&T, f64)> = None;
    for (e, item) in entries {
        let sim = e.similarity(icon).unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((item, sim));
        }
    }
    best.filter(|&(_, s)| s >= theta).map(|(item, _)| item)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SafetyVerdict {
    Allowed,
    Blacklisted { reason: String },
    Approved { reason: String },
    RejectedByOperator { reason: String },
    BlockedByJudge { reason: String },
}

impl SafetyVerdict {
    /// Whether the action may be executed.
    pub fn permits(&self) -> bool {
        matches!(
            self,
            SafetyVerdict::Allowed | SafetyVerdict::Approved { .. }
        )
    }
}

/// What the agent is about to do.
#[derive(Debug, Clone)]
pub struct GateContext<'a> {
    pub icon: &'a Embedding,
    pub caption: &'a str,
    pub label: Option<&'a str>,
    pub state_description: &'a str,
    pub proposed_action: &'a str,
    /// Set after a plan-level warning: any action whose caption or label
    /// mentions one of these phrases needs confirmation.
    pub escalate_terms: Option<&'a [String]>,
}

#[derive(Debug)]
pub struct SafetyGate {
    pub blacklist: Vec<BlacklistEntry>,
    pub hazards: Vec<HazardEntry>,
    pub theta_black: f64,
    pub theta_hazard: f64,
    run_id: String,
    next_request: AtomicU64,
}

impl SafetyGate {
    pub fn new(
        blacklist: Vec<BlacklistEntry>,
        hazards: Vec<HazardEntry>,
        theta_black: f64,
        theta_hazard: f64,
    ) -> Self {
        Self {
            blacklist,
            hazards,
            theta_black,
            theta_hazard,
            run_id: "run".into(),
            next_request: AtomicU64::new(1),
        }
    }

    pub fn permissive() -> Self {
        Self::new(Vec::new(), Vec::new(), 0.9, 0.9)
    }

    /// Blacklist from the scenario's forbidden elements and hazard database
    /// from its sensitive ones.
    pub fn from_annotations(scenario: &Scenario, theta_black: f64, theta_hazard: f64) -> Self {
        let mut blacklist: Vec<BlacklistEntry> = Vec::new();
        let mut hazards: Vec<HazardEntry> = Vec::new();
        for (_, el) in scenario.elements() {
            match el.hazard {
                Hazard::Forbidden if !blacklist.iter().any(|b| b.icon == el.icon_vector) => {
                    blacklist.push(BlacklistEntry {
                        icon: el.icon_vector.clone(),
                        reason: el.ground_truth_caption.clone(),
                    });
                }
                Hazard::Sensitive if !hazards.iter().any(|h| h.icon == el.icon_vector) => {
                    hazards.push(HazardEntry {
                        icon: el.icon_vector.clone(),
                        description: el.ground_truth_caption.clone(),
                    });
                }
                _ => {}
            }
        }
        Self::new(blacklist, hazards, theta_black, theta_hazard)
    }

    pub fn set_run_id(&mut self, run_id: impl Into<String>) {
        self.run_id = run_id.into();
        self.next_request.store(1, Ordering::SeqCst);
    }

    pub fn check_blacklist(&self, icon: &Embedding) -> Option<&BlacklistEntry> {
        check_element(&self.blacklist, icon, self.theta_black)
    }

    pub fn check_hazard(&self, icon: &Embedding) -> Option<&HazardEntry> {
        best_match(
            self.hazards.iter().map(|e| (&e.icon, e)),
            icon,
            self.theta_hazard,
        )
    }

    /// Blacklist, then hazard confirmation. The channel is consulted only
    /// for non-blacklisted hazards; channel failure rejects.
    pub fn gate_action(
        &self,
        ctx: &GateContext<'_>,
        channel: &dyn ConfirmationChannel,
        notify: &mut dyn FnMut(&ConfirmationRequest),
    ) -> SafetyVerdict {
        if let Some(entry) = self.check_blacklist(ctx.icon) {
            return SafetyVerdict::Blacklisted {
                reason: entry.reason.clone(),
            };
        }
        let reason = match self.check_hazard(ctx.icon) {
            Some(h) => Some(format!("hazardous element: {}", h.description)),
            None => ctx
                .escalate_terms
                .and_then(|terms| mentioned_term(terms, ctx.caption, ctx.label))
                .map(|t| format!("plan flagged as risky; action mentions `{t}`")),
        };
        let Some(reason) = reason else {
            return SafetyVerdict::Allowed;
        };
        let n = self.next_request.fetch_add(1, Ordering::SeqCst);
        let request = ConfirmationRequest {
            id: format!("{}-c{n}", self.run_id),
            caption: ctx.caption.to_string(),
            icon: ctx.icon.clone(),
            state_description: ctx.state_description.to_string(),
            proposed_action: ctx.proposed_action.to_string(),
            reason: reason.clone(),
            created_at_ms: now_ms(),
        };
        notify(&request);
        match channel.request(&request) {
            Ok(Decision::Approve) => SafetyVerdict::Approved { reason },
            Ok(Decision::Reject) => SafetyVerdict::RejectedByOperator { reason },
            Err(e) => SafetyVerdict::RejectedByOperator {
                reason: format!("{reason}; confirmation failed: {e}"),
            },
        }
    }
}

fn mentioned_term<'a>(terms: &'a [String], caption: &str, label: Option<&str>) -> Option<&'a str> {
    let text = format!("{caption} {}", label.unwrap_or_default());
    let tokens = tokenize(&text);
    terms
        .iter()
        .find(|t| contains_phrase(&tokens, &tokenize(t)))
        .map(String::as_str)
}

pub(crate) fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn load_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, SafetyError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| SafetyError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| SafetyError::Io {
            path: display.clone(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(
            serde_json::from_str(trimmed).map_err(|e| SafetyError::Record {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// One JSON record per line: `{"icon": [...], "reason": "..."}`.
pub fn load_blacklist(path: &Path) -> Result<Vec<BlacklistEntry>, SafetyError> {
    load_records(path)
}

/// One JSON record per line: `{"icon": [...], "description": "..."}`.
pub fn load_hazard_db(path: &Path) -> Result<Vec<HazardEntry>, SafetyError> {
    load_records(path)
}

pub fn save_records<T: Serialize>(path: &Path, records: &[T]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(std::io::Error::other)?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}
