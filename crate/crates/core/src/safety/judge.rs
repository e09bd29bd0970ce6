use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::gate::contains_phrase;
use crate::embedding::tokenize;
use crate::planner::Plan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeVerdict {
    Allow,
    Warn,
    Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assessment {
    pub verdict: JudgeVerdict,
    pub rationale: String,
}

/// Semantic risk assessment of an instruction and its plan.
pub trait RiskJudge: Send + Sync {
    fn name(&self) -> &str;

    fn assess(&self, goal_text: &str, plan_summary: &str) -> Assessment;

    /// Phrases that mark an individual action as sensitive once a plan has
    /// been flagged.
    fn sensitive_terms(&self) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskRule {
    pub phrase: String,
    pub severity: JudgeVerdict,
}

/// Keyword/severity table. The highest severity among matched phrases
/// wins; phrases match whole tokens, case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleJudge {
    pub rules: Vec<RiskRule>,
}

impl Default for RuleJudge {
    fn default() -> Self {
        use JudgeVerdict::{Block, Warn};
        let table: &[(&str, JudgeVerdict)] = &[
            ("delete", Warn),
            ("remove", Warn),
            ("reset", Warn),
            ("reboot", Warn),
            ("restart", Warn),
            ("decommission", Warn),
            ("shutdown", Block),
            ("shut down", Block),
            ("power off", Block),
            ("emergency", Block),
            ("factory reset", Block),
            ("wipe", Block),
        ];
        Self {
            rules: table
                .iter()
                .map(|(p, s)| RiskRule {
                    phrase: (*p).into(),
                    severity: *s,
                })
                .collect(),
        }
    }
}

#[derive(Deserialize)]
struct RuleFile {
    rules: Vec<RiskRule>,
}

impl RuleJudge {
    /// Parses a TOML table of `[[rules]] phrase = ".." severity = "warn"`.
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        let file: RuleFile = toml::from_str(text)?;
        Ok(Self { rules: file.rules })
    }
}

impl RiskJudge for RuleJudge {
    fn name(&self) -> &str {
        "rules"
    }

    fn assess(&self, goal_text: &str, plan_summary: &str) -> Assessment {
        let tokens = tokenize(&format!("{goal_text} {plan_summary}"));
        let mut verdict = JudgeVerdict::Allow;
        let mut hits = Vec::new();
        for rule in &self.rules {
            if contains_phrase(&tokens, &tokenize(&rule.phrase)) {
                verdict = verdict.max(rule.severity);
                hits.push(format!("{} ({:?})", rule.phrase, rule.severity).to_lowercase());
            }
        }
        let rationale = if hits.is_empty() {
            "no risk keywords".to_string()
        } else {
            format!("matched: {}", hits.join(", "))
        };
        Assessment { verdict, rationale }
    }

    fn sensitive_terms(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.phrase.clone()).collect()
    }
}

#[derive(Serialize)]
struct JudgeRequest<'a> {
    goal_text: &'a str,
    plan_summary: &'a str,
}

/// Posts `{goal_text, plan_summary}` to a model endpoint expecting an
/// [`Assessment`] back. Any failure blocks.
pub struct ExternalJudge {
    endpoint: String,
    agent: ureq::Agent,
    fallback_terms: Vec<String>,
    calls: AtomicUsize,
}

impl ExternalJudge {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .build()
                .into(),
            fallback_terms: RuleJudge::default().sensitive_terms(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl RiskJudge for ExternalJudge {
    fn name(&self) -> &str {
        "external"
    }

    fn assess(&self, goal_text: &str, plan_summary: &str) -> Assessment {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let result = self
            .agent
            .post(&self.endpoint)
            .send_json(&JudgeRequest {
                goal_text,
                plan_summary,
            })
            .map_err(|e| e.to_string())
            .and_then(|mut r| {
                r.body_mut()
                    .read_json::<Assessment>()
                    .map_err(|e| e.to_string())
            });
        result.unwrap_or_else(|e| Assessment {
            verdict: JudgeVerdict::Block,
            rationale: format!("judge unavailable: {e}"),
        })
    }

    fn sensitive_terms(&self) -> Vec<String> {
        self.fallback_terms.clone()
    }
}

/// Judges a plan before execution starts.
pub fn assess_plan(judge: &dyn RiskJudge, goal_text: &str, plan: &Plan) -> Assessment {
    judge.assess(goal_text, &plan.summary())
}
