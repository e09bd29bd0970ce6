//! Name-keyed factories for the pluggable pieces: exploration frontiers,
//! summarizers, risk judges and confirmation channels.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use crate::env::Scenario;
use crate::explorer::{BfsFrontier, DfsFrontier, Frontier};
use crate::perception::{
    DegradedSummarizer, ExternalSummarizer, FunctionSummarizer, ScriptedOracleSummarizer,
};
use crate::safety::{
    AutoApprove, AutoReject, ConfirmationChannel, ConfirmationQueue, ExternalJudge,
    InteractiveTerminal, RiskJudge, RuleJudge, ServiceQueueChannel, DEFAULT_CONFIRMATION_TIMEOUT,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("unknown {kind} `{name}` (available: {available})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("{kind} `{name}` needs {missing}")]
    Missing {
        kind: &'static str,
        name: String,
        missing: &'static str,
    },
}

/// Inputs a factory may draw on.
#[derive(Clone, Default)]
pub struct BuildContext {
    pub scenario: Option<Arc<Scenario>>,
    pub endpoint: Option<String>,
    pub timeout: Option<Duration>,
    pub queue: Option<Arc<ConfirmationQueue>>,
}

type Factory<T> = Box<dyn Fn(&BuildContext) -> Result<Box<T>, RegistryError> + Send + Sync>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: &str,
        factory: impl Fn(&BuildContext) -> Result<Box<T>, RegistryError> + Send + Sync + 'static,
    ) -> &mut Self {
        self.factories.insert(name.to_string(), Box::new(factory));
        self
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(&self, name: &str, ctx: &BuildContext) -> Result<Box<T>, RegistryError> {
        match self.factories.get(name) {
            Some(f) => f(ctx),
            None => Err(RegistryError::Unknown {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}

fn need<'a, V>(
    value: &'a Option<V>,
    kind: &'static str,
    name: &str,
    missing: &'static str,
) -> Result<&'a V, RegistryError> {
    value.as_ref().ok_or_else(|| RegistryError::Missing {
        kind,
        name: name.to_string(),
        missing,
    })
}

const EXTERNAL_TIMEOUT: Duration = Duration::from_secs(30);

pub fn frontiers() -> Registry<dyn Frontier> {
    let mut r: Registry<dyn Frontier> = Registry::new("strategy");
    r.register("bfs", |_| Ok(Box::new(BfsFrontier::default())));
    r.register("dfs", |_| Ok(Box::new(DfsFrontier::default())));
    r
}

pub fn summarizers() -> Registry<dyn FunctionSummarizer> {
    let mut r: Registry<dyn FunctionSummarizer> = Registry::new("summarizer");
    r.register("scripted", |ctx| {
        let scenario = need(&ctx.scenario, "summarizer", "scripted", "a scenario")?;
        Ok(Box::new(ScriptedOracleSummarizer::new(
            crate::env::GroundTruth::new(scenario.clone()),
        )))
    });
    r.register("degraded", |_| Ok(Box::new(DegradedSummarizer)));
    r.register("external", |ctx| {
        let endpoint = need(&ctx.endpoint, "summarizer", "external", "an endpoint")?;
        Ok(Box::new(ExternalSummarizer::new(
            endpoint.clone(),
            ctx.timeout.unwrap_or(EXTERNAL_TIMEOUT),
        )))
    });
    r
}

pub fn judges() -> Registry<dyn RiskJudge> {
    let mut r: Registry<dyn RiskJudge> = Registry::new("judge");
    r.register("rules", |_| Ok(Box::new(RuleJudge::default())));
    r.register("external", |ctx| {
        let endpoint = need(&ctx.endpoint, "judge", "external", "an endpoint")?;
        Ok(Box::new(ExternalJudge::new(
            endpoint.clone(),
            ctx.timeout.unwrap_or(EXTERNAL_TIMEOUT),
        )))
    });
    r
}

pub fn channels() -> Registry<dyn ConfirmationChannel> {
    let mut r: Registry<dyn ConfirmationChannel> = Registry::new("channel");
    r.register("auto-approve", |_| Ok(Box::new(AutoApprove)));
    r.register("auto-reject", |_| Ok(Box::new(AutoReject)));
    r.register("interactive", |_| {
        Ok(Box::new(InteractiveTerminal::stdio()))
    });
    r.register("service-queue", |ctx| {
        let queue = need(
            &ctx.queue,
            "channel",
            "service-queue",
            "a confirmation queue",
        )?;
        Ok(Box::new(ServiceQueueChannel::new(
            queue.clone(),
            ctx.timeout.unwrap_or(DEFAULT_CONFIRMATION_TIMEOUT),
        )))
    });
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_registered() {
        assert_eq!(frontiers().names(), ["bfs", "dfs"]);
        assert_eq!(summarizers().names(), ["degraded", "external", "scripted"]);
        assert_eq!(judges().names(), ["external", "rules"]);
        assert_eq!(
            channels().names(),
            [
                "auto-approve",
                "auto-reject",
                "interactive",
                "service-queue"
            ]
        );
    }

    #[test]
    fn build_errors_are_descriptive() {
        let err = summarizers()
            .build("vlm", &BuildContext::default())
            .err()
            .unwrap();
        assert!(err.to_string().contains("available: degraded"), "{err}");
        let err = summarizers()
            .build("scripted", &BuildContext::default())
            .err()
            .unwrap();
        assert!(matches!(err, RegistryError::Missing { .. }));
        let ch = channels()
            .build("auto-reject", &BuildContext::default())
            .unwrap();
        assert_eq!(ch.name(), "auto-reject");
    }

    #[test]
    fn custom_entries_can_be_added() {
        let mut r = judges();
        r.register("lenient", |_| Ok(Box::new(RuleJudge { rules: vec![] })));
        let j = r.build("lenient", &BuildContext::default()).unwrap();
        assert_eq!(
            j.assess("emergency shutdown", "").verdict,
            crate::safety::JudgeVerdict::Allow
        );
    }
}
