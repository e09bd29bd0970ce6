//! Three-layer safety pipeline: icon blacklist, operator confirmation for
//! hazardous elements, and plan-level risk judging.

mod channel;
mod gate;
mod judge;

pub use channel::{
    AutoApprove, AutoReject, ChannelError, ConfirmationChannel, ConfirmationQueue,
    ConfirmationRequest, Decision, InteractiveTerminal, ResolveError, ServiceQueueChannel,
    DEFAULT_CONFIRMATION_TIMEOUT,
};
pub use gate::{
    check_element, load_blacklist, load_hazard_db, save_records, BlacklistEntry, GateContext,
    HazardEntry, SafetyError, SafetyGate, SafetyVerdict,
};
pub use judge::{
    assess_plan, Assessment, ExternalJudge, JudgeVerdict, RiskJudge, RiskRule, RuleJudge,
};
