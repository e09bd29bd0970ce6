//! Icon–caption knowledge base and element-function summarizers.

mod kb;
mod summarizer;

pub use kb::{
    caption_element, CaptionOutcome, CaptionSource, IconCaptionPair, InsertOutcome, KnowledgeBase,
    Provenance, UNKNOWN_CAPTION,
};
pub use summarizer::{
    DegradedSummarizer, ExternalSummarizer, FunctionSummarizer, ScriptedOracleSummarizer,
    SummarizerError, Summary,
};
