use serde::{Deserialize, Serialize};

use super::summarizer::{FunctionSummarizer, Summary};
use crate::embedding::Embedding;
use crate::env::{Action, ElementView, Observation};
use crate::graph::StateId;

/// Caption used when no function could be determined.
pub const UNKNOWN_CAPTION: &str = "unknown element";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub state_fingerprint_id: StateId,
    pub action_index: usize,
    pub discovered_run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IconCaptionPair {
    pub embedding: Embedding,
    pub caption: String,
    pub confidence: f64,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Added(usize),
    MergedInto(usize),
}

/// Deduplicated icon–caption store with exact linear-scan lookup.
///
/// No two stored embeddings have similarity at or above `theta_icon`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pairs: Vec<IconCaptionPair>,
    theta_icon: f64,
}

impl KnowledgeBase {
    pub fn new(theta_icon: f64) -> Self {
        Self {
            pairs: Vec::new(),
            theta_icon,
        }
    }

    pub fn theta_icon(&self) -> f64 {
        self.theta_icon
    }

    pub fn pairs(&self) -> &[IconCaptionPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Best match by similarity, ties going to the earliest entry. Does not
    /// apply the threshold.
    fn nearest(&self, query: &Embedding) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, pair) in self.pairs.iter().enumerate() {
            let sim = pair
                .embedding
                .similarity(query)
                .unwrap_or(f64::NEG_INFINITY);
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        best
    }

    pub fn lookup(&self, query: &Embedding) -> Option<(&IconCaptionPair, f64)> {
        self.nearest(query)
            .filter(|&(_, sim)| sim >= self.theta_icon)
            .map(|(i, sim)| (&self.pairs[i], sim))
    }

    pub fn insert(&mut self, pair: IconCaptionPair) -> InsertOutcome {
        if let Some((i, sim)) = self.nearest(&pair.embedding) {
            if sim >= self.theta_icon {
                let existing = &mut self.pairs[i];
                if pair.confidence > existing.confidence {
                    existing.caption = pair.caption;
                    existing.confidence = pair.confidence;
                }
                for p in pair.provenance {
                    if !existing.provenance.contains(&p) {
                        existing.provenance.push(p);
                    }
                }
                existing.provenance.sort();
                return InsertOutcome::MergedInto(i);
            }
        }
        self.pairs.push(pair);
        InsertOutcome::Added(self.pairs.len() - 1)
    }

    /// Rebuilds from stored pairs, re-applying the dedup rule.
    pub fn from_pairs(theta_icon: f64, pairs: impl IntoIterator<Item = IconCaptionPair>) -> Self {
        let mut kb = Self::new(theta_icon);
        for p in pairs {
            kb.insert(p);
        }
        kb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    Retrieved,
    Summarized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionOutcome {
    pub caption: String,
    pub confidence: f64,
    pub source: CaptionSource,
    /// Summarizer failure, if the caption is a fallback.
    pub error: Option<String>,
}

/// Retrieval-first captioning: a knowledge-base hit is returned without
/// consulting the summarizer; otherwise the summarizer's caption is stored
/// and returned. Summarizer failures yield [`UNKNOWN_CAPTION`] with zero
/// confidence and are not stored.
pub fn caption_element(
    kb: &mut KnowledgeBase,
    summarizer: &dyn FunctionSummarizer,
    before: &Observation,
    element: &ElementView,
    action: &Action,
    after: &Observation,
    provenance: Provenance,
) -> CaptionOutcome {
    if let Some((pair, _)) = kb.lookup(&element.icon) {
        return CaptionOutcome {
            caption: pair.caption.clone(),
            confidence: pair.confidence,
            source: CaptionSource::Retrieved,
            error: None,
        };
    }
    match summarizer.summarize(before, element, action, after) {
        Ok(Summary {
            caption,
            confidence,
        }) if !caption.trim().is_empty() => {
            kb.insert(IconCaptionPair {
                embedding: element.icon.clone(),
                caption: caption.clone(),
                confidence,
                provenance: vec![provenance],
            });
            CaptionOutcome {
                caption,
                confidence,
                source: CaptionSource::Summarized,
                error: None,
            }
        }
        Ok(_) => CaptionOutcome {
            caption: UNKNOWN_CAPTION.to_string(),
            confidence: 0.0,
            source: CaptionSource::Summarized,
            error: Some("summarizer returned an empty caption".into()),
        },
        Err(e) => CaptionOutcome {
            caption: UNKNOWN_CAPTION.to_string(),
            confidence: 0.0,
            source: CaptionSource::Summarized,
            error: Some(e.to_string()),
        },
    }
}
