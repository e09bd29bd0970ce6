//! Knowledge bundle: the persisted knowledge base, state graph and
//! action-flow tree, plus a manifest of the thresholds that produced them.
//!
//! Layout: `manifest.json`, `kb.jsonl` (one pair per line), `graph.json`,
//! `tree.json`. All JSON is written with sorted keys and no timestamps, so
//! identical knowledge gives identical bytes.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::env::Scenario;
use crate::graph::{StateGraph, StateId};
use crate::perception::{IconCaptionPair, KnowledgeBase};
use crate::planner::ActionFlowTree;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const KB: &str = "kb.jsonl";
const GRAPH: &str = "graph.json";
const TREE: &str = "tree.json";

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("bundle I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed bundle file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("unsupported bundle format_version {0}")]
    Version(u32),
    #[error("bundle dimension {bundle} does not match scenario dimension {scenario}")]
    DimensionMismatch { bundle: usize, scenario: usize },
    #[error("bundle is inconsistent: {0}")]
    Inconsistent(String),
}

/// Similarity thresholds and blend weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub alpha: f64,
    pub theta_icon: f64,
    pub theta_state: f64,
    pub theta_task: f64,
    pub theta_black: f64,
    pub theta_hazard: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            theta_icon: 0.9,
            theta_state: 0.9,
            theta_task: 0.8,
            theta_black: 0.9,
            theta_hazard: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    StrongOracle,
    External,
    Degraded,
}

impl Producer {
    pub fn for_summarizer(name: &str) -> Self {
        match name {
            "scripted" => Producer::StrongOracle,
            "external" => Producer::External,
            _ => Producer::Degraded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub scenario_id: String,
    pub d: usize,
    #[serde(flatten)]
    pub thresholds: Thresholds,
    pub producer: Producer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBundle {
    pub manifest: Manifest,
    pub kb: KnowledgeBase,
    pub graph: StateGraph,
    pub tree: ActionFlowTree,
}

impl KnowledgeBundle {
    /// A bundle with no knowledge at all.
    pub fn empty(scenario_id: &str, d: usize, thresholds: Thresholds, producer: Producer) -> Self {
        Self {
            manifest: Manifest {
                format_version: BUNDLE_FORMAT_VERSION,
                scenario_id: scenario_id.to_string(),
                d,
                thresholds,
                producer,
            },
            kb: KnowledgeBase::new(thresholds.theta_icon),
            graph: StateGraph::new(d, thresholds.alpha, thresholds.theta_state),
            tree: ActionFlowTree::new(StateId(0)),
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        self.manifest.thresholds
    }

    /// Errors unless the bundle was produced for `scenario`'s dimension.
    pub fn check_compatible(&self, scenario: &Scenario) -> Result<(), BundleError> {
        if self.manifest.d != scenario.dim {
            return Err(BundleError::DimensionMismatch {
                bundle: self.manifest.d,
                scenario: scenario.dim,
            });
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), BundleError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| BundleError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write(&dir.join(MANIFEST), &canonical(&self.manifest, true))?;
        let mut lines = String::new();
        for pair in self.kb.pairs() {
            lines.push_str(&canonical(pair, false));
            lines.push('\n');
        }
        write(&dir.join(KB), &lines)?;
        write(&dir.join(GRAPH), &canonical(&self.graph, true))?;
        write(&dir.join(TREE), &canonical(&self.tree, true))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, BundleError> {
        let dir = dir.as_ref();
        let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
        if manifest.format_version != BUNDLE_FORMAT_VERSION {
            return Err(BundleError::Version(manifest.format_version));
        }
        let kb_path = dir.join(KB);
        let text = read(&kb_path)?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let pair: IconCaptionPair =
                serde_json::from_str(line).map_err(|e| BundleError::Format {
                    path: kb_path.clone(),
                    message: format!("line {}: {e}", i + 1),
                })?;
            if pair.embedding.dim() != manifest.d {
                return Err(BundleError::Inconsistent(format!(
                    "kb line {} has dimension {}, manifest says {}",
                    i + 1,
                    pair.embedding.dim(),
                    manifest.d
                )));
            }
            pairs.push(pair);
        }
        let kb = KnowledgeBase::from_pairs(manifest.thresholds.theta_icon, pairs);
        let graph: StateGraph = read_json(&dir.join(GRAPH))?;
        if graph.dim != manifest.d {
            return Err(BundleError::Inconsistent(format!(
                "graph dimension {} differs from manifest {}",
                graph.dim, manifest.d
            )));
        }
        let tree: ActionFlowTree = read_json(&dir.join(TREE))?;
        Ok(Self {
            manifest,
            kb,
            graph,
            tree,
        })
    }
}

/// Sorted-key JSON. `serde_json::Value` keeps object keys in a BTreeMap.
fn canonical<T: Serialize>(value: &T, pretty: bool) -> String {
    let v = serde_json::to_value(value).expect("bundle types serialize");
    let mut s = if pretty {
        serde_json::to_string_pretty(&v)
    } else {
        serde_json::to_string(&v)
    }
    .expect("values serialize");
    if pretty {
        s.push('\n');
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<(), BundleError> {
    std::fs::write(path, contents).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<String, BundleError> {
    std::fs::read_to_string(path).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, BundleError> {
    serde_json::from_str(&read(path)?).map_err(|e| BundleError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
