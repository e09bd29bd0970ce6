use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::embedding::tokenize;
use crate::graph::{StateGraph, StateId};
use crate::perception::{KnowledgeBase, UNKNOWN_CAPTION};
use crate::task::{Difficulty, Goal, Task};

/// Words too generic to name a functional region.
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "back", "for", "from", "go", "in", "of", "on", "open", "the", "to",
    "unknown", "element", "with",
];

/// Proposes tasks worth learning from what exploration found. A model-backed
/// generator can replace the default.
pub trait TaskGenerator: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, graph: &StateGraph, kb: &KnowledgeBase, home: StateId) -> Vec<Task>;
}

/// One "reach this screen" task per state reachable from home, graded by
/// distance.
#[derive(Debug, Clone, Copy, Default)]
pub struct GraphTaskGenerator;

impl TaskGenerator for GraphTaskGenerator {
    fn name(&self) -> &str {
        "graph"
    }

    fn generate(&self, graph: &StateGraph, _kb: &KnowledgeBase, home: StateId) -> Vec<Task> {
        graph
            .distances_from(home)
            .into_iter()
            .filter(|&(s, _)| s != home)
            .map(|(s, d)| {
                let description = &graph.node(s).expect("reachable nodes exist").description;
                Task {
                    id: format!("reach-{s}"),
                    goal_text: format!("navigate to {description}"),
                    goal: Goal::State(s),
                    difficulty: match d {
                        1 => Difficulty::Easy,
                        2 => Difficulty::Medium,
                        _ => Difficulty::Hard,
                    },
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub keyword: String,
    pub states: Vec<StateId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftwareSummary {
    pub capability_summary: String,
    pub regions: Vec<Region>,
    pub generated_tasks: Vec<Task>,
}

/// Groups states into functional regions by the most frequent caption word
/// on their outgoing actions, describes every state, and asks `generator`
/// for tasks. Deterministic for a given graph and knowledge base.
pub fn summarize_software(
    graph: &StateGraph,
    kb: &KnowledgeBase,
    home: StateId,
    generator: &dyn TaskGenerator,
) -> Result<SoftwareSummary, PlanError> {
    if graph.nodes().is_empty() {
        return Err(PlanError::EmptyGraph);
    }
    // Words on most screens (navigation chrome) say nothing about a region.
    let mut spread: BTreeMap<String, usize> = BTreeMap::new();
    for node in graph.nodes() {
        for token in action_tokens(graph, node.id).into_keys() {
            *spread.entry(token).or_default() += 1;
        }
    }
    let common = |t: &str| {
        spread
            .get(t)
            .is_some_and(|&n| n > 1 && 2 * n > graph.nodes().len())
    };
    let mut regions: BTreeMap<String, Vec<StateId>> = BTreeMap::new();
    for node in graph.nodes() {
        regions
            .entry(region_keyword(graph, node.id, &common))
            .or_default()
            .push(node.id);
    }
    let known_captions = kb
        .pairs()
        .iter()
        .filter(|p| p.caption != UNKNOWN_CAPTION)
        .count();

    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} states, {} transitions, {} learned element functions ({} uncaptioned).",
        graph.nodes().len(),
        graph.edges().len(),
        known_captions,
        kb.len() - known_captions
    );
    let _ = writeln!(text, "Functional regions:");
    for (keyword, states) in &regions {
        let ids: Vec<String> = states.iter().map(ToString::to_string).collect();
        let _ = writeln!(text, "- {keyword}: {}", ids.join(", "));
    }
    let _ = writeln!(text, "States:");
    for node in graph.nodes() {
        let mut actions: Vec<&str> = graph
            .edges_from(node.id)
            .map(|e| e.action.element_caption.as_str())
            .collect();
        actions.dedup();
        let _ = writeln!(
            text,
            "- {}: {} | actions: {}",
            node.id,
            node.description,
            actions.join("; ")
        );
    }

    Ok(SoftwareSummary {
        capability_summary: text,
        regions: regions
            .into_iter()
            .map(|(keyword, states)| Region { keyword, states })
            .collect(),
        generated_tasks: generator.generate(graph, kb, home),
    })
}

fn action_tokens(graph: &StateGraph, id: StateId) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for edge in graph.edges_from(id) {
        for token in tokenize(&edge.action.element_caption) {
            if !STOPWORDS.contains(&token.as_str()) && token.len() > 2 {
                *counts.entry(token).or_default() += 1;
            }
        }
    }
    counts
}

fn region_keyword(graph: &StateGraph, id: StateId, common: &dyn Fn(&str) -> bool) -> String {
    let mut counts = action_tokens(graph, id);
    counts.retain(|t, _| !common(t));
    // Highest count; BTreeMap order breaks ties alphabetically.
    let best = counts
        .iter()
        .fold(None::<(&String, usize)>, |acc, (t, &c)| match acc {
            Some((_, bc)) if bc >= c => acc,
            _ => Some((t, c)),
        });
    match best {
        Some((t, _)) => t.clone(),
        None => {
            let desc = &graph.node(id).expect("node exists").description;
            tokenize(desc)
                .into_iter()
                .find(|t| !STOPWORDS.contains(&t.as_str()) && t.len() > 2)
                .unwrap_or_else(|| "misc".into())
        }
    }
}
