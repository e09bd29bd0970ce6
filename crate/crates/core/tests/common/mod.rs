//! Fixture loading and brute-force oracles over raw scenario transition
//! tables. Nothing here goes through the graph or the explorer.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;

use guiscout::env::{load_scenario, Scenario, ScreenId};
use guiscout::graph::{StateGraph, StateId};

pub mod criteria;

pub const FIXTURES: &[&str] = &["opendcim-mini", "ecostruxure-mini"];

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn fixture(name: &str) -> Arc<Scenario> {
    Arc::new(load_scenario(scenarios_dir().join(name)).expect("fixture loads"))
}

/// Successor screens of `screen`, skipping elements for which `skip`
/// returns true.
pub fn successors(
    scenario: &Scenario,
    screen: &ScreenId,
    skip: &dyn Fn(&str) -> bool,
) -> BTreeSet<ScreenId> {
    let def = scenario.screen(screen).expect("screen exists");
    def.elements
        .iter()
        .filter(|e| !skip(&e.id))
        .map(|e| e.effect.goto.clone().unwrap_or_else(|| screen.clone()))
        .collect()
}

/// Screens reachable from the initial screen with distances.
pub fn screen_distances(
    scenario: &Scenario,
    from: &ScreenId,
    skip: &dyn Fn(&str) -> bool,
) -> BTreeMap<ScreenId, usize> {
    let mut dist = BTreeMap::from([(from.clone(), 0)]);
    let mut queue = VecDeque::from([from.clone()]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        for next in successors(scenario, &s, skip) {
            if !dist.contains_key(&next) {
                dist.insert(next.clone(), d + 1);
                queue.push_back(next);
            }
        }
    }
    dist
}

pub fn reachable(scenario: &Scenario) -> BTreeSet<ScreenId> {
    screen_distances(scenario, &scenario.initial_screen, &|_| false)
        .into_keys()
        .collect()
}

/// Distinct `(from, to)` screen pairs among reachable screens.
pub fn transition_pairs(scenario: &Scenario) -> BTreeSet<(ScreenId, ScreenId)> {
    let mut out = BTreeSet::new();
    for s in reachable(scenario) {
        for t in successors(scenario, &s, &|_| false) {
            out.insert((s.clone(), t));
        }
    }
    out
}

/// Maps graph nodes to screens by their description. Fixture descriptions
/// are unique per screen.
pub fn node_screens(scenario: &Scenario, graph: &StateGraph) -> BTreeMap<StateId, ScreenId> {
    graph
        .nodes()
        .iter()
        .map(|n| {
            let screen = scenario
                .screens()
                .iter()
                .find(|s| s.description == n.description)
                .expect("node description names a screen");
            (n.id, screen.id.clone())
        })
        .collect()
}

pub struct Explored {
    pub env: guiscout::env::Environment,
    pub graph: StateGraph,
    pub kb: guiscout::perception::KnowledgeBase,
    pub report: guiscout::explorer::ExplorationReport,
    pub events: guiscout::events::Recorder,
}

/// Explores `scenario` from its initial screen with the scripted oracle.
pub fn explore(
    scenario: &Arc<Scenario>,
    strategy: &str,
    max_depth: Option<usize>,
    gate: &guiscout::safety::SafetyGate,
) -> Explored {
    use guiscout::explorer::ExplorationConfig;
    use guiscout::perception::{KnowledgeBase, ScriptedOracleSummarizer};
    let mut env = guiscout::env::Environment::new(scenario.clone());
    let mut graph = StateGraph::new(scenario.dim, 0.5, 0.9);
    let mut kb = KnowledgeBase::new(0.9);
    let summarizer = ScriptedOracleSummarizer::new(env.ground_truth());
    let mut events = guiscout::events::Recorder::new("test");
    let config = ExplorationConfig {
        strategy: strategy.into(),
        max_states: None,
        max_depth,
        ..ExplorationConfig::default()
    };
    let report = guiscout::explorer::explore(
        &mut env,
        &config,
        &mut kb,
        &mut graph,
        gate,
        &summarizer,
        &mut events,
    )
    .expect("exploration succeeds");
    Explored {
        env,
        graph,
        kb,
        report,
        events,
    }
}
