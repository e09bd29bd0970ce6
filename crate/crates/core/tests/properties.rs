mod common;

use std::sync::Arc;

use proptest::prelude::*;

use guiscout::agent::{run_explore, AgentConfig, RunOptions};
use guiscout::bundle::KnowledgeBundle;
use guiscout::env::generate::{random_scenario, GeneratorConfig};
use guiscout::env::{env_equals, Environment, NoiseConfig, Observation};
use guiscout::graph::{raw_description, Discovery, Localization, StateGraph};
use guiscout::safety::SafetyGate;

use common::{explore, fixture, FIXTURES};

/// One clean observation per graph node, taken by restoring its snapshot.
fn node_observations(
    x: &mut common::Explored,
    noise: NoiseConfig,
) -> Vec<(guiscout::graph::StateId, Observation)> {
    let nodes: Vec<_> = x
        .graph
        .nodes()
        .iter()
        .map(|n| (n.id, n.snapshot.clone().unwrap()))
        .collect();
    nodes
        .into_iter()
        .map(|(id, h)| {
            x.env.restore(&h).unwrap();
            (id, x.env.observe_with(noise))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn exploration_always_restores_the_entry_state(
        seed in 0u64..1_000_000,
        dfs in any::<bool>(),
        max_depth in proptest::option::of(0usize..4),
        warmup in 0usize..3,
    ) {
        let s = Arc::new(random_scenario(seed, GeneratorConfig::default()));
        let mut env = Environment::new(s.clone());
        // Start somewhere other than the initial screen when possible.
        for _ in 0..warmup {
            if let Some(v) = env.observe().element_views.first().cloned() {
                env.act(&guiscout::env::Action::for_view(&v)).unwrap();
            }
        }
        let entry = env.state().clone();
        let mut graph = StateGraph::new(s.dim, 0.5, 0.9);
        let mut kb = guiscout::perception::KnowledgeBase::new(0.9);
        let summarizer = guiscout::perception::DegradedSummarizer;
        let mut rec = guiscout::events::Recorder::new("prop");
        let config = guiscout::explorer::ExplorationConfig {
            strategy: if dfs { "dfs" } else { "bfs" }.into(),
            max_depth,
            ..Default::default()
        };
        let report = guiscout::explorer::explore(
            &mut env, &config, &mut kb, &mut graph, &SafetyGate::permissive(), &summarizer, &mut rec,
        ).unwrap();
        prop_assert!(env_equals(env.state(), &entry));
        prop_assert_eq!(report.states_discovered, graph.nodes().len());
        prop_assert_eq!(rec.count("action_executed"), report.interactions);
    }

    #[test]
    fn state_dedup_is_insertion_order_independent(order in Just((0..9usize).collect::<Vec<_>>()).prop_shuffle()) {
        let s = fixture("ecostruxure-mini");
        let mut x = explore(&s, "bfs", None, &SafetyGate::permissive());
        let obs = node_observations(&mut x, NoiseConfig::none());
        prop_assert_eq!(obs.len(), 9);
        let mut g = StateGraph::new(16, 0.5, 0.9);
        for &i in &order {
            let (_, o) = &obs[i];
            let desc = raw_description(o);
            let fp = g.fingerprint(o, &desc).unwrap();
            g.upsert_state(fp, &desc, None, Discovery { run_id: "p".into(), step: 0 }).unwrap();
            // Re-inserting the same screen never adds a node.
            let fp = g.fingerprint(o, &desc).unwrap();
            let again = g.upsert_state(fp, &desc, None, Discovery { run_id: "p".into(), step: 0 }).unwrap();
            prop_assert!(!again.created);
        }
        prop_assert_eq!(g.nodes().len(), 9);
    }

    #[test]
    fn noisy_observations_stay_within_epsilon(seed in any::<u64>(), eps in 0.0f64..0.2) {
        let env = Environment::new(fixture("opendcim-mini"));
        let clean = env.observe_with(NoiseConfig::none());
        let noisy = env.observe_with(NoiseConfig { seed, epsilon: eps });
        let delta: Vec<f64> = noisy.screen_visual.iter().zip(&clean.screen_visual).map(|(a, b)| a - b).collect();
        prop_assert!(guiscout::embedding::l2_norm(&delta) <= eps + 1e-12);
        prop_assert_eq!(noisy.element_views, clean.element_views);
    }
}

#[test]
fn localization_is_exact_under_bounded_noise() {
    for name in FIXTURES {
        let s = fixture(name);
        let mut x = explore(&s, "bfs", None, &SafetyGate::permissive());
        let mut checked = 0;
        for seed in 0..100 {
            for (id, obs) in node_observations(
                &mut x,
                NoiseConfig {
                    seed,
                    epsilon: 0.05,
                },
            ) {
                assert_eq!(
                    x.graph.localize(&obs, &raw_description),
                    Localization::Known(id),
                    "{name} seed {seed}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 100 * x.graph.nodes().len());
    }
}

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn bundles_are_deterministic_and_round_trip() {
    for name in FIXTURES {
        let s = fixture(name);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = tempfile::tempdir().unwrap();
        run_explore(s.clone(), &AgentConfig::default(), &RunOptions::default())
            .unwrap()
            .bundle
            .save(a.path())
            .unwrap();
        run_explore(s.clone(), &AgentConfig::default(), &RunOptions::default())
            .unwrap()
            .bundle
            .save(b.path())
            .unwrap();
        assert_eq!(files(a.path()), files(b.path()), "{name}: rerun differs");
        KnowledgeBundle::load(a.path())
            .unwrap()
            .save(c.path())
            .unwrap();
        assert_eq!(
            files(a.path()),
            files(c.path()),
            "{name}: save/load/save differs"
        );
        assert_eq!(files(a.path()).len(), 4);
    }
}

#[test]
fn tree_edges_always_exist_in_the_graph() {
    for name in FIXTURES {
        let out = run_explore(
            fixture(name),
            &AgentConfig::default(),
            &RunOptions::default(),
        )
        .unwrap();
        let b = &out.bundle;
        for e in b.tree.edges() {
            assert!(
                b.graph.edges().contains(&e),
                "{name}: {} -> {}",
                e.from,
                e.to
            );
        }
    }
}

#[test]
fn bundle_dimension_mismatch_is_rejected_before_any_interaction() {
    let s = fixture("opendcim-mini");
    let mut bundle = run_explore(s.clone(), &AgentConfig::default(), &RunOptions::default())
        .unwrap()
        .bundle;
    bundle.manifest.d = 32;
    let task = s.task("open-dc1").unwrap().clone();
    let err = guiscout::agent::run_task(
        s,
        &bundle,
        &task,
        &AgentConfig::default(),
        &RunOptions::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("dimension"));
}
