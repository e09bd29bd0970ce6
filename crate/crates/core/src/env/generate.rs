//! Random scenario generation for property tests and soak runs.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{
    ActionKind, ElementFile, Hazard, IconSource, Mutation, Scenario, ScenarioFile, ScreenFile,
    ScreenId, Value, FORMAT_VERSION,
};
use crate::embedding::DEFAULT_DIM;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "pu", "ra", "si", "to", "vu", "xe", "zo", "qi", "bo", "du", "fa", "gy",
    "hu", "jo",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    (0..3)
        .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorConfig {
    pub max_screens: usize,
    pub max_elements: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            max_screens: 30,
            max_elements: 5,
        }
    }
}

/// Random scenario file. Screens get distinct multi-word descriptions and
/// visual seeds; every element gets its own icon and caption. Some screens
/// may be unreachable from the initial screen.
pub fn random_scenario_file(seed: u64, cfg: GeneratorConfig) -> ScenarioFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=cfg.max_screens.max(1));
    let ids: Vec<ScreenId> = (0..n).map(|i| ScreenId(format!("s{i}"))).collect();
    let mut icons = BTreeMap::new();
    let mut screens = Vec::with_capacity(n);
    let mut icon_seed = (seed % (1 << 40)) * 1_000;
    for (i, id) in ids.iter().enumerate() {
        let words: Vec<String> = (0..4).map(|_| word(&mut rng)).collect();
        let description = format!("panel {i} {}", words.join(" "));
        let count = rng.random_range(0..=cfg.max_elements);
        let mut elements = Vec::with_capacity(count);
        for j in 0..count {
            icon_seed = icon_seed.wrapping_add(1);
            let icon = format!("i{i}_{j}");
            icons.insert(icon.clone(), IconSource::Seed(icon_seed));
            let roll: f64 = rng.random();
            let (kind, goto, mutate, probe) = if roll < 0.75 {
                let target = ids[rng.random_range(0..n)].clone();
                (ActionKind::Click, Some(target), vec![], None)
            } else if roll < 0.9 {
                (
                    ActionKind::Toggle,
                    None,
                    vec![Mutation::Toggle {
                        var: format!("flag{i}"),
                    }],
                    None,
                )
            } else {
                (
                    ActionKind::TypeText,
                    None,
                    vec![Mutation::Push {
                        var: "log".into(),
                        value: "$payload".into(),
                    }],
                    Some(word(&mut rng)),
                )
            };
            let hazard = if rng.random_bool(0.1) {
                Hazard::Sensitive
            } else {
                Hazard::Safe
            };
            elements.push(ElementFile {
                id: format!("e{i}_{j}"),
                icon,
                label: rng.random_bool(0.5).then(|| word(&mut rng)),
                kind,
                hazard,
                caption: format!("element {i} {j} {}", word(&mut rng)),
                goto,
                mutate,
                probe,
            });
        }
        screens.push(ScreenFile {
            id: id.clone(),
            description,
            visual_seed: u64::from(rng.random::<u32>()),
            elements,
        });
    }
    let mut world = BTreeMap::new();
    world.insert("log".to_string(), Value::List(vec![]));
    ScenarioFile {
        format_version: FORMAT_VERSION,
        id: format!("random-{seed}"),
        dim: DEFAULT_DIM,
        initial_screen: ids[0].clone(),
        world,
        icons,
        screens,
        tasks: vec![],
    }
}

pub fn random_scenario(seed: u64, cfg: GeneratorConfig) -> Scenario {
    Scenario::from_file(random_scenario_file(seed, cfg)).expect("generated scenarios are valid")
}
