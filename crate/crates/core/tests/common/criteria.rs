//! One check per acceptance criterion. Each returns a short detail line on
//! success and the first discrepancy on failure.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use guiscout::agent::{
    recorded_trajectories, replay, run_explore, run_task, AgentConfig, RunOptions,
};
use guiscout::bundle::{KnowledgeBundle, Producer};
use guiscout::env::generate::{random_scenario, GeneratorConfig};
use guiscout::env::{env_equals, Environment, NoiseConfig, ScreenId};
use guiscout::graph::{raw_description, Localization};
use guiscout::planner::{compute_metrics, retrieve_plan, ExecOutcome, ExecutionResult};
use guiscout::safety::{BlacklistEntry, SafetyGate};
use guiscout::task::{Difficulty, Task};

use super::{explore, fixture, node_screens, reachable, screen_distances, FIXTURES};

pub type Check = Result<String, String>;

pub const VARIANTS: &[&str] = &["opendcim-mini-rerouted", "opendcim-mini-extra"];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bundle(name: &str, cfg: &AgentConfig) -> KnowledgeBundle {
    run_explore(fixture(name), cfg, &RunOptions::default())
        .expect("explore")
        .bundle
}

fn random(seed: u64) -> Arc<guiscout::env::Scenario> {
    Arc::new(random_scenario(seed, GeneratorConfig::default()))
}

pub fn rollback_soundness() -> Check {
    let start = Instant::now();
    let mut ok = 0;
    for seed in 0..100 {
        let s = random(seed);
        ensure(s.screens().len() <= 30, || {
            format!("seed {seed}: too many screens")
        })?;
        let x = explore(&s, "bfs", None, &SafetyGate::permissive());
        ensure(
            env_equals(x.env.state(), Environment::new(s.clone()).state()),
            || format!("seed {seed}: env not restored"),
        )?;
        ok += 1;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!("{ok}/100 restored in {:.2}s", took.as_secs_f64()))
}

pub fn coverage_oracle() -> Check {
    let mut runs = 0;
    let mut check = |label: String, s: &Arc<guiscout::env::Scenario>| -> Result<(), String> {
        let oracle = reachable(s);
        for strategy in ["bfs", "dfs"] {
            let x = explore(s, strategy, None, &SafetyGate::permissive());
            let found: BTreeSet<ScreenId> = node_screens(s, &x.graph).into_values().collect();
            ensure(
                found == oracle && x.graph.nodes().len() == oracle.len(),
                || format!("{label} {strategy}: visited {found:?}, oracle {oracle:?}"),
            )?;
            runs += 1;
        }
        Ok(())
    };
    for name in FIXTURES {
        check(name.to_string(), &fixture(name))?;
    }
    for seed in 0..100 {
        check(format!("random seed {seed}"), &random(seed))?;
    }
    Ok(format!("{runs} explorations, 0 discrepancies"))
}

pub fn shortest_path_oracle() -> Check {
    let mut pairs = 0;
    for name in FIXTURES {
        let s = fixture(name);
        let x = explore(&s, "bfs", None, &SafetyGate::permissive());
        let screens = node_screens(&s, &x.graph);
        for a in x.graph.nodes() {
            let oracle = screen_distances(&s, &screens[&a.id], &|_| false);
            for b in x.graph.nodes() {
                let got = x
                    .graph
                    .plan_path(a.id, b.id)
                    .map_err(|e| e.to_string())?
                    .map(|p| p.len());
                let want = oracle.get(&screens[&b.id]).copied();
                ensure(got == want, || {
                    format!("{name} {}->{}: {got:?} vs {want:?}", a.id, b.id)
                })?;
                pairs += 1;
            }
        }
    }
    Ok(format!("{pairs} ordered pairs, 0 discrepancies"))
}

/// Minimum depth over annotated tree nodes of `task_id`, counted by walking
/// parent links.
pub fn brute_force_min_annotated(bundle: &KnowledgeBundle, task_id: &str) -> Option<usize> {
    let nodes = bundle.tree.nodes();
    (0..nodes.len())
        .filter(|&i| nodes[i].annotations.iter().any(|a| a.task_id == task_id))
        .map(|mut i| {
            let mut depth = 0;
            while let Some(p) = nodes[i].parent {
                depth += 1;
                i = p;
            }
            depth
        })
        .min()
}

pub fn retrieval_optimality() -> Check {
    let mut n = 0;
    for name in FIXTURES {
        let s = fixture(name);
        let b = bundle(name, &AgentConfig::default());
        for task in &s.tasks {
            let want = brute_force_min_annotated(&b, &task.id)
                .ok_or(format!("{name}/{}: not learned", task.id))?;
            let plan = retrieve_plan(&b.tree, task, &b.graph.encoder(), b.thresholds().theta_task)
                .ok_or(format!("{name}/{}: nothing retrieved", task.id))?;
            ensure(plan.len() == want, || {
                format!("{name}/{}: {} vs {want}", task.id, plan.len())
            })?;
            n += 1;
        }
    }
    Ok(format!("{n} tasks, 0 discrepancies"))
}

pub fn efficiency() -> Check {
    let cfg = AgentConfig {
        channel: "auto-approve".into(),
        ..AgentConfig::default()
    };
    let mut n = 0;
    let mut skipped = Vec::new();
    for name in FIXTURES {
        let s = fixture(name);
        let b = bundle(name, &cfg);
        for task in &s.tasks {
            let out = run_task(s.clone(), &b, task, &cfg, &RunOptions::default())
                .map_err(|e| e.to_string())?;
            if out.result.outcome == ExecOutcome::JudgeBlocked {
                skipped.push(task.id.clone());
                continue;
            }
            let want = brute_force_min_annotated(&b, &task.id)
                .ok_or(format!("{}: not learned", task.id))?;
            let r = &out.result;
            ensure(r.success && r.steps == want && r.replans == 0, || {
                format!(
                    "{name}/{}: success={} steps={} (recorded {want}) replans={}",
                    task.id, r.success, r.steps, r.replans
                )
            })?;
            n += 1;
        }
    }
    Ok(format!(
        "{n} tasks at recorded length with 0 replans; judge-blocked, not run: {}",
        skipped.join(", ")
    ))
}

fn run_all(
    name: &str,
    bundle: &KnowledgeBundle,
    cfg: &AgentConfig,
) -> Result<Vec<(Task, ExecutionResult)>, String> {
    let s = fixture(name);
    s.tasks
        .iter()
        .map(|t| {
            run_task(s.clone(), bundle, t, cfg, &RunOptions::default())
                .map(|o| (t.clone(), o.result))
                .map_err(|e| e.to_string())
        })
        .collect()
}

pub fn knowledge_transfer() -> Check {
    let strong = AgentConfig::default();
    let weak = AgentConfig {
        summarizer: "degraded".into(),
        ..AgentConfig::default()
    };
    let mut compared = 0;
    let mut empty_runs = Vec::new();
    for name in FIXTURES {
        let full = bundle(name, &strong);
        let a = run_all(name, &full, &strong)?;
        let b = run_all(name, &full, &weak)?;
        for ((task, ra), (_, rb)) in a.iter().zip(&b) {
            ensure(ra.success == rb.success && ra.steps == rb.steps, || {
                format!(
                    "{name}/{}: oracle {}/{} vs degraded {}/{}",
                    task.id, ra.success, ra.steps, rb.success, rb.steps
                )
            })?;
            compared += 1;
        }
        let s = fixture(name);
        let empty = KnowledgeBundle::empty(&s.id, s.dim, Default::default(), Producer::Degraded);
        for (task, r) in run_all(name, &empty, &weak)? {
            ensure(!r.success || r.steps <= 20, || {
                format!("{}: impossible step count", task.id)
            })?;
            if !r.success {
                ensure(r.steps == 20, || {
                    format!("{name}/{}: failure recorded {} steps", task.id, r.steps)
                })?;
            }
            if task.difficulty != Difficulty::Easy {
                empty_runs.push(r);
            }
        }
    }
    let m = compute_metrics(&empty_runs).map_err(|e| e.to_string())?;
    ensure(m.success_rate == 0.0, || {
        format!("empty bundle medium/hard success {}%", m.success_rate)
    })?;
    Ok(format!(
        "{compared} tasks identical; empty bundle medium/hard: {}% success, {:.1} avg steps over {} runs",
        m.success_rate, m.avg_steps, m.runs
    ))
}

pub fn safety() -> Check {
    let cfg = AgentConfig::default();
    assert_eq!(cfg.channel, "auto-reject");
    let mut runs = 0;
    let mut blocked = 0;
    for name in FIXTURES.iter().chain(VARIANTS) {
        let s = fixture(name);
        let base = if name.starts_with("opendcim") {
            "opendcim-mini"
        } else {
            name
        };
        let b = bundle(base, &cfg);
        for task in &s.tasks {
            let out = run_task(s.clone(), &b, task, &cfg, &RunOptions::default())
                .map_err(|e| e.to_string())?;
            ensure(out.hazardous_executions == 0, || {
                format!("{name}/{}: hazardous element executed", task.id)
            })?;
            if out.result.outcome == ExecOutcome::JudgeBlocked {
                ensure(out.interactions == 0, || {
                    format!("{}: judge block still interacted", task.id)
                })?;
                blocked += 1;
            }
            runs += 1;
        }
    }
    ensure(blocked > 0, || "no judge block observed".into())?;

    let s = fixture("opendcim-mini");
    let trash = s
        .elements()
        .find(|(_, e)| e.id == "r3_delete")
        .map(|(_, e)| e.icon_vector.clone())
        .ok_or("fixture lacks the delete element")?;
    let gate = SafetyGate::new(
        vec![BlacklistEntry {
            icon: trash,
            reason: "delete".into(),
        }],
        vec![],
        0.9,
        0.9,
    );
    let x = explore(&s, "bfs", None, &gate);
    let screens: BTreeSet<ScreenId> = node_screens(&s, &x.graph).into_values().collect();
    ensure(!screens.contains(&ScreenId::from("server_deleted")), || {
        "deleted state explored".into()
    })?;
    ensure(!x.report.elements_skipped_blacklist.is_empty(), || {
        "nothing skipped".into()
    })?;
    Ok(format!(
        "{runs} runs with 0 hazardous executions; {blocked} judge blocks with 0 interactions; blacklisted delete keeps server_deleted out of the graph"
    ))
}

pub fn localization_robustness() -> Check {
    let mut total = 0;
    for name in FIXTURES {
        let s = fixture(name);
        let mut x = explore(&s, "bfs", None, &SafetyGate::permissive());
        let handles: Vec<_> = x
            .graph
            .nodes()
            .iter()
            .map(|n| (n.id, n.snapshot.clone().unwrap()))
            .collect();
        for (id, h) in handles {
            x.env.restore(&h).map_err(|e| e.to_string())?;
            for seed in 0..100 {
                let obs = x.env.observe_with(NoiseConfig {
                    seed,
                    epsilon: 0.05,
                });
                let got = x.graph.localize(&obs, &raw_description);
                ensure(got == Localization::Known(id), || {
                    format!("{name} {id} seed {seed}: {got:?}")
                })?;
                total += 1;
            }
        }
    }
    Ok(format!(
        "{total}/{total} noisy observations localized correctly"
    ))
}

pub fn replay_fidelity() -> Check {
    let mut n = 0;
    for name in FIXTURES {
        let s = fixture(name);
        let b = bundle(name, &AgentConfig::default());
        for t in recorded_trajectories(&b, None) {
            let r = replay(
                s.clone(),
                &b,
                &t,
                &AgentConfig::default(),
                &RunOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            ensure(r.divergences == 0 && r.goal_satisfied, || {
                format!(
                    "{name}/{}: {} divergences, goal {}",
                    t.task_id, r.divergences, r.goal_satisfied
                )
            })?;
            n += 1;
        }
    }
    Ok(format!("{n} trajectories, 0 divergences"))
}

pub fn metrics_arithmetic() -> Check {
    let r = |success, steps| ExecutionResult {
        task_id: "t".into(),
        success,
        steps,
        replans: 0,
        outcome: if success {
            ExecOutcome::Success
        } else {
            ExecOutcome::Failed
        },
        reason: None,
        safety_events: vec![],
        visited: vec![],
    };
    let m = compute_metrics(&[r(true, 5), r(true, 7), r(false, 20)]).map_err(|e| e.to_string())?;
    ensure(
        (m.success_rate - 66.7).abs() <= 0.05 && (m.avg_steps - 10.67).abs() <= 0.01,
        || format!("{:.2}% / {:.2}", m.success_rate, m.avg_steps),
    )?;
    Ok(format!("{:.1}% / {:.2}", m.success_rate, m.avg_steps))
}

pub type Criterion = (&'static str, fn() -> Check);

pub const ALL: &[Criterion] = &[
    ("rollback soundness", rollback_soundness),
    ("coverage oracle equivalence", coverage_oracle),
    ("shortest-path oracle equivalence", shortest_path_oracle),
    ("retrieval optimality", retrieval_optimality),
    ("execution efficiency", efficiency),
    ("knowledge transfer", knowledge_transfer),
    ("safety", safety),
    ("localization robustness", localization_robustness),
    ("replay fidelity", replay_fidelity),
    ("metrics arithmetic", metrics_arithmetic),
];
