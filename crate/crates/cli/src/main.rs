use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use guiscout::agent::{
    bench, recorded_trajectories, replay, resolve_task, run_explore, run_learn, run_task,
    AgentConfig, RunOptions, SafetySource,
};
use guiscout::bundle::KnowledgeBundle;
use guiscout::env::{load_scenario, Scenario};
use guiscout::task::Task;

/// Exit status for a task that ran and failed.
const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "guiscout",
    version,
    about = "Explore, learn and execute tasks in scripted GUI scenarios"
)]
struct Cli {
    /// Log filter, e.g. `info` or `guiscout=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explore a scenario, learn its tasks and write a knowledge bundle.
    Explore(ExploreArgs),
    /// Learn more tasks on top of an existing bundle.
    Learn(LearnArgs),
    /// Execute one task from bundle knowledge.
    Run(RunArgs),
    /// Run a task suite and print success rate and average steps.
    Bench(BenchArgs),
    /// Write the bundle's graph or full contents to a single file.
    Export(ExportArgs),
    /// Re-execute recorded trajectories and report divergence.
    Replay(ReplayArgs),
    /// Serve the HTTP/JSON and event-stream API.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// scripted, degraded or external.
    #[arg(long, default_value = "scripted")]
    summarizer: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Visual noise radius applied to every observation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Endpoint for the external summarizer or judge.
    #[arg(long)]
    endpoint: Option<String>,
    /// JSON-lines blacklist; replaces the scenario's forbidden annotations.
    #[arg(long)]
    blacklist: Option<PathBuf>,
    /// JSON-lines hazard database; replaces the scenario's sensitive annotations.
    #[arg(long)]
    hazards: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "bfs")]
    strategy: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_states: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Only learn the scenario's own tasks.
    #[arg(long)]
    no_generated: bool,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    bundle: PathBuf,
    /// Task ids to learn; all scenario tasks when omitted.
    #[arg(long = "task")]
    tasks: Vec<String>,
    /// Output bundle; defaults to overwriting `--bundle`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    bundle: PathBuf,
    /// Task id or goal text.
    #[arg(long)]
    task: String,
    /// auto-approve, auto-reject or interactive.
    #[arg(long, default_value = "interactive")]
    channel: String,
    /// rules or external.
    #[arg(long, default_value = "rules")]
    judge: String,
    /// Print the full result and event log as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    bundle: PathBuf,
    /// One task id or goal text per line; all scenario tasks when omitted.
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value = "auto-reject")]
    channel: String,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    /// Whole bundle as one JSON document.
    Json,
    /// State graph in Graphviz DOT.
    Dot,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: ExportFormat,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    bundle: PathBuf,
    /// Replay only this task's trajectories.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Explore(a) => explore(a),
        Command::Learn(a) => learn(a),
        Command::Run(a) => run(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Export(a) => export(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn config(c: &Common) -> AgentConfig {
    let safety = if c.blacklist.is_some() || c.hazards.is_some() {
        SafetySource::Files {
            blacklist: c.blacklist.clone(),
            hazards: c.hazards.clone(),
        }
    } else {
        SafetySource::Annotations
    };
    AgentConfig {
        summarizer: c.summarizer.clone(),
        seed: c.seed,
        noise_epsilon: c.noise,
        endpoint: c.endpoint.clone(),
        safety,
        ..AgentConfig::default()
    }
}

fn scenario(c: &Common) -> Result<Arc<Scenario>, Failure> {
    Ok(Arc::new(load_scenario(&c.scenario)?))
}

fn load_bundle(path: &PathBuf, scenario: &Scenario) -> Result<KnowledgeBundle, Failure> {
    let bundle = KnowledgeBundle::load(path)?;
    bundle.check_compatible(scenario)?;
    Ok(bundle)
}

fn explore(a: ExploreArgs) -> Result<u8, Failure> {
    let scenario = scenario(&a.common)?;
    let cfg = AgentConfig {
        strategy: a.strategy,
        max_states: a.max_states,
        max_depth: a.max_depth,
        learn_generated: !a.no_generated,
        ..config(&a.common)
    };
    let out = run_explore(scenario, &cfg, &RunOptions::default())?;
    out.bundle.save(&a.out)?;
    let r = &out.report;
    println!(
        "explored {} states, {} transitions, {} captions ({} interactions, terminated by {:?})",
        r.states_discovered,
        r.transitions_recorded,
        r.captions_learned,
        r.interactions,
        r.terminated_by
    );
    let found = out.learned.iter().filter(|l| l.length.is_some()).count();
    println!(
        "learned {found}/{} tasks; bundle written to {}",
        out.learned.len(),
        a.out.display()
    );
    print!("{}", out.summary.capability_summary);
    Ok(0)
}

fn learn(a: LearnArgs) -> Result<u8, Failure> {
    let scenario = scenario(&a.common)?;
    let bundle = load_bundle(&a.bundle, &scenario)?;
    let ids = (!a.tasks.is_empty()).then_some(a.tasks.as_slice());
    let out = run_learn(
        scenario,
        bundle,
        ids,
        &config(&a.common),
        &RunOptions::default(),
    )?;
    let dest = a.out.unwrap_or(a.bundle);
    out.bundle.save(&dest)?;
    for l in &out.learned {
        match l.length {
            Some(n) => println!("{}: learned, {n} steps", l.task_id),
            None => println!("{}: no trajectory found", l.task_id),
        }
    }
    Ok(if out.learned.iter().all(|l| l.length.is_some()) {
        0
    } else {
        EXIT_FAILURE
    })
}

fn run(a: RunArgs) -> Result<u8, Failure> {
    let scenario = scenario(&a.common)?;
    let bundle = load_bundle(&a.bundle, &scenario)?;
    let task = resolve_task(&scenario, &bundle, &a.task)?;
    let cfg = AgentConfig {
        channel: a.channel,
        judge: a.judge,
        ..config(&a.common)
    };
    let out = run_task(scenario, &bundle, &task, &cfg, &RunOptions::default())?;
    if a.json {
        let doc = serde_json::json!({
            "run_id": out.run_id,
            "result": out.result,
            "assessment": out.assessment,
            "events": out.events,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        let r = &out.result;
        println!(
            "{}: {:?} in {} steps, {} replans{}",
            r.task_id,
            r.outcome,
            r.steps,
            r.replans,
            r.reason
                .as_deref()
                .map(|s| format!(" ({s})"))
                .unwrap_or_default()
        );
    }
    Ok(out.exit_code() as u8)
}

fn read_task_list(
    path: &PathBuf,
    scenario: &Scenario,
    bundle: &KnowledgeBundle,
) -> Result<Vec<Task>, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| resolve_task(scenario, bundle, l).map_err(Failure::from))
        .collect()
}

fn bench_cmd(a: BenchArgs) -> Result<u8, Failure> {
    let scenario = scenario(&a.common)?;
    let bundle = load_bundle(&a.bundle, &scenario)?;
    let tasks = match &a.tasks {
        Some(p) => read_task_list(p, &scenario, &bundle)?,
        None => scenario.tasks.clone(),
    };
    let cfg = AgentConfig {
        channel: a.channel,
        ..config(&a.common)
    };
    let report = bench(
        scenario,
        &bundle,
        &tasks,
        a.repeats,
        &cfg,
        &RunOptions::default(),
    )?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.table());
    }
    Ok(0)
}

fn export(a: ExportArgs) -> Result<u8, Failure> {
    let bundle = KnowledgeBundle::load(&a.bundle)?;
    let text = match a.format {
        ExportFormat::Json => {
            let doc = serde_json::json!({
                "manifest": bundle.manifest,
                "kb": bundle.kb.pairs(),
                "graph": bundle.graph,
                "tree": bundle.tree,
            });
            serde_json::to_string_pretty(&doc)? + "\n"
        }
        ExportFormat::Dot => dot(&bundle),
    };
    match a.out {
        Some(p) => {
            std::fs::write(&p, text).map_err(|e| Failure(format!("{}: {e}", p.display())))?
        }
        None => print!("{text}"),
    }
    Ok(0)
}

fn dot(bundle: &KnowledgeBundle) -> String {
    let quote = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
    let mut out = String::from("digraph states {\n");
    for n in bundle.graph.nodes() {
        out.push_str(&format!(
            "  {} [label=\"{}: {}\"];\n",
            n.id,
            n.id,
            quote(&n.description)
        ));
    }
    for e in bundle.graph.edges() {
        out.push_str(&format!(
            "  {} -> {} [label=\"{}\"];\n",
            e.from,
            e.to,
            quote(&e.action.element_caption)
        ));
    }
    out.push_str("}\n");
    out
}

fn replay_cmd(a: ReplayArgs) -> Result<u8, Failure> {
    let scenario = scenario(&a.common)?;
    let bundle = load_bundle(&a.bundle, &scenario)?;
    let trajectories = recorded_trajectories(&bundle, a.task.as_deref());
    if trajectories.is_empty() {
        return Err(Failure("no recorded trajectories match".into()));
    }
    let cfg = config(&a.common);
    let mut reports = Vec::new();
    for t in &trajectories {
        reports.push(replay(
            scenario.clone(),
            &bundle,
            t,
            &cfg,
            &RunOptions::default(),
        )?);
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        for r in &reports {
            println!(
                "{}: {} steps, {} divergences, goal {}",
                r.task_id,
                r.steps.len(),
                r.divergences,
                if r.goal_satisfied {
                    "reached"
                } else {
                    "not reached"
                }
            );
            for s in r.steps.iter().filter(|s| s.diverged) {
                println!(
                    "  step {}: expected {}, got {:?}{}",
                    s.index,
                    s.expected,
                    s.actual,
                    s.note
                        .as_deref()
                        .map(|n| format!(" ({n})"))
                        .unwrap_or_default()
                );
            }
        }
    }
    let clean = reports
        .iter()
        .all(|r| r.divergences == 0 && r.goal_satisfied);
    Ok(if clean { 0 } else { EXIT_FAILURE })
}

fn serve(a: ServeArgs) -> Result<u8, Failure> {
    let scenario = scenario(&a.common)?;
    let bundle = load_bundle(&a.bundle, &scenario)?;
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port).parse()?;
    let service = guiscout_server::Service::new(scenario, bundle, config(&a.common));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = guiscout_server::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        guiscout_server::serve(listener, service).await
    })?;
    Ok(0)
}
