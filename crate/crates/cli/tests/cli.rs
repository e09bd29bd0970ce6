use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use guiscout::bundle::{KnowledgeBundle, Producer, Thresholds};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn guiscout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guiscout"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn explored(dir: &Path) -> String {
    let bundle = dir.join("bundle");
    let s = scenario("opendcim-mini");
    let o = guiscout(&[
        "explore",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        bundle.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("explored 7 states"));
    bundle.to_str().unwrap().to_string()
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = explored(dir.path());
    let s = scenario("opendcim-mini");
    let s = s.to_str().unwrap();

    let ok = guiscout(&[
        "run",
        "--scenario",
        s,
        "--bundle",
        &bundle,
        "--task",
        "open-dc1",
        "--channel",
        "auto-reject",
    ]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("Success in 2 steps"));

    let by_text = guiscout(&[
        "run",
        "--scenario",
        s,
        "--bundle",
        &bundle,
        "--task",
        "open DC2 overview",
    ]);
    assert_eq!(by_text.status.code(), Some(0));

    let abort = guiscout(&[
        "run",
        "--scenario",
        s,
        "--bundle",
        &bundle,
        "--task",
        "delete-server",
        "--channel",
        "auto-reject",
    ]);
    assert_eq!(abort.status.code(), Some(3));

    let approved = guiscout(&[
        "run",
        "--scenario",
        s,
        "--bundle",
        &bundle,
        "--task",
        "delete-server",
        "--channel",
        "auto-approve",
    ]);
    assert_eq!(approved.status.code(), Some(0));

    let empty = dir.path().join("empty");
    KnowledgeBundle::empty(
        "opendcim-mini",
        16,
        Thresholds::default(),
        Producer::Degraded,
    )
    .save(&empty)
    .unwrap();
    let fail = guiscout(&[
        "run",
        "--scenario",
        s,
        "--bundle",
        empty.to_str().unwrap(),
        "--task",
        "open-dc1",
        "--summarizer",
        "degraded",
    ]);
    assert_eq!(fail.status.code(), Some(1));
    assert!(stdout(&fail).contains("20 steps"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(guiscout(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(guiscout(&["run", "--scenario", "x"]).status.code(), Some(2));
    let s = scenario("opendcim-mini");
    let missing = guiscout(&[
        "run",
        "--scenario",
        s.to_str().unwrap(),
        "--bundle",
        "/nonexistent",
        "--task",
        "open-dc1",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    let unknown = guiscout(&[
        "explore",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        "/tmp/x",
        "--strategy",
        "astar",
    ]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("bfs"));
}

#[test]
fn json_output_carries_events() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = explored(dir.path());
    let s = scenario("opendcim-mini");
    let o = guiscout(&[
        "run",
        "--scenario",
        s.to_str().unwrap(),
        "--bundle",
        &bundle,
        "--task",
        "open-rack-r3",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["result"]["steps"], 3);
    let executed = doc["events"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["type"] == "action_executed")
        .count();
    assert_eq!(executed, 3);
}

#[test]
fn bench_replay_export_learn() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = explored(dir.path());
    let s = scenario("opendcim-mini");
    let s = s.to_str().unwrap();

    let list = dir.path().join("tasks.txt");
    std::fs::write(&list, "# suite\nopen-dc1\nopen-rack-r3\ndelete-server\n").unwrap();
    let b = guiscout(&[
        "bench",
        "--scenario",
        s,
        "--bundle",
        &bundle,
        "--tasks",
        list.to_str().unwrap(),
        "--repeats",
        "2",
    ]);
    assert_eq!(b.status.code(), Some(0));
    let table = stdout(&b);
    assert!(table.contains("(overall)"));
    assert!(table.contains("66.7"), "{table}");

    let r = guiscout(&["replay", "--scenario", s, "--bundle", &bundle]);
    assert_eq!(r.status.code(), Some(0));
    assert!(stdout(&r).lines().all(|l| l.contains(" 0 divergences")));

    let rerouted = scenario("opendcim-mini-rerouted");
    let r = guiscout(&[
        "replay",
        "--scenario",
        rerouted.to_str().unwrap(),
        "--bundle",
        &bundle,
        "--task",
        "open-dc1",
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stdout(&r).contains("1 divergences"));

    let e = guiscout(&["export", "--bundle", &bundle, "--format", "json"]);
    let doc: serde_json::Value = serde_json::from_slice(&e.stdout).unwrap();
    assert_eq!(doc["graph"]["nodes"].as_array().unwrap().len(), 7);
    let e = guiscout(&["export", "--bundle", &bundle, "--format", "dot"]);
    assert!(stdout(&e).starts_with("digraph"));

    let out = dir.path().join("relearned");
    let l = guiscout(&[
        "learn",
        "--scenario",
        s,
        "--bundle",
        &bundle,
        "--task",
        "add-server",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        l.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&l.stderr)
    );
    assert!(stdout(&l).contains("add-server: learned, 4 steps"));
}
