use std::io::{BufRead, BufReader, Read};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use guiscout::agent::{run_explore, AgentConfig, RunOptions};
use guiscout::env::load_scenario;
use guiscout_server::{bind, serve, Service};

struct Server {
    base: String,
    agent: ureq::Agent,
}

fn start() -> Server {
    let path =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/opendcim-mini");
    let scenario = Arc::new(load_scenario(path).unwrap());
    let bundle = run_explore(
        scenario.clone(),
        &AgentConfig::default(),
        &RunOptions::default(),
    )
    .unwrap()
    .bundle;
    let service = Service::new(scenario, bundle, AgentConfig::default());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            serve(listener, service).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    let agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    Server {
        base: format!("http://{addr}"),
        agent,
    }
}

impl Server {
    fn get(&self, path: &str) -> (u16, Value) {
        let mut resp = self
            .agent
            .get(&format!("{}{path}", self.base))
            .call()
            .unwrap();
        (resp.status().as_u16(), resp.body_mut().read_json().unwrap())
    }

    fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let mut resp = self
            .agent
            .post(&format!("{}{path}", self.base))
            .send_json(body)
            .unwrap();
        (resp.status().as_u16(), resp.body_mut().read_json().unwrap())
    }

    fn wait_finished(&self, run_id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let (code, run) = self.get(&format!("/runs/{run_id}"));
            assert_eq!(code, 200);
            if run["state"] == "finished" {
                return run;
            }
            assert!(Instant::now() < deadline, "run did not finish: {run}");
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    fn wait_pending(&self) -> Value {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let (_, pending) = self.get("/confirmations/pending");
            if pending.as_array().is_some_and(|p| !p.is_empty()) {
                return pending;
            }
            assert!(Instant::now() < deadline, "no confirmation arrived");
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    fn submit(&self, task: &str) -> String {
        let (code, body) = self.post("/tasks", json!({ "task_id": task }));
        assert_eq!(code, 202, "{body}");
        body["run_id"].as_str().unwrap().to_string()
    }
}

#[test]
fn health_is_ok() {
    let s = start();
    assert_eq!(s.get("/health"), (200, json!({ "status": "ok" })));
}

#[test]
fn submitted_task_runs_in_execute_phase() {
    let s = start();
    let id = s.submit("open-dc1");
    let (_, run) = s.get(&format!("/runs/{id}"));
    assert_eq!(run["phase"], "execute");
    let run = s.wait_finished(&id);
    assert_eq!(run["status"], "success");
    assert_eq!(run["result"]["steps"], 2);
    let (_, runs) = s.get("/runs");
    assert_eq!(runs.as_array().unwrap().len(), 1);
    assert_eq!(runs[0]["run_id"], id.as_str());
}

#[test]
fn tasks_resolve_by_goal_text() {
    let s = start();
    let (code, body) = s.post("/tasks", json!({ "goal_text": "open DC2 overview" }));
    assert_eq!(code, 202);
    let run = s.wait_finished(body["run_id"].as_str().unwrap());
    assert_eq!(run["task_id"], "open-dc2");
    assert_eq!(run["status"], "success");
}

#[test]
fn bad_task_requests() {
    let s = start();
    assert_eq!(
        s.post("/tasks", json!({ "task_id": "no-such-task" })).0,
        404
    );
    assert_eq!(s.post("/tasks", json!({})).0, 400);
    assert_eq!(s.get("/runs/run-99").0, 404);
}

#[test]
fn graph_and_tree_are_served() {
    let s = start();
    let (code, graph) = s.get("/graph");
    assert_eq!(code, 200);
    assert_eq!(graph["nodes"].as_array().unwrap().len(), 7);
    let (code, tree) = s.get("/tree");
    assert_eq!(code, 200);
    assert!(tree["nodes"].as_array().unwrap().len() > 1);
}

#[test]
fn approval_is_exactly_once_and_the_action_executes() {
    let s = start();
    let id = s.submit("delete-server");
    let pending = s.wait_pending();
    assert_eq!(pending.as_array().unwrap().len(), 1);
    let cid = pending[0]["id"].as_str().unwrap().to_string();
    assert_eq!(pending[0]["caption"], "delete server");

    assert_eq!(
        s.post("/confirmations/nope", json!({ "decision": "approve" }))
            .0,
        404
    );
    assert_eq!(
        s.post(
            &format!("/confirmations/{cid}"),
            json!({ "decision": "approve" })
        )
        .0,
        200
    );
    assert_eq!(
        s.post(
            &format!("/confirmations/{cid}"),
            json!({ "decision": "reject" })
        )
        .0,
        409
    );

    let run = s.wait_finished(&id);
    assert_eq!(run["status"], "success", "{run}");
    let events = run["events"].as_array().unwrap();
    let asked = events
        .iter()
        .position(|e| e["type"] == "confirmation_requested")
        .unwrap();
    let verdict = &events[asked + 1];
    assert_eq!(verdict["type"], "verdict");
    assert_eq!(verdict["verdict"], "approved");
    let executed = &events[asked + 2];
    assert_eq!(executed["type"], "action_executed");
    assert_eq!(executed["caption"], "delete server");
    assert!(s
        .get("/confirmations/pending")
        .1
        .as_array()
        .unwrap()
        .is_empty());
}

#[test]
fn rejection_aborts_the_run() {
    let s = start();
    let id = s.submit("delete-server");
    let pending = s.wait_pending();
    let cid = pending[0]["id"].as_str().unwrap();
    assert_eq!(
        s.post(
            &format!("/confirmations/{cid}"),
            json!({ "decision": "reject" })
        )
        .0,
        200
    );
    let run = s.wait_finished(&id);
    assert_eq!(run["status"], "safety_abort");
    assert_eq!(run["result"]["outcome"], "safety_abort");
    let events = run["events"].as_array().unwrap();
    assert!(!events
        .iter()
        .any(|e| e["type"] == "action_executed" && e["caption"] == "delete server"));
}

struct SseEvent {
    id: u64,
    kind: String,
    data: Value,
}

/// Reads events until `stop` returns true for one or `limit` are read.
fn read_events(
    reader: &mut impl BufRead,
    limit: usize,
    stop: &dyn Fn(&SseEvent) -> bool,
) -> Vec<SseEvent> {
    let mut out = Vec::new();
    let (mut id, mut kind, mut data) = (None, None, String::new());
    let mut line = String::new();
    while out.len() < limit {
        line.clear();
        if reader.read_line(&mut line).unwrap() == 0 {
            break;
        }
        let l = line.trim_end_matches(['\r', '\n']);
        if l.is_empty() {
            if let (Some(i), Some(k)) = (id.take(), kind.take()) {
                let ev = SseEvent {
                    id: i,
                    kind: k,
                    data: serde_json::from_str(&data).unwrap(),
                };
                data.clear();
                let done = stop(&ev);
                out.push(ev);
                if done {
                    break;
                }
            }
        } else if let Some(v) = l.strip_prefix("id:") {
            id = Some(v.trim().parse().unwrap());
        } else if let Some(v) = l.strip_prefix("event:") {
            kind = Some(v.trim().to_string());
        } else if let Some(v) = l.strip_prefix("data:") {
            data.push_str(v.trim_start());
        }
    }
    out
}

fn open_stream(s: &Server, last_id: Option<u64>) -> BufReader<impl Read> {
    let mut req = s.agent.get(&format!("{}/events", s.base));
    if let Some(id) = last_id {
        req = req.header("Last-Event-ID", id.to_string());
    }
    let resp = req.call().unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    BufReader::new(resp.into_body().into_reader())
}

#[test]
fn event_stream_resumes_without_gaps_or_duplicates() {
    let s = start();
    let id = s.submit("open-rack-r3");
    let run = s.wait_finished(&id);
    let total = run["events"].as_array().unwrap().len();
    assert!(total > 4);

    let mut first = open_stream(&s, None);
    let head = read_events(&mut first, 3, &|_| false);
    drop(first);
    let last = head.last().unwrap().id;
    let mut second = open_stream(&s, Some(last));
    let tail = read_events(&mut second, usize::MAX, &|e| e.kind == "run_finished");

    let ids: Vec<u64> = head.iter().chain(&tail).map(|e| e.id).collect();
    assert_eq!(ids, (1..=total as u64).collect::<Vec<_>>());
    for e in head.iter().chain(&tail) {
        assert_eq!(e.data["type"], e.kind.as_str());
        assert_eq!(e.data["run_id"], id.as_str());
    }
}

#[test]
fn live_events_arrive_in_order() {
    let s = start();
    let mut stream = open_stream(&s, None);
    let id = s.submit("open-us");
    let events = read_events(&mut stream, usize::MAX, &|e| e.kind == "run_finished");
    let kinds: Vec<&str> = events.iter().map(|e| e.kind.as_str()).collect();
    assert_eq!(kinds.first(), Some(&"localized"));
    assert!(kinds.contains(&"verdict"));
    assert!(kinds.contains(&"action_executed"));
    assert_eq!(events.last().unwrap().data["run_id"], id.as_str());
    assert!(events.windows(2).all(|w| w[1].id == w[0].id + 1));
}
