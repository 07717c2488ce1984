//! Byte-exact protocol transcripts under `fixtures/golden/`.

use std::collections::BTreeSet;
use std::fs;
use std::sync::Arc;
use std::time::Duration;

use agent_forge::broker::tools::{FixturePages, FixtureSearch};
use agent_forge::broker::{scope_for, BrokerSession, SessionConfig, SessionEvent, ToolBroker};
use agent_forge::gateway::{LlmGateway, ReplayBackend, ReplayEntry, ReplayScript};
use agent_forge::runner::{OutcomeStatus, RunTarget, RunnerConfig, SubagentRunner};
use agent_forge::workspace::WorkspaceManager;

use super::fixtures;

/// (case, grants)
pub const CASES: [(&str, &[&str]); 6] = [
    ("web_search", &["web_search"]),
    ("web_reading", &["web_reading"]),
    ("shell_command", &["shell_command"]),
    ("browser_automation", &["browser_automation"]),
    ("llm_call", &[]),
    ("denied", &["web_reading"]),
];

fn broker() -> Arc<ToolBroker> {
    Arc::new(ToolBroker {
        search: Arc::new(FixtureSearch::load(&fixtures().join("search")).unwrap()),
        reading: Arc::new(FixturePages::load(&fixtures().join("pages")).unwrap()),
        ..ToolBroker::default()
    })
}

fn gateway(task: &str) -> Arc<LlmGateway> {
    let gateway = Arc::new(LlmGateway::new(None));
    let script = ReplayScript::new(vec![ReplayEntry::new("ping", "pong", 1)]);
    gateway.open_task(task, None, Some(Arc::new(ReplayBackend::new(script))));
    gateway
}

fn id_of(line: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()?
        .get("id")?
        .as_u64()
}

fn compare(case: &str, requests: &str, got: &[String], expected: &str) -> Result<(), String> {
    let want: Vec<&str> = expected.lines().collect();
    if got.len() != want.len() {
        return Err(format!(
            "{case}: {} responses, golden has {}",
            got.len(),
            want.len()
        ));
    }
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        if g != w {
            return Err(format!(
                "{case}: response {} differs\n got: {g}\nwant: {w}",
                i + 1
            ));
        }
    }
    let req_ids: BTreeSet<_> = requests.lines().filter_map(id_of).collect();
    let resp_ids: BTreeSet<_> = got.iter().filter_map(|l| id_of(l)).collect();
    if req_ids != resp_ids || resp_ids.len() != got.len() {
        return Err(format!("{case}: ids are not a bijection"));
    }
    Ok(())
}

/// Feeds the requests straight into a broker session.
pub fn session_responses(case: &str, grants: &[&str]) -> Vec<String> {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("out")).unwrap();
    let grants: Vec<String> = grants.iter().map(|s| s.to_string()).collect();
    let mut session = BrokerSession::new(
        broker(),
        gateway("golden"),
        SessionConfig {
            task_id: "golden".into(),
            subagent: "golden-replayer".into(),
            model: "replay".into(),
            max_output_tokens: 64,
            scope: scope_for(dir.path()),
        },
        &grants,
    )
    .unwrap();
    let requests =
        fs::read_to_string(fixtures().join(format!("golden/{case}.requests.jsonl"))).unwrap();
    requests
        .lines()
        .map(|line| match session.handle_line(line) {
            Ok(SessionEvent::Respond(r)) => r,
            other => panic!("{case}: {other:?}"),
        })
        .collect()
}

/// Replays one case both in-process and through a real subprocess.
pub fn check_case(case: &str, grants: &[&str]) -> Result<(), String> {
    let golden = fixtures().join("golden");
    let requests_path = golden.join(format!("{case}.requests.jsonl"));
    let requests = fs::read_to_string(&requests_path).map_err(|e| e.to_string())?;
    let expected = fs::read_to_string(golden.join(format!("{case}.responses.jsonl")))
        .map_err(|e| e.to_string())?;

    compare(case, &requests, &session_responses(case, grants), &expected)?;

    let dir = tempfile::tempdir().unwrap();
    let manager = WorkspaceManager::new(dir.path().join("workspaces")).unwrap();
    let ws = manager.create_workspace("golden").unwrap();
    let config = RunnerConfig {
        kill_grace: Duration::from_millis(500),
        ..RunnerConfig::default()
    };
    let runner = SubagentRunner::new(config, broker(), gateway("golden"));
    let target = RunTarget {
        name: "golden-replayer".into(),
        script: fixtures().join("subagents/golden_replayer.py"),
        grants: grants.iter().map(|s| s.to_string()).collect(),
        timeout: None,
    };
    let outcome = runner
        .execute(&target, requests_path.to_str().unwrap(), &ws)
        .map_err(|e| e.to_string())?;
    if outcome.status != OutcomeStatus::Success {
        return Err(format!(
            "{case}: replayer {} ({})",
            outcome.status, outcome.stderr_tail
        ));
    }
    let got: Vec<String> = fs::read_to_string(ws.out_dir().join("responses.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(String::from)
        .collect();
    compare(case, &requests, &got, &expected)
}
