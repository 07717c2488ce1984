mod support;

use std::collections::HashMap;

use agent_forge::gateway::ReplayScript;
use agent_forge::history::{read_history, CallOrigin, HistoryLine};
use agent_forge::meta::{TaskOutcome, TaskResult};
use agent_forge::registry::SkillKind;
use agent_forge::runner::OutcomeStatus;
use serde_json::json;
use support::*;

/// Every step points at an orchestrator exchange, and the exchange
/// sequence is gap-free from 1.
fn assert_history_complete(result: &TaskResult) {
    let lines = read_history(&result.workspace_dir.join("history.jsonl")).unwrap();
    let mut exchanges = HashMap::new();
    let mut steps = Vec::new();
    for line in lines {
        match line {
            HistoryLine::Exchange(e) => {
                exchanges.insert(e.seq, e);
            }
            HistoryLine::Step(s) => steps.push(s),
        }
    }
    let mut seqs: Vec<u64> = exchanges.keys().copied().collect();
    seqs.sort();
    assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    assert_eq!(steps.len(), result.steps.len());
    for s in &steps {
        let ex = exchanges
            .get(&s.exchange_seq)
            .expect("step without exchange");
        assert_eq!(ex.origin, CallOrigin::Orchestrator);
    }
    let total: u64 = exchanges
        .values()
        .filter(|e| e.origin == CallOrigin::Orchestrator)
        .map(|e| e.output_tokens)
        .sum();
    assert_eq!(total, result.orchestration_tokens);
}

#[test]
fn install_saves_both_subagents() {
    let t = runtime();
    let result =
        t.rt.run_task(INSTALL_QUERY, replay(install_audio()))
            .unwrap();
    assert_eq!(
        result.outcome,
        TaskOutcome::Completed,
        "{:?}",
        result.failure
    );
    let saved: Vec<_> = result
        .saved_skills
        .iter()
        .map(|s| (s.name.as_str(), s.version))
        .collect();
    assert_eq!(saved, [("audio-transcriber", 1), ("qq-music-player", 1)]);

    let list = t.rt.registry().list_saved_subagents().unwrap();
    assert_eq!(list.len(), 2);
    let qq = t.rt.registry().get("qq-music-player").unwrap();
    assert_eq!(qq.kind, SkillKind::Subagent);
    assert_eq!(qq.tool_grants, ["web_search"]);
    let audio = t.rt.registry().get("audio-transcriber").unwrap();
    assert_eq!(audio.tool_grants, ["shell_command"]);

    assert_eq!(result.subagent_runs.len(), 2);
    for run in &result.subagent_runs {
        assert_eq!(run.status, OutcomeStatus::Success);
        assert!(run.tool_calls.iter().all(|c| run.grants.contains(&c.tool)));
        assert!(!run.tool_calls.is_empty());
    }
    assert_history_complete(&result);
    assert_eq!(
        result.orchestration_tokens,
        install_audio().total_output_tokens()
    );
}

#[test]
fn trivial_task_runs_no_subagents() {
    let t = runtime();
    let result =
        t.rt.run_task(TRIVIAL_QUERY, replay(zero_subagents()))
            .unwrap();
    assert_eq!(result.outcome, TaskOutcome::Completed);
    assert_eq!(result.answer, "4");
    assert!(result.subagent_runs.is_empty());
    assert!(result.saved_skills.is_empty());
    assert!(t.rt.registry().list_saved_subagents().unwrap().is_empty());
    assert_history_complete(&result);
}

#[test]
fn self_evolution_reaches_v3() {
    let t = runtime();
    for (n, query) in EVOLVE_QUERIES.iter().enumerate() {
        let result = t.rt.run_task(query, replay(evolve(n))).unwrap();
        assert_eq!(
            result.outcome,
            TaskOutcome::Completed,
            "run {n}: {:?}",
            result.failure
        );
        assert_eq!(result.saved_skills[0].version, n as u32 + 1);
        if n > 0 {
            let first = &result.subagent_runs[0];
            assert!(
                matches!(first.status, OutcomeStatus::NonzeroExit(_)),
                "{:?}",
                first.status
            );
        }
        assert_history_complete(&result);
    }
    let head = t.rt.registry().get("readme-generator").unwrap();
    assert_eq!(head.manifest.version, 3);
    let summaries: Vec<_> = head
        .manifest
        .changelog
        .iter()
        .map(|c| (c.version, c.summary.as_str()))
        .collect();
    assert_eq!(summaries, [(2, EVOLVE_REASONS[0]), (3, EVOLVE_REASONS[1])]);
    let files = [
        "readme_generator_v1.py",
        "readme_generator_v2.py",
        "readme_generator_v3.py",
    ];
    for (version, file) in head.versions.iter().zip(files) {
        assert_eq!(version.code, script(file), "version {}", version.version);
    }
}

#[test]
fn browser_stub_reports_not_implemented() {
    let t = runtime();
    let result =
        t.rt.run_task(BROWSER_QUERY, replay(browser_stub()))
            .unwrap();
    assert_eq!(result.outcome, TaskOutcome::Completed);
    assert!(result.steps[1].observation.contains("NotImplemented"));
    assert!(t.rt.registry().list_saved_subagents().unwrap().is_empty());
}

#[test]
fn failing_subagent_fails_task_and_discards() {
    let t = runtime();
    let result =
        t.rt.run_task(FAILING_QUERY, replay(failing_subagent()))
            .unwrap();
    assert_eq!(result.outcome, TaskOutcome::Failed);
    assert!(
        result.failure.as_deref().unwrap().contains("parse"),
        "{:?}",
        result.failure
    );
    assert!(!result.workspace_dir.exists());
    assert!(t.rt.registry().list_saved_subagents().unwrap().is_empty());
    assert_eq!(
        result.subagent_runs[0].status,
        OutcomeStatus::NonzeroExit(3)
    );
}

#[test]
fn reprompt_recovers_from_a_bad_reply() {
    let t = runtime();
    let script = Scenario::new()
        .raw("Task: ", "no block here")
        .turn(
            "could not be parsed",
            "Sorry.",
            "finish",
            json!({"answer": "ok", "save": []}),
        )
        .build();
    let result = t.rt.run_task("anything", replay(script)).unwrap();
    assert_eq!(result.outcome, TaskOutcome::Completed);
    assert_eq!(result.steps.len(), 1);
    assert_eq!(result.steps[0].exchange_seq, 2);
}

#[test]
fn invalid_arguments_become_observations() {
    let t = runtime();
    let script = Scenario::new()
        .turn(
            "Task: ",
            "Run.",
            "run_subagent",
            json!({"name": 5, "query": "q"}),
        )
        .turn(
            "Error (InvalidArguments)",
            "Done.",
            "finish",
            json!({"answer": "", "save": []}),
        )
        .build();
    let result = t.rt.run_task("anything", replay(script)).unwrap();
    assert_eq!(
        result.outcome,
        TaskOutcome::Completed,
        "{:?}",
        result.failure
    );
}

#[test]
fn step_limit_ends_task() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = config_in(dir.path());
    config.step_limit = 3;
    let rt = agent_forge::runtime::Runtime::new(config, None).unwrap();
    let mut s = Scenario::new();
    for _ in 0..3 {
        s = s.turn("", "Look again.", "list_saved_subagents", json!({}));
    }
    let result = rt.run_task("loop", replay(s.build())).unwrap();
    assert_eq!(result.outcome, TaskOutcome::StepLimit);
    assert_eq!(result.steps.len(), 3);
    assert!(!result.workspace_dir.exists());
}

#[test]
fn finish_with_unstaged_name_saves_nothing() {
    let t = runtime();
    let script = Scenario::new()
        .turn(
            "Task: ",
            "Save.",
            "finish",
            json!({"answer": "a", "save": ["ghost"]}),
        )
        .turn(
            "UnknownStagedSkill",
            "Fine.",
            "finish",
            json!({"answer": "a", "save": []}),
        )
        .build();
    let result = t.rt.run_task("anything", replay(script)).unwrap();
    assert_eq!(result.outcome, TaskOutcome::Completed);
    assert_eq!(result.steps.len(), 2);
    assert!(t.rt.registry().list_saved_subagents().unwrap().is_empty());
}

#[test]
fn exhausted_replay_is_fatal() {
    let t = runtime();
    let result =
        t.rt.run_task("anything", replay(ReplayScript::default()))
            .unwrap();
    assert_eq!(result.outcome, TaskOutcome::Failed);
    assert!(!result.workspace_dir.exists());
}

#[test]
fn subagent_llm_calls_are_not_orchestration() {
    let t = runtime();
    let script = eval_from_scratch(0);
    let result =
        t.rt.run_task(EVAL_QUERIES[0], replay(script.clone()))
            .unwrap();
    assert_eq!(
        result.outcome,
        TaskOutcome::Completed,
        "{:?}",
        result.failure
    );
    assert_eq!(result.subagent_runs[0].llm_calls, 1);
    assert_eq!(
        result.orchestration_tokens,
        script.total_output_tokens() - SUBAGENT_NOTE_TOKENS
    );
    assert_history_complete(&result);
}

#[test]
fn duplicate_create_is_rejected() {
    let t = runtime();
    let args = json!({"name": "dup", "code": "print(1)", "description": "d"});
    let script = Scenario::new()
        .turn("Task: ", "Make.", "create_subagent", args.clone())
        .turn("Staged subagent `dup`", "Again.", "create_subagent", args)
        .turn(
            "DuplicateStagedName",
            "Stop.",
            "finish",
            json!({"answer": "", "save": []}),
        )
        .build();
    let result = t.rt.run_task("anything", replay(script)).unwrap();
    assert_eq!(result.outcome, TaskOutcome::Completed);
}

#[test]
fn ungranted_tool_is_denied_inside_task() {
    let t = runtime();
    let script = Scenario::new()
        .turn(
            "Task: ",
            "Make.",
            "create_subagent",
            json!({
            "name": "sneaky", "code": script("ungranted.py"), "tools": [], "description": "d"}),
        )
        .turn(
            "Staged subagent",
            "Run.",
            "run_subagent",
            json!({"name": "sneaky", "query": "x"}),
        )
        .turn(
            "Subagent `sneaky`",
            "Stop.",
            "finish",
            json!({"answer": "", "save": []}),
        )
        .build();
    let result = t.rt.run_task("anything", replay(script)).unwrap();
    let run = &result.subagent_runs[0];
    assert_eq!(run.tool_calls.len(), 1);
    assert!(!run.tool_calls[0].ok);
    assert!(result.steps[1].observation.contains("tool not granted"));
}
