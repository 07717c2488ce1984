//! Shared helpers for integration tests: scripted scenarios, runtime setup
//! and tree hashing.
#![allow(dead_code)]

pub mod golden;
pub mod manifests;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use agent_forge::gateway::{ReplayBackend, ReplayEntry, ReplayScript};
use agent_forge::meta::TaskOptions;
use agent_forge::registry::{ParameterDoc, ReturnsDoc, SkillManifest, SkillRecord};
use agent_forge::runtime::{ReadingConfig, Runtime, RuntimeConfig, SearchConfig};
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn script(name: &str) -> String {
    std::fs::read_to_string(fixtures().join("subagents").join(name)).unwrap()
}

/// One orchestrator turn: a thought line and a fenced action block.
pub fn act(thought: &str, action: &str, args: Value) -> String {
    let block = serde_json::to_string(&json!({"action": action, "args": args})).unwrap();
    format!("{thought}\n```json\n{block}\n```")
}

pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Default)]
pub struct Scenario {
    entries: Vec<ReplayEntry>,
}

impl Scenario {
    pub fn new() -> Self {
        Self::default()
    }

    /// Orchestrator turn; its output token count is the whitespace count.
    pub fn turn(mut self, matcher: &str, thought: &str, action: &str, args: Value) -> Self {
        let completion = act(thought, action, args);
        let tokens = whitespace_tokens(&completion);
        self.entries
            .push(ReplayEntry::new(matcher, completion, tokens));
        self
    }

    /// Raw completion, e.g. a malformed turn.
    pub fn raw(mut self, matcher: &str, completion: &str) -> Self {
        let tokens = whitespace_tokens(completion);
        self.entries
            .push(ReplayEntry::new(matcher, completion, tokens));
        self
    }

    /// A completion consumed by a subagent's own LLM call.
    pub fn subagent(mut self, matcher: &str, completion: &str, tokens: u64) -> Self {
        self.entries
            .push(ReplayEntry::new(matcher, completion, tokens));
        self
    }

    pub fn build(self) -> ReplayScript {
        ReplayScript::new(self.entries)
    }
}

fn create_args(name: &str, file: &str, tools: &[&str], description: &str, usage: &str) -> Value {
    json!({
        "name": name,
        "code": script(file),
        "tools": tools,
        "description": description,
        "parameters": [{"name": "query", "type": "text", "required": true, "description": "Input for the subagent."}],
        "returns": {"type": "json", "description": "Result payload."},
        "usage": usage,
    })
}

pub const INSTALL_QUERY: &str =
    "Transcribe the meeting recording clip.wav, then play some relaxing piano music.";

/// Two new subagents, both run, both saved.
pub fn install_audio() -> ReplayScript {
    Scenario::new()
        .turn(
            "Task: Transcribe the meeting",
            "Nothing saved fits; I need a transcriber first.",
            "create_subagent",
            create_args(
                "audio-transcriber",
                "audio_transcriber.py",
                &["shell_command"],
                "Transcribes an audio file and writes the transcript next to the outputs.",
                "audio-transcriber --query \"clip.wav\"",
            ),
        )
        .turn(
            "Staged subagent `audio-transcriber`",
            "Now a music player that searches QQ Music.",
            "create_subagent",
            create_args(
                "qq-music-player",
                "qq_music_player.py",
                &["web_search"],
                "Finds a track on QQ Music for a mood and starts playback.",
                "qq-music-player --query \"relaxing piano\"",
            ),
        )
        .turn(
            "Staged subagent `qq-music-player`",
            "Run the transcriber.",
            "run_subagent",
            json!({"name": "audio-transcriber", "query": "clip.wav"}),
        )
        .turn(
            "Subagent `audio-transcriber` succeeded",
            "Transcript ready; now the music.",
            "run_subagent",
            json!({"name": "qq-music-player", "query": "relaxing piano"}),
        )
        .turn(
            "Subagent `qq-music-player` succeeded",
            "Both worked, keep them.",
            "finish",
            json!({"answer": "Transcript saved to clip.wav.txt; now playing River Flows in You.",
                   "save": ["audio-transcriber", "qq-music-player"]}),
        )
        .build()
}

pub const EVOLVE_QUERIES: [&str; 3] = [
    "Write a README for the project spec: name=alpha;description=Alpha tool;usage=alpha go",
    "Write a README for the project spec: name=beta; description=Beta tool",
    "Write a README for the project spec: name=gamma; description=Checks a=b pairs; usage=gamma check",
];

pub const EVOLVE_SPECS: [&str; 3] = [
    "name=alpha;description=Alpha tool;usage=alpha go",
    "name=beta; description=Beta tool",
    "name=gamma; description=Checks a=b pairs; usage=gamma check",
];

pub const EVOLVE_REASONS: [&str; 2] = [
    "Strip whitespace around fields and make usage optional",
    "Replace split-based parsing with regex-based extraction",
];

/// Task `n` (0-based) of the three-run readme-generator evolution.
pub fn evolve(n: usize) -> ReplayScript {
    let spec = EVOLVE_SPECS[n];
    if n == 0 {
        return Scenario::new()
            .turn(
                "Task: Write a README",
                "I will build a README generator.",
                "create_subagent",
                create_args(
                    "readme-generator",
                    "readme_generator_v1.py",
                    &[],
                    "Generates README.md from a name=value project spec.",
                    "readme-generator --query \"name=demo;description=Demo;usage=demo run\"",
                ),
            )
            .turn(
                "Staged subagent `readme-generator`",
                "Try it.",
                "run_subagent",
                json!({"name": "readme-generator", "query": spec}),
            )
            .turn(
                "Subagent `readme-generator` succeeded",
                "Works; save it.",
                "finish",
                json!({"answer": "README.md written for alpha.", "save": ["readme-generator"]}),
            )
            .build();
    }
    let next = if n == 1 {
        "readme_generator_v2.py"
    } else {
        "readme_generator_v3.py"
    };
    Scenario::new()
        .turn("Task: Write a README", "Check the library first.", "list_saved_subagents", json!({}))
        .turn("readme-generator (v", "A saved generator exists; reuse it.", "run_subagent",
            json!({"name": "readme-generator", "query": spec}))
        .turn("Subagent `readme-generator` failed", "It failed; inspect the code.", "view_subagent_code",
            json!({"name": "readme-generator"}))
        .turn("def parse(spec)", "The parser is too strict for this spec.", "modify_subagent",
            json!({"name": "readme-generator", "code": script(next), "reason": EVOLVE_REASONS[n - 1]}))
        .turn("Staged `readme-generator` version", "Validate the fix.", "run_subagent",
            json!({"name": "readme-generator", "query": spec}))
        .turn("Subagent `readme-generator` succeeded", "Fixed; save the new version.", "finish",
            json!({"answer": "README.md written.", "save": ["readme-generator"]}))
        .build()
}

pub const EVAL_NAMES: [&str; 3] = ["headline-writer", "tag-suggester", "tone-checker"];
pub const EVAL_QUERIES: [&str; 3] = [
    "Write a headline for the quarterly report.",
    "Suggest tags for the onboarding article.",
    "Check the tone of the apology email.",
];
pub const SUBAGENT_NOTE_TOKENS: u64 = 400;

/// Builds a subagent, runs it (one subagent-origin LLM call), saves it.
pub fn eval_from_scratch(i: usize) -> ReplayScript {
    let name = EVAL_NAMES[i];
    let query = EVAL_QUERIES[i];
    Scenario::new()
        .turn(
            &format!("Task: {query}"),
            "Nothing saved fits; build a small LLM-backed helper.",
            "create_subagent",
            create_args(
                name,
                "llm_note.py",
                &[],
                &format!("Drafts a short note for the {name} job."),
                &format!("{name} --query \"text\""),
            ),
        )
        .turn(
            &format!("Staged subagent `{name}`"),
            "Run it on the task input.",
            "run_subagent",
            json!({"name": name, "query": query}),
        )
        .subagent(
            "note: ",
            &format!("{name} draft for: {query}"),
            SUBAGENT_NOTE_TOKENS,
        )
        .turn(
            &format!("Subagent `{name}` succeeded"),
            "Good result; keep the helper.",
            "finish",
            json!({"answer": format!("{name} produced a note."), "save": [name]}),
        )
        .build()
}

/// Reuses the helper saved by [`eval_from_scratch`].
pub fn eval_with_saved(i: usize) -> ReplayScript {
    let name = EVAL_NAMES[i];
    let query = EVAL_QUERIES[i];
    Scenario::new()
        .turn(
            &format!("Task: {query}"),
            "A saved helper fits.",
            "run_subagent",
            json!({"name": name, "query": query}),
        )
        .subagent(
            "note: ",
            &format!("{name} draft for: {query}"),
            SUBAGENT_NOTE_TOKENS,
        )
        .turn(
            &format!("Subagent `{name}` succeeded"),
            "Done.",
            "finish",
            json!({"answer": format!("{name} produced a note."), "save": []}),
        )
        .build()
}

pub const FAILING_QUERY: &str = "Summarize the incident log.";

/// A staged subagent exits 3, then the model stops producing actions.
pub fn failing_subagent() -> ReplayScript {
    Scenario::new()
        .turn(
            "Task: Summarize",
            "Build a summarizer.",
            "create_subagent",
            create_args(
                "incident-summarizer",
                "exit3.py",
                &["shell_command"],
                "Summarizes incident logs.",
                "incident-summarizer --query \"log.txt\"",
            ),
        )
        .turn(
            "Staged subagent",
            "Run it.",
            "run_subagent",
            json!({"name": "incident-summarizer", "query": "log.txt"}),
        )
        .raw("failed: NonzeroExit(3)", "I am not sure what to do next.")
        .raw("could not be parsed", "Still thinking.")
        .raw(
            "could not be parsed",
            "```json\n{\"action\": \"delete_everything\"}\n```",
        )
        .build()
}

pub const CRASH_QUERY: &str =
    "Write a README for the project spec: name=beta; description=Beta tool, and a release note document.";

/// Runs against a library holding readme-generator v1: repairs it, builds
/// a second skill, saves both.
pub fn crash_target() -> ReplayScript {
    Scenario::new()
        .turn("Task: Write a README", "Check the library.", "list_saved_subagents", json!({}))
        .turn("readme-generator (v1)", "Reuse the generator.", "run_subagent",
            json!({"name": "readme-generator", "query": EVOLVE_SPECS[1]}))
        .turn("Subagent `readme-generator` failed", "Look at it.", "view_subagent_code",
            json!({"name": "readme-generator"}))
        .turn("def parse(spec)", "Relax the parser.", "modify_subagent",
            json!({"name": "readme-generator", "code": script("readme_generator_v2.py"), "reason": EVOLVE_REASONS[0]}))
        .turn("Staged `readme-generator` version 2", "Validate.", "run_subagent",
            json!({"name": "readme-generator", "query": EVOLVE_SPECS[1]}))
        .turn("Subagent `readme-generator` succeeded", "Now the document.", "create_subagent",
            create_args("document-creator", "document_creator.py", &[], "Writes a markdown document from title: body text.",
                "document-creator --query \"Release notes: shipped\""))
        .turn("Staged subagent `document-creator`", "Write it.", "run_subagent",
            json!({"name": "document-creator", "query": "Release notes: beta shipped"}))
        .turn("Subagent `document-creator` succeeded", "Save both.", "finish",
            json!({"answer": "README.md and document.md written.", "save": ["readme-generator", "document-creator"]}))
        .build()
}

pub const BROWSER_QUERY: &str = "Open https://example.org and tell me its headline.";

/// The only browser adapter is the stub; the model routes around it.
pub fn browser_stub() -> ReplayScript {
    Scenario::new()
        .turn("Task: Open https://example.org", "Try a browser-driven subagent.", "create_subagent",
            create_args("page-opener", "browser_probe.py", &["browser_automation"],
                "Opens a page in the browser.", "page-opener --query \"https://example.org\""))
        .turn("Staged subagent `page-opener`", "Run it.", "run_subagent",
            json!({"name": "page-opener", "query": "https://example.org"}))
        .turn("NotImplemented", "Browser automation is unavailable here; answer without it.", "finish",
            json!({"answer": "Browser automation is not available; the headline could not be read.", "save": []}))
        .build()
}

pub const TRIVIAL_QUERY: &str = "What is 2 + 2?";

pub fn zero_subagents() -> ReplayScript {
    Scenario::new()
        .turn(
            "Task: What is 2 + 2?",
            "No subagent needed.",
            "finish",
            json!({"answer": "4", "save": []}),
        )
        .build()
}

/// Replay fixtures kept on disk: (path under fixtures/, script).
pub fn replay_fixtures() -> Vec<(String, ReplayScript)> {
    let mut out = vec![
        ("install_audio.replay.json".to_string(), install_audio()),
        (
            "replay/failing_subagent.replay.json".to_string(),
            failing_subagent(),
        ),
        (
            "replay/crash_target.replay.json".to_string(),
            crash_target(),
        ),
        (
            "replay/browser_stub.replay.json".to_string(),
            browser_stub(),
        ),
        (
            "replay/zero_subagents.replay.json".to_string(),
            zero_subagents(),
        ),
    ];
    for n in 0..3 {
        out.push((format!("replay/evolve_{}.replay.json", n + 1), evolve(n)));
    }
    for i in 0..3 {
        out.push((
            format!("eval/from_scratch_{}.replay.json", i + 1),
            eval_from_scratch(i),
        ));
        out.push((
            format!("eval/with_saved_{}.replay.json", i + 1),
            eval_with_saved(i),
        ));
    }
    out
}

pub fn eval_manifest() -> Value {
    let mut tasks = Vec::new();
    for (mode, prefix) in [
        ("from_scratch", "from_scratch"),
        ("with_saved", "with_saved"),
    ] {
        for i in 0..3 {
            tasks.push(json!({
                "id": format!("{prefix}-{}", i + 1),
                "mode": mode,
                "query": EVAL_QUERIES[i],
                "replay": format!("{prefix}_{}.replay.json", i + 1),
            }));
        }
    }
    json!({ "tasks": tasks })
}

pub struct TestRuntime {
    pub dir: tempfile::TempDir,
    pub rt: Runtime,
}

impl TestRuntime {
    pub fn library(&self) -> PathBuf {
        self.dir.path().join("library")
    }
}

pub fn config_in(dir: &Path) -> RuntimeConfig {
    let mut config = RuntimeConfig::new(dir.join("library"), dir.join("state"));
    config.search = SearchConfig::Fixtures(fixtures().join("search"));
    config.reading = ReadingConfig::Fixtures(fixtures().join("pages"));
    config.kill_grace = Duration::from_millis(500);
    config.subagent_timeout = Duration::from_secs(20);
    config
}

pub fn runtime() -> TestRuntime {
    let dir = tempfile::tempdir().unwrap();
    let rt = Runtime::new(config_in(dir.path()), None).unwrap();
    TestRuntime { dir, rt }
}

pub fn replay(script: ReplayScript) -> TaskOptions {
    TaskOptions {
        task_id: None,
        backend: Some(Arc::new(ReplayBackend::new(script))),
    }
}

pub fn replay_as(task_id: &str, script: ReplayScript) -> TaskOptions {
    TaskOptions {
        task_id: Some(task_id.to_string()),
        backend: Some(Arc::new(ReplayBackend::new(script))),
    }
}

pub fn manifest(name: &str, description: &str, usage: &str) -> SkillManifest {
    SkillManifest {
        name: name.into(),
        description: description.into(),
        parameters: vec![ParameterDoc {
            name: "query".into(),
            semantic_type: "text".into(),
            required: true,
            description: "Input for the subagent.".into(),
        }],
        returns: ReturnsDoc {
            semantic_type: "json".into(),
            description: "Result payload.".into(),
        },
        usage: usage.into(),
        version: 1,
        changelog: vec![],
    }
}

/// Saves a fixture script straight into the library at version 1.
pub fn save_fixture(rt: &Runtime, name: &str, file: &str, grants: &[&str], usage: &str) {
    let record = SkillRecord::subagent(
        manifest(name, &format!("Fixture skill {name}."), usage),
        script(file),
        grants.iter().map(|s| s.to_string()).collect(),
    );
    rt.registry().register_skill(record).unwrap();
}

/// Library with `echo` and `document-creator`, both runnable standalone.
pub fn deployable_runtime() -> TestRuntime {
    let t = runtime();
    save_fixture(
        &t.rt,
        "echo",
        "echo.py",
        &[],
        "echo --query \"hello bundle\"",
    );
    save_fixture(
        &t.rt,
        "document-creator",
        "document_creator.py",
        &[],
        "document-creator --query \"Release notes: beta shipped\"",
    );
    t
}
