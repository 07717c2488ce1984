mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use agent_forge::deploy::{verify_bundle, DeployError, SmokeStatus, VerifyReport};
use agent_forge::eval::{EvalError, EvalManifest};
use agent_forge::gateway::{HttpChatBackend, LlmBackend, ReplayBackend, ReplayScript};
use agent_forge::meta::{TaskOptions, TaskOutcome, TaskResult};
use agent_forge::registry::{RegistryError, SkillKind};
use agent_forge::runtime::Runtime;
use clap::{Args, Parser, Subcommand};

use config::{BackendChoice, FileConfig, FlagValues, Settings};

#[derive(Parser)]
#[command(
    name = "agent-forge",
    version,
    about = "Build, run, evolve and export script-based subagents"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config file (default: ./agent-forge.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    library: Option<PathBuf>,
    #[arg(long, global = true)]
    state: Option<PathBuf>,
    /// `http` or `replay`.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    step_limit: Option<u32>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task through the orchestrator.
    Run {
        query: String,
        /// Replay script standing in for the LLM backend.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Print the first orchestrator prompt and exit without calling a model.
        #[arg(long)]
        dry_plan: bool,
    },
    /// Inspect the skill library.
    Skills {
        #[command(subcommand)]
        command: SkillsCommand,
    },
    /// Export saved subagents as a standalone bundle.
    Export {
        names: Vec<String>,
        #[arg(long)]
        dest: PathBuf,
        /// Smoke-test the bundle and fail if any skill fails.
        #[arg(long)]
        verify: bool,
        /// Fixed export timestamp so identical inputs give identical bundles.
        #[arg(long)]
        reproducible: bool,
    },
    /// Run a scripted batch and report orchestration tokens per mode.
    Eval {
        manifest: PathBuf,
        #[arg(long, default_value = "eval_report.json")]
        report: PathBuf,
    },
}

#[derive(Subcommand)]
enum SkillsCommand {
    List,
    Show { name: String },
    Code { name: String },
}

enum Failure {
    /// Exit 1.
    Task(String),
    /// Exit 2.
    Config(String),
}

type Outcome = Result<ExitCode, Failure>;

const TASK_FAILED: u8 = 1;

fn settings(global: &Global, replay: Option<PathBuf>) -> Result<Settings, Failure> {
    let path = global
        .config
        .clone()
        .or_else(|| std::env::var_os("AF_CONFIG").map(PathBuf::from));
    let file = match path {
        Some(p) => FileConfig::load(&p).map_err(Failure::Config)?,
        None if std::path::Path::new(config::DEFAULT_CONFIG_FILE).is_file() => {
            FileConfig::load(std::path::Path::new(config::DEFAULT_CONFIG_FILE))
                .map_err(Failure::Config)?
        }
        None => FileConfig::default(),
    };
    let flags = FlagValues {
        library: global.library.clone(),
        state: global.state.clone(),
        backend: global.backend.clone(),
        model: global.model.clone(),
        step_limit: global.step_limit,
        replay,
    };
    config::resolve(&flags, &|k| std::env::var(k).ok(), &file).map_err(Failure::Config)
}

fn open_runtime(
    settings: &Settings,
    backend: Option<Arc<dyn LlmBackend>>,
) -> Result<Runtime, Failure> {
    Runtime::new(settings.runtime.clone(), backend).map_err(|e| Failure::Config(e.to_string()))
}

fn print_json(value: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn cmd_run(global: &Global, query: &str, replay: Option<PathBuf>, dry_plan: bool) -> Outcome {
    let settings = settings(global, replay)?;
    if dry_plan {
        let rt = open_runtime(&settings, None)?;
        let plan = rt
            .dry_plan(query)
            .map_err(|e| Failure::Task(e.to_string()))?;
        if global.json {
            print_json(&serde_json::json!({ "prompt": plan }));
        } else {
            println!("{plan}");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let backend: Arc<dyn LlmBackend> = match &settings.backend {
        BackendChoice::Replay(path) => Arc::new(ReplayBackend::new(
            ReplayScript::load(path).map_err(|e| Failure::Config(e.to_string()))?,
        )),
        BackendChoice::Http { url, key } => Arc::new(HttpChatBackend::new(
            url.clone(),
            key.clone(),
            settings.backend_timeout,
        )),
        BackendChoice::Missing(msg) => return Err(Failure::Config(msg.clone())),
    };
    let rt = open_runtime(&settings, Some(backend))?;
    let result = rt
        .run_task(query, TaskOptions::default())
        .map_err(|e| Failure::Task(e.to_string()))?;
    if global.json {
        print_json(&result);
    } else {
        print_summary(&result);
    }
    Ok(match result.outcome {
        TaskOutcome::Completed => ExitCode::SUCCESS,
        _ => ExitCode::from(TASK_FAILED),
    })
}

fn print_summary(result: &TaskResult) {
    println!("task: {}", result.task_id);
    println!("outcome: {:?}", result.outcome);
    if let Some(f) = &result.failure {
        println!("failure: {f}");
    }
    if !result.answer.is_empty() {
        println!("answer: {}", result.answer);
    }
    if result.saved_skills.is_empty() {
        println!("saved skills: none");
    } else {
        println!("saved skills ({}):", result.saved_skills.len());
        for s in &result.saved_skills {
            println!("  {} v{}", s.name, s.version);
        }
    }
    for s in &result.skipped_skills {
        println!("skipped {}: {}", s.name, s.reason);
    }
    println!("steps: {}", result.steps.len());
    println!("subagent runs: {}", result.subagent_runs.len());
    println!("orchestration tokens: {}", result.orchestration_tokens);
}

fn registry_failure(e: RegistryError) -> Failure {
    Failure::Task(e.to_string())
}

fn cmd_skills(global: &Global, command: &SkillsCommand) -> Outcome {
    let settings = settings(global, None)?;
    let rt = open_runtime(&settings, None)?;
    let registry = rt.registry();
    match command {
        SkillsCommand::List => {
            let all = registry.list_all().map_err(registry_failure)?;
            if global.json {
                print_json(&all);
                return Ok(ExitCode::SUCCESS);
            }
            for (kind, title) in [
                (SkillKind::Meta, "Built-in meta skills"),
                (SkillKind::Tool, "Built-in tool skills"),
                (SkillKind::Subagent, "Saved subagents"),
            ] {
                let group: Vec<_> = all.iter().filter(|s| s.kind == kind).collect();
                println!("{title} ({}):", group.len());
                for s in group {
                    if kind == SkillKind::Subagent {
                        println!("  {:<24} v{:<3} {}", s.name, s.version, s.description);
                    } else {
                        println!("  {:<24} {}", s.name, s.description);
                    }
                }
            }
        }
        SkillsCommand::Show { name } => {
            let text = registry
                .get_skill_description(name)
                .map_err(registry_failure)?;
            if global.json {
                print_json(&serde_json::json!({ "name": name, "skill_md": text }));
            } else {
                print!("{text}");
            }
        }
        SkillsCommand::Code { name } => {
            let code = registry
                .view_subagent_code(name)
                .map_err(registry_failure)?;
            if global.json {
                print_json(&serde_json::json!({ "name": name, "code": code }));
            } else {
                print!("{code}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_report(report: &VerifyReport) {
    for e in &report.bundle_errors {
        println!("bundle: {e}");
    }
    for s in &report.skills {
        let manifest = s.manifest_error.as_deref().unwrap_or("ok");
        let smoke = match &s.smoke {
            SmokeStatus::Passed => "passed".to_string(),
            SmokeStatus::Failed(d) => format!("FAILED ({d})"),
            SmokeStatus::Skipped(d) => format!("skipped ({d})"),
        };
        println!(
            "{}: manifest {manifest}; script {}; smoke {smoke}",
            s.name,
            if s.script_present {
                "present"
            } else {
                "MISSING"
            }
        );
    }
}

fn cmd_export(
    global: &Global,
    names: &[String],
    dest: &PathBuf,
    verify: bool,
    reproducible: bool,
) -> Outcome {
    let settings = settings(global, None)?;
    let rt = open_runtime(&settings, None)?;
    let bundle = rt
        .export_bundle(names, dest, reproducible)
        .map_err(|e| match e {
            DeployError::DestinationNotEmpty(_) | DeployError::Io(_) => {
                Failure::Config(e.to_string())
            }
            other => Failure::Task(other.to_string()),
        })?;
    let report = verify.then(|| verify_bundle(&bundle.bundle_dir, &rt.config().runner_config()));
    if global.json {
        print_json(&serde_json::json!({
            "bundle_dir": bundle.bundle_dir,
            "skills": bundle.skills.iter().map(|s| serde_json::json!({"name": s.name, "version": s.version})).collect::<Vec<_>>(),
            "verify": report,
        }));
    } else {
        println!(
            "exported {} skill(s) to {}",
            bundle.skills.len(),
            bundle.bundle_dir.display()
        );
        for s in &bundle.skills {
            println!("  {} v{}", s.name, s.version);
        }
        if let Some(r) = &report {
            print_report(r);
        }
    }
    match report {
        Some(r) if !r.all_passed() => Err(Failure::Task("bundle verification failed".into())),
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn cmd_eval(global: &Global, manifest: &PathBuf, report_path: &PathBuf) -> Outcome {
    let settings = settings(global, None)?;
    let manifest = EvalManifest::load(manifest).map_err(|e| Failure::Config(e.to_string()))?;
    let rt = open_runtime(&settings, None)?;
    let report = rt.run_eval(&manifest).map_err(|e| match e {
        EvalError::Manifest { .. } => Failure::Config(e.to_string()),
        other => Failure::Task(other.to_string()),
    })?;
    let mut text = serde_json::to_string_pretty(&report).expect("serializable");
    text.push('\n');
    std::fs::write(report_path, text)
        .map_err(|e| Failure::Config(format!("{}: {e}", report_path.display())))?;
    if global.json {
        print_json(&report);
    } else {
        for t in &report.tasks {
            println!(
                "{:<16} {:<14} {:>8}  {:?}",
                t.id, t.mode, t.orchestration_tokens, t.outcome
            );
        }
        for (mode, batch) in &report.modes {
            println!(
                "mean {mode}: {:.1} over {} task(s)",
                batch.mean,
                batch.per_task.len()
            );
        }
        println!("report written to {}", report_path.display());
    }
    Ok(if report.all_completed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(TASK_FAILED)
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    let g = &cli.global;
    let outcome = match &cli.command {
        Command::Run {
            query,
            replay,
            dry_plan,
        } => cmd_run(g, query, replay.clone(), *dry_plan),
        Command::Skills { command } => cmd_skills(g, command),
        Command::Export {
            names,
            dest,
            verify,
            reproducible,
        } => cmd_export(g, names, dest, *verify, *reproducible),
        Command::Eval { manifest, report } => cmd_eval(g, manifest, report),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Task(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(TASK_FAILED)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
    }
}
