//! The orchestration loop: prompt the model, parse one meta-skill action,
//! execute it, feed back the observation, until `finish` or the step limit.

pub mod action;
pub mod prompt;

use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::broker::ToolCallRecord;
use crate::fault::InjectedCrash;
use crate::fsutil::sha256_hex;
use crate::gateway::{CallOrigin, ChatMessage, GatewayError, LlmBackend, LlmRequest, Role};
use crate::history::{StepRecord, TaskLog};
use crate::registry::builtin;
use crate::registry::{
    normalize_name, render_skill_md, resolve_grants, ChangelogEntry, ParameterDoc, RegistryError,
    ReturnsDoc, SkillKind, SkillManifest,
};
use crate::runner::{OutcomeStatus, RunTarget};
use crate::runtime::Runtime;
use crate::workspace::{PromotedSkill, SkippedSkill, StagedSkill, Workspace, WorkspaceError};
use action::{parse_action, CreateArgs, FinishArgs, MetaAction, ModifyArgs, RawAction};

/// Errors that prevent a task from starting. Everything after the
/// workspace exists is reported in [`TaskResult`].
#[derive(Debug, Error)]
pub enum MetaError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("history log: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("step limit must be positive")]
    ZeroStepLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TaskOutcome {
    Completed,
    Failed,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaStep {
    pub step_index: u64,
    pub action: String,
    pub arguments: Value,
    pub observation: String,
    pub exchange_seq: u64,
}

/// One run_subagent step as the broker saw it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubagentRun {
    pub step_index: u64,
    pub name: String,
    pub grants: Vec<String>,
    pub status: OutcomeStatus,
    pub tool_calls: Vec<ToolCallRecord>,
    pub llm_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskResult {
    pub task_id: String,
    pub outcome: TaskOutcome,
    pub answer: String,
    pub saved_skills: Vec<PromotedSkill>,
    pub skipped_skills: Vec<SkippedSkill>,
    pub orchestration_tokens: u64,
    pub steps: Vec<MetaStep>,
    pub subagent_runs: Vec<SubagentRun>,
    /// Why the task failed, when it did.
    pub failure: Option<String>,
    pub workspace_dir: PathBuf,
}

#[derive(Default)]
pub struct TaskOptions {
    pub task_id: Option<String>,
    /// Backend used for this task only (replay scripts).
    pub backend: Option<Arc<dyn LlmBackend>>,
}

/// Stops the loop; the workspace is discarded.
#[derive(Debug)]
enum Fatal {
    Gateway(GatewayError),
    Parse(String),
    Crash(InjectedCrash),
    Io(String),
}

impl std::fmt::Display for Fatal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fatal::Gateway(e) => write!(f, "{e}"),
            Fatal::Parse(e) => write!(f, "action parse failure: {e}"),
            Fatal::Crash(e) => write!(f, "{e}"),
            Fatal::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<InjectedCrash> for Fatal {
    fn from(e: InjectedCrash) -> Self {
        Fatal::Crash(e)
    }
}

enum Step {
    Continue(String),
    Finish {
        answer: String,
        saved: Vec<PromotedSkill>,
        skipped: Vec<SkippedSkill>,
    },
}

struct Session<'a> {
    rt: &'a Runtime,
    ws: Workspace,
    runs: Vec<SubagentRun>,
    step: u64,
}

fn err_obs(kind: &str, msg: impl std::fmt::Display) -> String {
    format!("Error ({kind}): {msg}")
}

fn default_parameters() -> Vec<ParameterDoc> {
    vec![ParameterDoc {
        name: "query".into(),
        semantic_type: "text".into(),
        required: true,
        description: "Query text for the subagent.".into(),
    }]
}

fn default_returns() -> ReturnsDoc {
    ReturnsDoc {
        semantic_type: "json".into(),
        description: "Result payload reported by the subagent.".into(),
    }
}

fn default_usage(name: &str) -> String {
    format!("{name} --query \"<text>\"")
}

fn first_line(reason: &str) -> String {
    reason
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("updated")
        .to_string()
}

impl Session<'_> {
    fn ext(&self) -> &str {
        self.rt.registry.script_ext()
    }

    fn execute(&mut self, action: MetaAction) -> Result<Step, Fatal> {
        Ok(Step::Continue(match action {
            MetaAction::ListSavedSubagents => self.list(),
            MetaAction::GetSkillDescription { name } => self.describe(&name),
            MetaAction::ViewSubagentCode { name } => self.view(&name),
            MetaAction::CreateSubagent(args) => self.create(args),
            MetaAction::ModifySubagent(args) => self.modify(args),
            MetaAction::RunSubagent { name, query } => self.run(&name, &query)?,
            MetaAction::Finish(args) => return self.finish(args),
        }))
    }

    fn list(&self) -> String {
        let mut out = match self.rt.registry.list_saved_subagents() {
            Ok(list) if list.is_empty() => "No saved subagents.".to_string(),
            Ok(list) => {
                let mut s = String::from("Saved subagents:");
                for l in list {
                    s.push_str(&format!(
                        "\n- {} (v{}): {}",
                        l.name, l.version, l.description
                    ));
                }
                s
            }
            Err(e) => return err_obs("LibraryCorrupt", e),
        };
        if !self.ws.staged_skills.is_empty() {
            out.push_str(&format!(
                "\nStaged in this task: {}",
                self.ws.staged_skills.join(", ")
            ));
        }
        out
    }

    fn describe(&self, name: &str) -> String {
        if let Ok(staged) = self.ws.load_staged(name, self.ext()) {
            return render_skill_md(&staged.manifest, SkillKind::Subagent);
        }
        match self.rt.registry.get_skill_description(name) {
            Ok(text) => text,
            Err(RegistryError::UnknownSkill(_)) => {
                err_obs("UnknownSkill", format!("no skill named `{name}`"))
            }
            Err(e) => err_obs("Registry", e),
        }
    }

    fn view(&self, name: &str) -> String {
        if let Ok(staged) = self.ws.load_staged(name, self.ext()) {
            return staged.code;
        }
        match self.rt.registry.view_subagent_code(name) {
            Ok(code) => code,
            Err(RegistryError::UnknownSkill(_)) => err_obs(
                "UnknownSubagent",
                format!("no staged or saved subagent named `{name}`"),
            ),
            Err(e) => err_obs("Registry", e),
        }
    }

    fn create(&mut self, args: CreateArgs) -> String {
        let name = match normalize_name(&args.name) {
            Ok(n) => n,
            Err(e) => return err_obs("InvalidManifest", e),
        };
        if self.ws.is_staged(&name) {
            return err_obs(
                "DuplicateStagedName",
                format!("`{name}` is already staged; use modify_subagent"),
            );
        }
        if builtin::lookup(&name).is_some() {
            return err_obs("DuplicateName", format!("`{name}` is a built-in skill"));
        }
        if self.rt.registry.is_saved(&name) {
            return err_obs(
                "DuplicateName",
                format!("`{name}` is already saved; use modify_subagent"),
            );
        }
        if let Err(e) = resolve_grants(&name, &args.tools) {
            return err_obs("UnresolvedToolGrant", e);
        }
        let manifest = SkillManifest {
            usage: args
                .usage
                .map(|u| u.trim().to_string())
                .unwrap_or_else(|| default_usage(&name)),
            name: name.clone(),
            description: args.description.trim().to_string(),
            parameters: args
                .parameters
                .map(|p| p.into_iter().map(Into::into).collect())
                .unwrap_or_else(default_parameters),
            returns: args.returns.map(Into::into).unwrap_or_else(default_returns),
            version: 1,
            changelog: Vec::new(),
        };
        let staged = StagedSkill {
            manifest,
            code: args.code,
            tool_grants: args.tools,
        };
        let ext = self.ext().to_string();
        match self.ws.stage(&staged, &ext) {
            Ok(_) => format!(
                "Staged subagent `{name}` (version 1) with tools [{}].",
                staged.tool_grants.join(", ")
            ),
            Err(WorkspaceError::InvalidManifest { source, .. }) => {
                err_obs("InvalidManifest", source)
            }
            Err(e) => err_obs("Workspace", e),
        }
    }

    fn modify(&mut self, args: ModifyArgs) -> String {
        let name = args.name.trim().to_string();
        let head = self
            .rt
            .registry
            .get(&name)
            .ok()
            .filter(|r| r.kind == SkillKind::Subagent);
        let (mut manifest, grants) = match self.ws.load_staged(&name, self.ext()) {
            Ok(staged) => (staged.manifest, staged.tool_grants),
            Err(_) => match &head {
                Some(rec) => (rec.manifest.clone(), rec.tool_grants.clone()),
                None => {
                    return err_obs(
                        "UnknownSubagent",
                        format!("no staged or saved subagent named `{name}`"),
                    )
                }
            },
        };
        let summary = first_line(&args.reason);
        if let Some(rec) = &head {
            // Modifying a saved skill stages head + 1; repeated edits in the
            // same task keep that number and refresh its changelog entry.
            let next = rec.manifest.version + 1;
            manifest.version = next;
            manifest.changelog.retain(|c| c.version < next);
            manifest.changelog.push(ChangelogEntry {
                version: next,
                summary,
            });
        }
        if let Some(d) = args.description {
            manifest.description = d.trim().to_string();
        }
        if let Some(p) = args.parameters {
            manifest.parameters = p.into_iter().map(Into::into).collect();
        }
        if let Some(r) = args.returns {
            manifest.returns = r.into();
        }
        if let Some(u) = args.usage {
            manifest.usage = u.trim().to_string();
        }
        let grants = args.tools.unwrap_or(grants);
        if let Err(e) = resolve_grants(&name, &grants) {
            return err_obs("UnresolvedToolGrant", e);
        }
        let version = manifest.version;
        let staged = StagedSkill {
            manifest,
            code: args.code,
            tool_grants: grants,
        };
        let ext = self.ext().to_string();
        match self.ws.stage(&staged, &ext) {
            Ok(_) => match &head {
                Some(rec) => format!(
                    "Staged `{name}` version {version}; the library stays at version {} until finish saves it.",
                    rec.manifest.version
                ),
                None => format!("Updated staged `{name}` (version {version})."),
            },
            Err(WorkspaceError::InvalidManifest { source, .. }) => err_obs("InvalidManifest", source),
            Err(e) => err_obs("Workspace", e),
        }
    }

    fn target(&self, name: &str) -> Option<RunTarget> {
        if let Ok(staged) = self.ws.load_staged(name, self.ext()) {
            return Some(RunTarget {
                name: name.to_string(),
                script: self.ws.staged_script_path(name, self.ext()),
                grants: staged.tool_grants,
                timeout: staged.manifest.timeout_override(),
            });
        }
        let rec = self
            .rt
            .registry
            .get(name)
            .ok()
            .filter(|r| r.kind == SkillKind::Subagent)?;
        Some(RunTarget {
            name: name.to_string(),
            script: self.rt.registry.head_script_path(name).ok()?,
            grants: rec.tool_grants,
            timeout: rec.manifest.timeout_override(),
        })
    }

    fn run(&mut self, name: &str, query: &str) -> Result<String, Fatal> {
        let Some(target) = self.target(name) else {
            return Ok(err_obs(
                "UnknownSubagent",
                format!("no staged or saved subagent named `{name}`"),
            ));
        };
        let outcome = match self.rt.runner.execute(&target, query, &self.ws) {
            Ok(o) => o,
            Err(e) => return Ok(err_obs("SubagentFailure", e)),
        };
        self.runs.push(SubagentRun {
            step_index: self.step,
            name: name.to_string(),
            grants: target.grants.clone(),
            status: outcome.status.clone(),
            tool_calls: outcome.tool_calls.clone(),
            llm_calls: outcome.llm_calls_made,
        });
        if let Some(failure) = &outcome.gateway_failure {
            return Err(Fatal::Io(format!(
                "subagent `{name}` LLM call failed: {failure}"
            )));
        }
        Ok(match &outcome.result_payload {
            Some(payload) if outcome.is_success() => format!(
                "Subagent `{name}` succeeded in {:.2}s ({} tool calls).\nResult: {}",
                outcome.duration,
                outcome.tool_calls_made,
                serde_json::to_string(payload).unwrap()
            ),
            _ => format!(
                "Subagent `{name}` failed: {}.\nstderr tail:\n{}",
                outcome.status,
                outcome.stderr_tail.trim_end()
            ),
        })
    }

    fn finish(&mut self, args: FinishArgs) -> Result<Step, Fatal> {
        let mut save: Vec<String> = Vec::new();
        for n in args.save {
            let n = n.trim().to_string();
            if !save.contains(&n) {
                save.push(n);
            }
        }
        let missing: Vec<&String> = save.iter().filter(|n| !self.ws.is_staged(n)).collect();
        if !missing.is_empty() {
            let list: Vec<&str> = missing.iter().map(|s| s.as_str()).collect();
            return Ok(Step::Continue(err_obs(
                "UnknownStagedSkill",
                format!(
                    "not staged in this task: {}; nothing was saved",
                    list.join(", ")
                ),
            )));
        }
        self.rt.faults.hit("finish:promote")?;
        let result = self
            .rt
            .workspaces
            .promote(&mut self.ws, &save, &self.rt.registry)
            .map_err(|e| match e {
                WorkspaceError::Registry(RegistryError::Crash(c)) => Fatal::Crash(c),
                other => Fatal::Io(format!("promotion failed: {other}")),
            })?;
        Ok(Step::Finish {
            answer: args.answer,
            saved: result.promoted,
            skipped: result.skipped,
        })
    }
}

impl Runtime {
    /// Skill listing shown to the orchestrator on the first turn.
    pub fn skill_listing(&self) -> Result<String, RegistryError> {
        Ok(prompt::skill_listing(&self.registry.list_all()?))
    }

    /// The first prompt for `query`, without calling any model.
    pub fn dry_plan(&self, query: &str) -> Result<String, RegistryError> {
        Ok(prompt::task_message(query, &self.skill_listing()?))
    }

    pub fn run_task(&self, query: &str, options: TaskOptions) -> Result<TaskResult, MetaError> {
        if self.config.step_limit == 0 {
            return Err(MetaError::ZeroStepLimit);
        }
        let task_id = options.task_id.unwrap_or_else(|| self.fresh_task_id());
        let ws = self.workspaces.create_workspace(&task_id)?;
        std::fs::create_dir_all(ws.out_dir())?;
        let log = Arc::new(TaskLog::open(&ws.history_path(), &ws.out_dir())?);
        self.gateway
            .open_task(&task_id, Some(log.clone()), options.backend);
        let listing = match self.skill_listing() {
            Ok(l) => l,
            Err(e) => {
                let mut ws = ws;
                let _ = self.workspaces.discard(&mut ws);
                self.gateway.close_task(&task_id);
                return Err(e.into());
            }
        };
        let mut session = Session {
            rt: self,
            ws,
            runs: Vec::new(),
            step: 0,
        };
        let mut messages = prompt::initial_messages(query, &listing);
        let mut steps = Vec::new();
        let ended = self.drive(&mut session, &mut messages, &mut steps, &log);
        self.gateway.close_task(&task_id);
        let orchestration_tokens = self
            .gateway
            .orchestration_token_total(&task_id)
            .unwrap_or(0);

        let mut result = TaskResult {
            task_id: task_id.clone(),
            outcome: TaskOutcome::Completed,
            answer: String::new(),
            saved_skills: Vec::new(),
            skipped_skills: Vec::new(),
            orchestration_tokens,
            steps,
            subagent_runs: std::mem::take(&mut session.runs),
            failure: None,
            workspace_dir: session.ws.root_dir.clone(),
        };
        match ended {
            Ok(Some(Step::Finish {
                answer,
                saved,
                skipped,
            })) => {
                result.answer = answer;
                result.saved_skills = saved;
                result.skipped_skills = skipped;
            }
            Ok(_) => {
                result.outcome = TaskOutcome::StepLimit;
                result.failure = Some(format!("step limit of {} reached", self.config.step_limit));
            }
            Err(fatal) => {
                result.outcome = TaskOutcome::Failed;
                result.failure = Some(fatal.to_string());
            }
        }
        if result.outcome != TaskOutcome::Completed && session.ws.is_active() {
            if let Err(e) = self.workspaces.discard(&mut session.ws) {
                tracing::warn!(task = %task_id, "discard failed: {e}");
            }
        }
        tracing::info!(task = %task_id, outcome = ?result.outcome, tokens = orchestration_tokens, "task ended");
        Ok(result)
    }

    fn drive(
        &self,
        session: &mut Session<'_>,
        messages: &mut Vec<ChatMessage>,
        steps: &mut Vec<MetaStep>,
        log: &TaskLog,
    ) -> Result<Option<Step>, Fatal> {
        let task_id = session.ws.task_id.clone();
        for step in 1..=u64::from(self.config.step_limit) {
            session.step = step;
            let mut attempts = 0;
            let (raw, seq) = loop {
                self.faults.hit(&format!("step:{step}:llm"))?;
                let request = LlmRequest {
                    messages: messages.clone(),
                    model: self.config.model.clone(),
                    max_output_tokens: self.config.max_output_tokens,
                };
                let ex = self
                    .gateway
                    .complete(request, CallOrigin::Orchestrator, &task_id)
                    .map_err(Fatal::Gateway)?;
                messages.push(ChatMessage::new(Role::Assistant, ex.completion.clone()));
                match parse_action(&ex.completion) {
                    Ok(raw) => break (raw, ex.sequence),
                    Err(e) => {
                        attempts += 1;
                        if attempts > self.config.reprompt_limit {
                            return Err(Fatal::Parse(e.to_string()));
                        }
                        messages.push(ChatMessage::new(
                            Role::System,
                            prompt::reprompt_message(&e.to_string()),
                        ));
                    }
                }
            };
            self.faults.hit(&format!("step:{step}:action"))?;
            let outcome = match MetaAction::from_raw(&raw) {
                Ok(a) => session.execute(a)?,
                Err(msg) => Step::Continue(err_obs("InvalidArguments", msg)),
            };
            let observation = match &outcome {
                Step::Continue(o) => o.clone(),
                Step::Finish {
                    answer,
                    saved,
                    skipped,
                } => {
                    let mut s = format!("Finished. Answer: {answer}");
                    for p in saved {
                        s.push_str(&format!("\nSaved {} v{}", p.name, p.version));
                    }
                    for k in skipped {
                        s.push_str(&format!("\nSkipped {}: {}", k.name, k.reason));
                    }
                    s
                }
            };
            let RawAction { action, args } = raw;
            log.append(&StepRecord {
                kind: StepRecord::KIND.into(),
                step,
                action: action.clone(),
                args: args.clone(),
                observation_sha256: sha256_hex(observation.as_bytes()),
                exchange_seq: seq,
            })
            .map_err(|e| Fatal::Io(format!("history log: {e}")))?;
            steps.push(MetaStep {
                step_index: step,
                action,
                arguments: args,
                observation: observation.clone(),
                exchange_seq: seq,
            });
            if let Step::Finish { .. } = outcome {
                return Ok(Some(outcome));
            }
            self.faults.hit(&format!("step:{step}:observed"))?;
            messages.push(ChatMessage::new(
                Role::User,
                prompt::observation_message(&observation),
            ));
        }
        Ok(None)
    }
}
