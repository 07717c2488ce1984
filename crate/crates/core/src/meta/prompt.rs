//! Orchestrator prompt construction.

use crate::gateway::{ChatMessage, Role};
use crate::registry::{SkillKind, SkillSummary};

pub const SYSTEM_PROMPT: &str = "\
You orchestrate a task by creating, running and improving subagents. \
Subagents are scripts that read a query, may call the tools they were \
granted, and report one result.

Reply on every turn with exactly one fenced ```json block of the form
{\"action\": <name>, \"args\": {...}}
Text outside the block is ignored.

Actions:
- list_saved_subagents {}: saved subagents with one-line descriptions.
- get_skill_description {name}: the full SKILL.md of any skill.
- view_subagent_code {name}: source of a staged or saved subagent.
- create_subagent {name, code, description, tools?, parameters?, returns?, usage?}: \
stage a new subagent in this task's workspace. tools lists the tool skills it may call.
- run_subagent {name, query}: run a staged or saved subagent and observe its result.
- modify_subagent {name, code, reason, description?, tools?, parameters?, returns?, usage?}: \
stage a changed version; reason becomes its changelog entry.
- finish {answer, save}: end the task; save lists staged subagents to keep in the library.

Subagent protocol: the script reads its query as the first stdin line \
{\"verb\":\"query\",\"payload\":{\"query\":...}}, requests tools with \
{\"id\":n,\"verb\":\"tool_call\",\"tool\":...,\"args\":{...}} on stdout and reads the \
response line, and ends with {\"verb\":\"result\",\"payload\":...}. \
Logging goes to stderr only.";

/// Names plus one-line descriptions, grouped by kind.
pub fn skill_listing(skills: &[SkillSummary]) -> String {
    let mut out = String::new();
    for (kind, title) in [
        (SkillKind::Meta, "Meta skills"),
        (SkillKind::Tool, "Tool skills"),
        (SkillKind::Subagent, "Saved subagents"),
    ] {
        out.push_str(title);
        out.push_str(":\n");
        let mut any = false;
        for s in skills.iter().filter(|s| s.kind == kind) {
            any = true;
            if kind == SkillKind::Subagent {
                out.push_str(&format!(
                    "- {} (v{}): {}\n",
                    s.name, s.version, s.description
                ));
            } else {
                out.push_str(&format!("- {}: {}\n", s.name, s.description));
            }
        }
        if !any {
            out.push_str("- (none)\n");
        }
    }
    out
}

pub fn task_message(query: &str, listing: &str) -> String {
    format!("Task: {query}\n\nAvailable skills:\n{listing}")
}

pub fn observation_message(observation: &str) -> String {
    format!("Observation: {observation}")
}

pub fn reprompt_message(error: &str) -> String {
    format!(
        "Your last reply could not be parsed: {error}. Reply with exactly one fenced ```json \
         block containing {{\"action\": <meta skill>, \"args\": {{...}}}}."
    )
}

pub fn initial_messages(query: &str, listing: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::new(Role::System, SYSTEM_PROMPT),
        ChatMessage::new(Role::User, task_message(query, listing)),
    ]
}
