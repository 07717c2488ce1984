//! The fixed meta and tool skills compiled into the runtime.

use super::manifest::{ParameterDoc, ReturnsDoc, SkillKind, SkillManifest};

pub const WEB_SEARCH: &str = "web_search";
pub const WEB_READING: &str = "web_reading";
pub const BROWSER_AUTOMATION: &str = "browser_automation";
pub const SHELL_COMMAND: &str = "shell_command";

pub const TOOL_NAMES: [&str; 4] = [WEB_SEARCH, WEB_READING, BROWSER_AUTOMATION, SHELL_COMMAND];

pub const META_NAMES: [&str; 7] = [
    "create_subagent",
    "get_skill_description",
    "run_subagent",
    "modify_subagent",
    "finish",
    "list_saved_subagents",
    "view_subagent_code",
];

struct Spec {
    name: &'static str,
    kind: SkillKind,
    description: &'static str,
    params: &'static [(&'static str, &'static str, bool, &'static str)],
    returns: (&'static str, &'static str),
    usage: &'static str,
}

const SPECS: &[Spec] = &[
    Spec {
        name: "create_subagent",
        kind: SkillKind::Meta,
        description: "Creates a new subagent script with its manifest and tool grants, staged in the task workspace.",
        params: &[
            ("name", "identifier", true, "Lowercase name of the new subagent."),
            ("code", "source text", true, "Full script source."),
            ("tools", "list of tool names", false, "Tool skills the subagent may call."),
            ("description", "text", true, "What the subagent does."),
            ("parameters", "list of parameter docs", false, "Documented inputs."),
            ("returns", "return doc", false, "Documented output."),
            ("usage", "text", false, "Invocation example."),
        ],
        returns: ("text", "Confirmation naming the staged subagent and its grants."),
        usage: "{\"action\": \"create_subagent\", \"args\": {\"name\": \"pdf-reader\", \"code\": \"...\", \"tools\": [\"shell_command\"], \"description\": \"Reads PDFs.\"}}",
    },
    Spec {
        name: "get_skill_description",
        kind: SkillKind::Meta,
        description: "Retrieves the SKILL.md documentation of any skill, including parameters and return format.",
        params: &[("name", "identifier", true, "Skill to describe.")],
        returns: ("text", "Rendered SKILL.md."),
        usage: "{\"action\": \"get_skill_description\", \"args\": {\"name\": \"web_search\"}}",
    },
    Spec {
        name: "run_subagent",
        kind: SkillKind::Meta,
        description: "Executes a staged or saved subagent with a query and reports its result or failure.",
        params: &[
            ("name", "identifier", true, "Subagent to run."),
            ("query", "text", true, "Query delivered to the subagent."),
        ],
        returns: ("text", "Outcome status, result payload, and stderr tail on failure."),
        usage: "{\"action\": \"run_subagent\", \"args\": {\"name\": \"audio-transcriber\", \"query\": \"clip.wav\"}}",
    },
    Spec {
        name: "modify_subagent",
        kind: SkillKind::Meta,
        description: "Stages a modified version of a saved or staged subagent; the library changes only when the task finishes and saves it.",
        params: &[
            ("name", "identifier", true, "Subagent to modify."),
            ("code", "source text", true, "Replacement script source."),
            ("reason", "text", true, "Changelog summary of the change."),
            ("description", "text", false, "Replacement description."),
            ("tools", "list of tool names", false, "Replacement tool grants."),
        ],
        returns: ("text", "Confirmation naming the staged version."),
        usage: "{\"action\": \"modify_subagent\", \"args\": {\"name\": \"readme-generator\", \"code\": \"...\", \"reason\": \"use regex extraction\"}}",
    },
    Spec {
        name: "finish",
        kind: SkillKind::Meta,
        description: "Completes the task with an answer and optionally saves staged subagents to the library.",
        params: &[
            ("answer", "text", true, "Final answer for the user."),
            ("save", "list of identifiers", false, "Staged subagents to persist."),
        ],
        returns: ("text", "Saved skills and their versions."),
        usage: "{\"action\": \"finish\", \"args\": {\"answer\": \"done\", \"save\": [\"audio-transcriber\"]}}",
    },
    Spec {
        name: "list_saved_subagents",
        kind: SkillKind::Meta,
        description: "Lists all previously saved reusable subagents with one-line descriptions.",
        params: &[],
        returns: ("text", "One line per saved subagent with its version."),
        usage: "{\"action\": \"list_saved_subagents\", \"args\": {}}",
    },
    Spec {
        name: "view_subagent_code",
        kind: SkillKind::Meta,
        description: "Shows the current source code of a saved or staged subagent.",
        params: &[("name", "identifier", true, "Subagent to inspect.")],
        returns: ("source text", "Script source of the head version."),
        usage: "{\"action\": \"view_subagent_code\", \"args\": {\"name\": \"readme-generator\"}}",
    },
    Spec {
        name: WEB_SEARCH,
        kind: SkillKind::Tool,
        description: "Searches the web and returns ranked results.",
        params: &[
            ("query", "text", true, "Search query."),
            ("max_results", "count", false, "Upper bound on returned results, default 10."),
        ],
        returns: ("list of objects", "Entries with title, url and snippet fields."),
        usage: "call_tool(\"web_search\", {\"query\": \"population of Japan\", \"max_results\": 3})",
    },
    Spec {
        name: WEB_READING,
        kind: SkillKind::Tool,
        description: "Fetches a web page and extracts its main text content.",
        params: &[("url", "url", true, "Absolute http or https URL.")],
        returns: ("object", "Fields content_text and title."),
        usage: "call_tool(\"web_reading\", {\"url\": \"https://example.org/\"})",
    },
    Spec {
        name: BROWSER_AUTOMATION,
        kind: SkillKind::Tool,
        description: "Drives a browser through a scripted list of actions.",
        params: &[("actions", "list of action objects", true, "Actions such as open, click or type.")],
        returns: ("object", "Fields status and observations."),
        usage: "call_tool(\"browser_automation\", {\"actions\": [{\"action\": \"open\", \"url\": \"https://example.org/\"}]})",
    },
    Spec {
        name: SHELL_COMMAND,
        kind: SkillKind::Tool,
        description: "Runs a shell command inside the task workspace after checking it against the destructive-command rules.",
        params: &[
            ("command", "text", true, "Command line passed to sh -c."),
            ("cwd", "path", false, "Working directory inside the workspace, default out/."),
        ],
        returns: ("object", "Fields exit_code, stdout and stderr."),
        usage: "call_tool(\"shell_command\", {\"command\": \"ls -la\"})",
    },
];

fn build(spec: &Spec) -> SkillManifest {
    SkillManifest {
        name: spec.name.to_string(),
        description: spec.description.to_string(),
        parameters: spec
            .params
            .iter()
            .map(|(name, ty, required, desc)| ParameterDoc {
                name: name.to_string(),
                semantic_type: ty.to_string(),
                required: *required,
                description: desc.to_string(),
            })
            .collect(),
        returns: ReturnsDoc {
            semantic_type: spec.returns.0.to_string(),
            description: spec.returns.1.to_string(),
        },
        usage: spec.usage.to_string(),
        version: 1,
        changelog: Vec::new(),
    }
}

/// All built-in skills, meta skills first, in declaration order.
pub fn builtin_skills() -> Vec<(SkillKind, SkillManifest)> {
    SPECS.iter().map(|s| (s.kind, build(s))).collect()
}

pub fn lookup(name: &str) -> Option<(SkillKind, SkillManifest)> {
    SPECS
        .iter()
        .find(|s| s.name == name)
        .map(|s| (s.kind, build(s)))
}

pub fn is_tool(name: &str) -> bool {
    TOOL_NAMES.contains(&name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::manifest::{parse_skill_md, render_skill_md};

    #[test]
    fn eleven_builtins_all_valid() {
        let all = builtin_skills();
        assert_eq!(all.len(), 11);
        for (kind, m) in &all {
            m.validate().unwrap_or_else(|e| panic!("{}: {e}", m.name));
            let (back, k) = parse_skill_md(&render_skill_md(m, *kind)).unwrap();
            assert_eq!(&back, m);
            assert_eq!(k, *kind);
        }
        assert_eq!(all.iter().filter(|(k, _)| *k == SkillKind::Meta).count(), 7);
        assert_eq!(all.iter().filter(|(k, _)| *k == SkillKind::Tool).count(), 4);
    }
}
