//! Parsing one orchestrator turn into a meta-skill action.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::registry::builtin::META_NAMES;
use crate::registry::{ParameterDoc, ReturnsDoc};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionParseError {
    #[error("no fenced JSON block found")]
    NoBlock,
    #[error("found {0} fenced JSON blocks; exactly one is allowed")]
    MultipleBlocks(usize),
    #[error("fenced block is not closed")]
    Unterminated,
    #[error("block is not valid JSON: {0}")]
    Json(String),
    #[error("block must be an object with a string `action` and an object `args`")]
    Shape,
    #[error("`{0}` is not a meta skill")]
    UnknownAction(String),
}

/// The raw `{"action", "args"}` pair from a completion.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAction {
    pub action: String,
    pub args: Value,
}

/// Finds exactly one fenced block tagged `json` (or untagged) and reads the
/// action object from it. Prose around the block is ignored.
pub fn parse_action(completion: &str) -> Result<RawAction, ActionParseError> {
    let mut blocks = Vec::new();
    let mut current: Option<(bool, Vec<&str>)> = None;
    for line in completion.lines() {
        let trimmed = line.trim();
        match current.as_mut() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    let info = info.trim();
                    current = Some((
                        info.is_empty() || info.eq_ignore_ascii_case("json"),
                        Vec::new(),
                    ));
                }
            }
            Some((is_json, body)) => {
                if trimmed == "```" {
                    if *is_json {
                        blocks.push(body.join("\n"));
                    }
                    current = None;
                } else {
                    body.push(line);
                }
            }
        }
    }
    if current.is_some() {
        return Err(ActionParseError::Unterminated);
    }
    let block = match blocks.len() {
        0 => return Err(ActionParseError::NoBlock),
        1 => blocks.pop().unwrap(),
        n => return Err(ActionParseError::MultipleBlocks(n)),
    };
    let value: Value =
        serde_json::from_str(&block).map_err(|e| ActionParseError::Json(e.to_string()))?;
    let obj = value.as_object().ok_or(ActionParseError::Shape)?;
    let action = obj
        .get("action")
        .and_then(Value::as_str)
        .ok_or(ActionParseError::Shape)?;
    let args = match obj.get("args") {
        None | Some(Value::Null) => Value::Object(Default::default()),
        Some(v @ Value::Object(_)) => v.clone(),
        Some(_) => return Err(ActionParseError::Shape),
    };
    if !META_NAMES.contains(&action) {
        return Err(ActionParseError::UnknownAction(action.to_string()));
    }
    Ok(RawAction {
        action: action.to_string(),
        args,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamArg {
    pub name: String,
    #[serde(rename = "type", default = "default_type")]
    pub semantic_type: String,
    #[serde(default = "yes")]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnsArg {
    #[serde(rename = "type", default = "default_type")]
    pub semantic_type: String,
    pub description: String,
}

fn default_type() -> String {
    "text".into()
}

fn yes() -> bool {
    true
}

impl From<ParamArg> for ParameterDoc {
    fn from(p: ParamArg) -> Self {
        let description = if p.description.trim().is_empty() {
            format!("The {} argument.", p.name)
        } else {
            p.description.trim().to_string()
        };
        ParameterDoc {
            name: p.name,
            semantic_type: p.semantic_type.trim().to_string(),
            required: p.required,
            description,
        }
    }
}

impl From<ReturnsArg> for ReturnsDoc {
    fn from(r: ReturnsArg) -> Self {
        ReturnsDoc {
            semantic_type: r.semantic_type.trim().to_string(),
            description: r.description.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateArgs {
    pub name: String,
    pub code: String,
    #[serde(default)]
    pub tools: Vec<String>,
    pub description: String,
    #[serde(default)]
    pub parameters: Option<Vec<ParamArg>>,
    #[serde(default)]
    pub returns: Option<ReturnsArg>,
    #[serde(default)]
    pub usage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModifyArgs {
    pub name: String,
    pub code: String,
    pub reason: String,
    #[serde(default)]
    pub tools: Option<Vec<String>>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub parameters: Option<Vec<ParamArg>>,
    #[serde(default)]
    pub returns: Option<ReturnsArg>,
    #[serde(default)]
    pub usage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinishArgs {
    #[serde(default)]
    pub answer: String,
    #[serde(default)]
    pub save: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct NameArg {
    name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunArgs {
    name: String,
    #[serde(default)]
    query: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetaAction {
    CreateSubagent(CreateArgs),
    GetSkillDescription { name: String },
    RunSubagent { name: String, query: String },
    ModifySubagent(ModifyArgs),
    Finish(FinishArgs),
    ListSavedSubagents,
    ViewSubagentCode { name: String },
}

fn typed<T: DeserializeOwned>(action: &str, args: &Value) -> Result<T, String> {
    serde_json::from_value(args.clone()).map_err(|e| format!("bad arguments for {action}: {e}"))
}

impl MetaAction {
    /// Typed arguments; errors here become observations, not re-prompts.
    pub fn from_raw(raw: &RawAction) -> Result<MetaAction, String> {
        let a = raw.action.as_str();
        Ok(match a {
            "create_subagent" => MetaAction::CreateSubagent(typed(a, &raw.args)?),
            "get_skill_description" => MetaAction::GetSkillDescription {
                name: typed::<NameArg>(a, &raw.args)?.name,
            },
            "run_subagent" => {
                let r: RunArgs = typed(a, &raw.args)?;
                MetaAction::RunSubagent {
                    name: r.name,
                    query: r.query,
                }
            }
            "modify_subagent" => MetaAction::ModifySubagent(typed(a, &raw.args)?),
            "finish" => MetaAction::Finish(typed(a, &raw.args)?),
            "list_saved_subagents" => MetaAction::ListSavedSubagents,
            "view_subagent_code" => MetaAction::ViewSubagentCode {
                name: typed::<NameArg>(a, &raw.args)?.name,
            },
            other => return Err(format!("`{other}` is not a meta skill")),
        })
    }
}
