//! Destructive-command screening for `shell_command`.

use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The rule file compiled into the runtime and shipped in every bundle.
pub const BUILTIN_RULES: &str = include_str!("../../data/safety_rules.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum SafetyVerdict {
    Allow,
    Deny { rule: String, fragment: String },
}

impl SafetyVerdict {
    pub fn is_allow(&self) -> bool {
        matches!(self, SafetyVerdict::Allow)
    }
}

impl fmt::Display for SafetyVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafetyVerdict::Allow => f.write_str("allow"),
            SafetyVerdict::Deny { rule, fragment } => {
                write!(f, "denied by rule `{rule}` (matched `{fragment}`)")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("safety rules line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("reading safety rules: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
struct Rule {
    name: String,
    pattern: Regex,
}

#[derive(Debug, Clone)]
pub struct SafetyRules {
    rules: Vec<Rule>,
}

impl SafetyRules {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_RULES).expect("built-in safety rules parse")
    }

    pub fn load(path: &Path) -> Result<Self, RulesError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, RulesError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| RulesError::Parse {
                line: idx + 1,
                detail,
            };
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("deny"), Some(name), Some(pattern)) if !pattern.trim().is_empty() => {
                    let pattern = Regex::new(pattern.trim()).map_err(|e| err(e.to_string()))?;
                    rules.push(Rule {
                        name: name.to_string(),
                        pattern,
                    });
                }
                _ => {
                    return Err(err(format!(
                        "expected `deny <name> <pattern>`, got `{line}`"
                    )))
                }
            }
        }
        Ok(SafetyRules { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// First matching rule denies; no match allows.
    pub fn check(&self, command: &str) -> SafetyVerdict {
        for rule in &self.rules {
            if let Some(caps) = rule.pattern.captures(command) {
                let fragment = caps
                    .get(1)
                    .or_else(|| caps.get(0))
                    .map_or("", |m| m.as_str());
                return SafetyVerdict::Deny {
                    rule: rule.name.clone(),
                    fragment: fragment.to_string(),
                };
            }
        }
        SafetyVerdict::Allow
    }
}
