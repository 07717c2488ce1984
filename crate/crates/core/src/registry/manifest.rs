//! `SKILL.md` manifests: the in-memory form and the markdown rendering.
//!
//! A manifest renders to a fenced metadata block followed by exactly five
//! level-2 sections (`Description`, `Parameters`, `Returns`, `Usage`,
//! `Changelog`) in that order. [`parse_skill_md`] is strict: it rejects
//! missing, duplicated, reordered or unknown sections and unknown metadata
//! keys, so anything it accepts renders back to the same bytes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest accepted skill name.
pub const MAX_NAME_LEN: usize = 64;

const SECTIONS: [&str; 5] = ["Description", "Parameters", "Returns", "Usage", "Changelog"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkillKind {
    Meta,
    Tool,
    Subagent,
}

impl SkillKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SkillKind::Meta => "meta",
            SkillKind::Tool => "tool",
            SkillKind::Subagent => "subagent",
        }
    }
}

impl fmt::Display for SkillKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillKind {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "meta" => Ok(SkillKind::Meta),
            "tool" => Ok(SkillKind::Tool),
            "subagent" => Ok(SkillKind::Subagent),
            other => Err(ManifestError::Syntax(format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterDoc {
    pub name: String,
    pub semantic_type: String,
    pub required: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnsDoc {
    pub semantic_type: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangelogEntry {
    pub version: u32,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillManifest {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParameterDoc>,
    pub returns: ReturnsDoc,
    pub usage: String,
    pub version: u32,
    pub changelog: Vec<ChangelogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    /// A field holds a value the format cannot carry.
    #[error("invalid manifest field `{field}`: {reason}")]
    Field { field: String, reason: String },
    /// The document does not follow the `SKILL.md` layout.
    #[error("malformed SKILL.md: {0}")]
    Syntax(String),
}

impl ManifestError {
    fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ManifestError::Field {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Name of the offending field, when the error concerns one.
    pub fn field_name(&self) -> Option<&str> {
        match self {
            ManifestError::Field { field, .. } => Some(field),
            ManifestError::Syntax(_) => None,
        }
    }
}

/// Lowercase, then check against the identifier grammar.
pub fn normalize_name(raw: &str) -> Result<String, ManifestError> {
    let name = raw.trim().to_ascii_lowercase();
    validate_name(&name)?;
    Ok(name)
}

pub fn validate_name(name: &str) -> Result<(), ManifestError> {
    if name.is_empty() {
        return Err(ManifestError::field("name", "empty"));
    }
    if name.len() > MAX_NAME_LEN {
        return Err(ManifestError::field(
            "name",
            format!("longer than {MAX_NAME_LEN} characters"),
        ));
    }
    let mut chars = name.chars();
    let first = chars.next().unwrap_or_default();
    if !(first.is_ascii_lowercase() || first.is_ascii_digit()) {
        return Err(ManifestError::field(
            "name",
            "must start with a lowercase letter or digit",
        ));
    }
    if let Some(bad) = name
        .chars()
        .find(|c| !(c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '-' || *c == '_'))
    {
        return Err(ManifestError::field(
            "name",
            format!("character `{bad}` not allowed"),
        ));
    }
    Ok(())
}

fn is_section_header(line: &str) -> bool {
    line == "##" || line.starts_with("## ")
}

/// Multi-line free text: trimmed, no carriage returns, no line that would
/// read as a section header.
fn validate_block(field: &str, text: &str, allow_empty: bool) -> Result<(), ManifestError> {
    if !allow_empty && text.is_empty() {
        return Err(ManifestError::field(field, "empty"));
    }
    if text.trim() != text {
        return Err(ManifestError::field(
            field,
            "leading or trailing whitespace",
        ));
    }
    if text.contains('\r') {
        return Err(ManifestError::field(field, "carriage return"));
    }
    if text.lines().any(is_section_header) {
        return Err(ManifestError::field(
            field,
            "contains a line that reads as a section header",
        ));
    }
    Ok(())
}

fn validate_line(field: &str, text: &str) -> Result<(), ManifestError> {
    if text.is_empty() {
        return Err(ManifestError::field(field, "empty"));
    }
    if text.trim() != text {
        return Err(ManifestError::field(
            field,
            "leading or trailing whitespace",
        ));
    }
    if text.contains(['\n', '\r']) {
        return Err(ManifestError::field(field, "must be a single line"));
    }
    Ok(())
}

fn validate_semantic_type(field: &str, ty: &str) -> Result<(), ManifestError> {
    validate_line(field, ty)?;
    if ty.contains(['(', ')', ':']) {
        return Err(ManifestError::field(
            field,
            "semantic type may not contain `(`, `)` or `:`",
        ));
    }
    Ok(())
}

impl SkillManifest {
    /// Checks every field against what `SKILL.md` can represent.
    pub fn validate(&self) -> Result<(), ManifestError> {
        validate_name(&self.name)?;
        validate_block("description", &self.description, false)?;
        if self.version == 0 {
            return Err(ManifestError::field("version", "must be positive"));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.parameters {
            if p.name.is_empty()
                || !p
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(ManifestError::field(
                    "parameters",
                    format!("bad parameter name `{}`", p.name),
                ));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(ManifestError::field(
                    "parameters",
                    format!("duplicate parameter `{}`", p.name),
                ));
            }
            validate_semantic_type("parameters", &p.semantic_type)?;
            validate_line("parameters", &p.description)?;
        }
        validate_semantic_type("returns", &self.returns.semantic_type)?;
        validate_line("returns", &self.returns.description)?;
        validate_block("usage", &self.usage, false)?;
        if !self.usage.contains(&self.name) {
            return Err(ManifestError::field(
                "usage",
                "must contain at least one invocation example naming the skill",
            ));
        }
        let mut last = 0;
        for entry in &self.changelog {
            if entry.version <= last || entry.version > self.version {
                return Err(ManifestError::field(
                    "changelog",
                    format!(
                        "entry v{} out of order or beyond version {}",
                        entry.version, self.version
                    ),
                ));
            }
            last = entry.version;
            validate_line("changelog", &entry.summary)?;
        }
        Ok(())
    }

    pub fn one_line_description(&self) -> &str {
        self.description.lines().next().unwrap_or_default()
    }

    /// Per-skill timeout override, written in the usage text as
    /// `timeout_secs: <n>`.
    pub fn timeout_override(&self) -> Option<std::time::Duration> {
        self.usage.lines().find_map(|line| {
            let rest = line.trim().strip_prefix("timeout_secs:")?;
            rest.trim()
                .parse::<u64>()
                .ok()
                .map(std::time::Duration::from_secs)
        })
    }
}

/// Renders the manifest as a `SKILL.md` document.
pub fn render_skill_md(manifest: &SkillManifest, kind: SkillKind) -> String {
    let mut out = String::new();
    out.push_str("---\n");
    out.push_str(&format!("name: {}\n", manifest.name));
    out.push_str(&format!("version: {}\n", manifest.version));
    out.push_str(&format!("kind: {kind}\n"));
    out.push_str("---\n");

    let params: Vec<String> = manifest
        .parameters
        .iter()
        .map(|p| {
            format!(
                "- {} ({}, {}): {}",
                p.name,
                p.semantic_type,
                if p.required { "required" } else { "optional" },
                p.description
            )
        })
        .collect();
    let changelog: Vec<String> = manifest
        .changelog
        .iter()
        .map(|c| format!("- v{}: {}", c.version, c.summary))
        .collect();
    let bodies = [
        manifest.description.clone(),
        params.join("\n"),
        format!(
            "{}: {}",
            manifest.returns.semantic_type, manifest.returns.description
        ),
        manifest.usage.clone(),
        changelog.join("\n"),
    ];
    for (title, body) in SECTIONS.iter().zip(bodies) {
        out.push_str(&format!("\n## {title}\n"));
        if !body.is_empty() {
            out.push('\n');
            out.push_str(&body);
            out.push('\n');
        }
    }
    out
}

/// Parses a `SKILL.md` document.
pub fn parse_skill_md(text: &str) -> Result<(SkillManifest, SkillKind), ManifestError> {
    let syntax = |m: &str| ManifestError::Syntax(m.to_string());
    let mut lines = text.lines();
    if lines.next() != Some("---") {
        return Err(syntax("document must begin with `---`"));
    }

    let mut name = None;
    let mut version = None;
    let mut kind = None;
    let mut closed = false;
    for line in lines.by_ref() {
        if line == "---" {
            closed = true;
            break;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| ManifestError::Syntax(format!("bad metadata line `{line}`")))?;
        let value = value.trim();
        let slot_taken = match key.trim() {
            "name" => name.replace(value.to_string()).is_some(),
            "version" => {
                let v = value.parse::<u32>().map_err(|_| {
                    ManifestError::field("version", format!("`{value}` is not an integer"))
                })?;
                version.replace(v).is_some()
            }
            "kind" => kind.replace(value.parse::<SkillKind>()?).is_some(),
            other => {
                return Err(ManifestError::Syntax(format!(
                    "unknown metadata key `{other}`"
                )))
            }
        };
        if slot_taken {
            return Err(ManifestError::Syntax(format!(
                "duplicate metadata key `{}`",
                key.trim()
            )));
        }
    }
    if !closed {
        return Err(syntax("unterminated metadata block"));
    }
    let name = name.ok_or_else(|| syntax("missing metadata key `name`"))?;
    let version = version.ok_or_else(|| syntax("missing metadata key `version`"))?;
    let kind = kind.ok_or_else(|| syntax("missing metadata key `kind`"))?;

    // Split the remainder into level-2 sections.
    let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
    for line in lines {
        if is_section_header(line) {
            let title = line.trim_start_matches('#').trim().to_string();
            sections.push((title, Vec::new()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push(line);
        } else if !line.trim().is_empty() {
            return Err(syntax("text before the first section"));
        }
    }
    let titles: Vec<&str> = sections.iter().map(|(t, _)| t.as_str()).collect();
    if titles != SECTIONS {
        for expected in SECTIONS {
            if !titles.contains(&expected) {
                return Err(ManifestError::Syntax(format!(
                    "missing section `## {expected}`"
                )));
            }
        }
        return Err(ManifestError::Syntax(format!(
            "sections must be exactly {SECTIONS:?} in order, found {titles:?}"
        )));
    }
    let body = |i: usize| sections[i].1.join("\n").trim().to_string();

    let description = body(0);
    let parameters = body(1)
        .lines()
        .map(parse_parameter)
        .collect::<Result<Vec<_>, _>>()?;
    let returns_text = body(2);
    let (ret_ty, ret_desc) = returns_text
        .split_once(": ")
        .ok_or_else(|| syntax("Returns section must read `<type>: <description>`"))?;
    let usage = body(3);
    let changelog = body(4)
        .lines()
        .map(parse_changelog_entry)
        .collect::<Result<Vec<_>, _>>()?;

    let manifest = SkillManifest {
        name,
        description,
        parameters,
        returns: ReturnsDoc {
            semantic_type: ret_ty.to_string(),
            description: ret_desc.to_string(),
        },
        usage,
        version,
        changelog,
    };
    manifest.validate()?;
    Ok((manifest, kind))
}

fn parse_parameter(line: &str) -> Result<ParameterDoc, ManifestError> {
    let bad = || ManifestError::Syntax(format!("bad parameter bullet `{line}`"));
    let rest = line.strip_prefix("- ").ok_or_else(bad)?;
    let (name, rest) = rest.split_once(" (").ok_or_else(bad)?;
    let (ty, required, description) = [("required", true), ("optional", false)]
        .iter()
        .filter_map(|(flag, required)| {
            let marker = format!(", {flag}): ");
            rest.find(&marker)
                .map(|at| (at, &rest[..at], *required, &rest[at + marker.len()..]))
        })
        .min_by_key(|(at, ..)| *at)
        .map(|(_, ty, req, desc)| (ty, req, desc))
        .ok_or_else(bad)?;
    Ok(ParameterDoc {
        name: name.to_string(),
        semantic_type: ty.to_string(),
        required,
        description: description.to_string(),
    })
}

fn parse_changelog_entry(line: &str) -> Result<ChangelogEntry, ManifestError> {
    let bad = || ManifestError::Syntax(format!("bad changelog bullet `{line}`"));
    let rest = line.strip_prefix("- v").ok_or_else(bad)?;
    let (num, summary) = rest.split_once(": ").ok_or_else(bad)?;
    Ok(ChangelogEntry {
        version: num.parse().map_err(|_| bad())?,
        summary: summary.to_string(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn sample(name: &str) -> SkillManifest {
        SkillManifest {
            name: name.to_string(),
            description: "Transcribes audio files to text.".into(),
            parameters: vec![ParameterDoc {
                name: "query".into(),
                semantic_type: "path".into(),
                required: true,
                description: "Path of the audio file.".into(),
            }],
            returns: ReturnsDoc {
                semantic_type: "object".into(),
                description: "{\"transcript\": text}".into(),
            },
            usage: format!("python3 agent.py --query \"clip.wav\"  # {name}"),
            version: 1,
            changelog: vec![],
        }
    }

    #[test]
    fn renders_expected_layout() {
        let text = render_skill_md(&sample("audio-transcriber"), SkillKind::Subagent);
        assert!(text.starts_with("---\nname: audio-transcriber\nversion: 1\nkind: subagent\n---\n"));
        assert!(
            text.contains("\n## Parameters\n\n- query (path, required): Path of the audio file.\n")
        );
        assert!(text.ends_with("## Changelog\n"));
    }

    #[test]
    fn rejects_unknown_metadata_key() {
        let text = render_skill_md(&sample("x"), SkillKind::Subagent).replacen(
            "kind: subagent\n",
            "kind: subagent\nauthor: me\n",
            1,
        );
        assert!(
            matches!(parse_skill_md(&text), Err(ManifestError::Syntax(m)) if m.contains("author"))
        );
    }

    #[test]
    fn rejects_missing_section() {
        let text = render_skill_md(&sample("x"), SkillKind::Subagent).replace("## Returns\n", "");
        let err = parse_skill_md(&text).unwrap_err();
        assert!(err.to_string().contains("Returns"), "{err}");
    }

    #[test]
    fn rejects_reordered_sections() {
        let text = render_skill_md(&sample("x"), SkillKind::Subagent)
            .replace("## Usage", "## TMP")
            .replace("## Returns", "## Usage")
            .replace("## TMP", "## Returns");
        assert!(parse_skill_md(&text).is_err());
    }

    #[test]
    fn name_grammar() {
        assert_eq!(
            normalize_name("Audio-Transcriber").unwrap(),
            "audio-transcriber"
        );
        assert!(normalize_name("has space").is_err());
        assert!(normalize_name("../up").is_err());
        assert!(normalize_name(&"a".repeat(65)).is_err());
        assert!(normalize_name(&"a".repeat(64)).is_ok());
    }

    #[test]
    fn usage_needs_an_example() {
        let mut m = sample("x-tool");
        m.usage = "call it".into();
        assert_eq!(m.validate().unwrap_err().field_name(), Some("usage"));
    }

    #[test]
    fn timeout_override_parsed_from_usage() {
        let mut m = sample("slow");
        m.usage = "slow --query a\ntimeout_secs: 7".into();
        assert_eq!(
            m.timeout_override(),
            Some(std::time::Duration::from_secs(7))
        );
    }

    prop_compose! {
        fn line()(s in "[A-Za-z0-9][A-Za-z0-9 ,.{}\"'_/-]{0,30}[A-Za-z0-9.]") -> String { s }
    }

    prop_compose! {
        fn sem_type()(s in "[a-z][a-z ,{}_]{0,12}[a-z]") -> String { s }
    }

    prop_compose! {
        pub(crate) fn arb_manifest()(
            name in "[a-z][a-z0-9_-]{0,20}",
            description in proptest::collection::vec(line(), 1..4),
            params in proptest::collection::vec((sem_type(), any::<bool>(), line()), 0..4),
            ret in (sem_type(), line()),
            usage_extra in proptest::collection::vec(line(), 0..3),
            version in 1u32..9,
            log in proptest::collection::vec(line(), 0..8),
        ) -> SkillManifest {
            let parameters = params.into_iter().enumerate().map(|(i, (ty, req, d))| ParameterDoc {
                name: format!("p{i}"),
                semantic_type: ty,
                required: req,
                description: d,
            }).collect();
            let mut usage = vec![format!("{name} --query \"example\"")];
            usage.extend(usage_extra);
            let changelog = (2..=version).zip(log).map(|(v, s)| ChangelogEntry { version: v, summary: s }).collect();
            SkillManifest {
                description: description.join("\n"),
                parameters,
                returns: ReturnsDoc { semantic_type: ret.0, description: ret.1 },
                usage: usage.join("\n"),
                version,
                changelog,
                name,
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(m in arb_manifest(), kind in prop_oneof![Just(SkillKind::Meta), Just(SkillKind::Tool), Just(SkillKind::Subagent)]) {
            prop_assert!(m.validate().is_ok(), "{:?}", m.validate());
            let text = render_skill_md(&m, kind);
            let (back, back_kind) = parse_skill_md(&text).unwrap();
            prop_assert_eq!(back, m);
            prop_assert_eq!(back_kind, kind);
        }
    }
}
