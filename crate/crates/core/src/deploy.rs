//! Exporting saved subagents as relocatable bundles.
//!
//! ```text
//! <bundle>/index.json
//! <bundle>/ONBOARDING.md
//! <bundle>/sdk/                      SDK copy, safety_rules.txt, VERSION
//! <bundle>/skills/<name>/SKILL.md
//! <bundle>/skills/<name>/agent.<ext>
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::safety::BUILTIN_RULES;
use crate::fsutil::{copy_dir, is_empty_dir};
use crate::registry::{parse_skill_md, RegistryError, SkillManifest};
use crate::runner::{standalone_execute, RunnerConfig};
use crate::runtime::Runtime;

pub const FORMAT_VERSION: u32 = 1;
pub const SDK_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPRODUCIBLE_EPOCH: &str = "1970-01-01T00:00:00Z";
pub const ONBOARDING_FILE: &str = "ONBOARDING.md";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum DeployError {
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("`{0}` is only staged in a task workspace; finish must save it before export")]
    StagedOnlySkill(String),
    #[error("destination {0} is not empty")]
    DestinationNotEmpty(PathBuf),
    #[error("bundle invalid: {0}")]
    BundleInvalid(String),
    #[error(transparent)]
    Registry(RegistryError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub version: u32,
    pub entry: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleIndex {
    pub format_version: u32,
    pub skills: Vec<IndexEntry>,
    pub sdk: String,
    pub onboarding: String,
    pub sdk_version: String,
    pub exported_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundledSkill {
    pub name: String,
    pub version: u32,
    pub skill_md: PathBuf,
    pub script: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillBundle {
    pub bundle_dir: PathBuf,
    pub skills: Vec<BundledSkill>,
    pub sdk_dir: PathBuf,
    pub onboarding: PathBuf,
    pub index: PathBuf,
}

fn is_staged_somewhere(workspace_parent: &Path, name: &str) -> bool {
    let Ok(entries) = fs::read_dir(workspace_parent) else {
        return false;
    };
    entries
        .flatten()
        .any(|e| e.path().join("staged").join(name).is_dir())
}

impl Runtime {
    /// Copies the head version of each named subagent into `dest`.
    pub fn export_bundle(
        &self,
        names: &[String],
        dest: &Path,
        reproducible: bool,
    ) -> Result<SkillBundle, DeployError> {
        let mut unique: Vec<&str> = Vec::new();
        for n in names {
            if !unique.contains(&n.as_str()) {
                unique.push(n);
            }
        }
        let mut sources = Vec::new();
        for name in &unique {
            match self.registry.head_files(name) {
                Ok(files) => sources.push((name.to_string(), files)),
                Err(RegistryError::UnknownSkill(_)) => {
                    if is_staged_somewhere(&self.config.workspace_parent(), name) {
                        return Err(DeployError::StagedOnlySkill(name.to_string()));
                    }
                    return Err(DeployError::UnknownSkill(name.to_string()));
                }
                Err(RegistryError::NotASubagent(_)) => {
                    return Err(DeployError::UnknownSkill(name.to_string()))
                }
                Err(e) => return Err(DeployError::Registry(e)),
            }
        }
        if dest.exists() && !is_empty_dir(dest)? {
            return Err(DeployError::DestinationNotEmpty(dest.to_path_buf()));
        }
        fs::create_dir_all(dest)?;

        let script_file = self.registry.script_file_name();
        let mut skills = Vec::new();
        let mut entries = Vec::new();
        for (name, (version, skill_md, script)) in sources {
            let dir = dest.join("skills").join(&name);
            fs::create_dir_all(&dir)?;
            fs::copy(&skill_md, dir.join("SKILL.md"))?;
            fs::copy(&script, dir.join(&script_file))?;
            entries.push(IndexEntry {
                name: name.clone(),
                version,
                entry: format!("skills/{name}/{script_file}"),
            });
            skills.push(BundledSkill {
                name,
                version,
                skill_md: dir.join("SKILL.md"),
                script: dir.join(&script_file),
            });
        }
        fs::create_dir_all(dest.join("skills"))?;

        let sdk_dir = dest.join("sdk");
        match &self.config.sdk_dir {
            Some(src) => copy_dir(src, &sdk_dir)?,
            None => fs::create_dir_all(&sdk_dir)?,
        }
        let rules = match &self.config.safety_rules {
            Some(path) => fs::read_to_string(path)?,
            None => BUILTIN_RULES.to_string(),
        };
        fs::write(sdk_dir.join("safety_rules.txt"), rules)?;
        fs::write(sdk_dir.join("VERSION"), format!("{SDK_VERSION}\n"))?;

        let index = BundleIndex {
            format_version: FORMAT_VERSION,
            skills: entries,
            sdk: "sdk".into(),
            onboarding: ONBOARDING_FILE.into(),
            sdk_version: SDK_VERSION.into(),
            exported_at: if reproducible {
                REPRODUCIBLE_EPOCH.into()
            } else {
                chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
            },
        };
        let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
        text.push('\n');
        fs::write(dest.join(INDEX_FILE), text)?;

        let prompt = generate_onboarding_prompt(dest, &self.config.runner_config())?;
        fs::write(dest.join(ONBOARDING_FILE), prompt)?;

        Ok(SkillBundle {
            bundle_dir: dest.to_path_buf(),
            skills,
            sdk_dir,
            onboarding: dest.join(ONBOARDING_FILE),
            index: dest.join(INDEX_FILE),
        })
    }
}

pub fn read_index(bundle_dir: &Path) -> Result<BundleIndex, DeployError> {
    let bytes = fs::read(bundle_dir.join(INDEX_FILE))
        .map_err(|e| DeployError::BundleInvalid(format!("{INDEX_FILE}: {e}")))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| DeployError::BundleInvalid(format!("{INDEX_FILE}: {e}")))
}

fn read_manifest(bundle_dir: &Path, name: &str) -> Result<SkillManifest, String> {
    let path = bundle_dir.join("skills").join(name).join("SKILL.md");
    let text = fs::read_to_string(&path).map_err(|e| format!("skills/{name}/SKILL.md: {e}"))?;
    let (manifest, _) =
        parse_skill_md(&text).map_err(|e| format!("skills/{name}/SKILL.md: {e}"))?;
    if manifest.name != name {
        return Err(format!("skills/{name}/SKILL.md names `{}`", manifest.name));
    }
    Ok(manifest)
}

/// Command line a host runs from the bundle root.
pub fn invocation(config: &RunnerConfig, entry: &str) -> String {
    format!(
        "{}=sdk {} {entry} --query \"<text>\"",
        config.sdk_path_var, config.interpreter
    )
}

/// Host-facing onboarding text; depends only on the bundle contents.
pub fn generate_onboarding_prompt(
    bundle_dir: &Path,
    config: &RunnerConfig,
) -> Result<String, DeployError> {
    let index = read_index(bundle_dir)?;
    let mut out = String::from("# Subagent bundle onboarding\n\n");
    out.push_str(&format!(
        "This bundle holds {} subagent skill(s). Each is a standalone script. Run it from the \
         bundle root with the bundled SDK importable; it prints its result as one JSON line on \
         standard output and logs to standard error. Set AF_WORKSPACE_OUT to choose where a \
         skill writes its files.\n",
        index.skills.len()
    ));
    for skill in &index.skills {
        let m = read_manifest(bundle_dir, &skill.name).map_err(DeployError::BundleInvalid)?;
        out.push_str(&format!("\n## {}\n\n", skill.name));
        out.push_str(&format!("Purpose: {}\n\n", m.description.trim()));
        out.push_str(&format!(
            "Invocation: `{}`\n\n",
            invocation(config, &skill.entry)
        ));
        out.push_str("Inputs:\n");
        for p in &m.parameters {
            let req = if p.required { "required" } else { "optional" };
            out.push_str(&format!(
                "- {} ({}, {req}): {}\n",
                p.name,
                p.semantic_type,
                p.description.trim()
            ));
        }
        if m.parameters.is_empty() {
            out.push_str("- (none)\n");
        }
        out.push_str(&format!(
            "\nOutputs: {} - {}\n\n",
            m.returns.semantic_type,
            m.returns.description.trim()
        ));
        out.push_str(&format!(
            "See skills/{}/SKILL.md for full documentation.\n",
            skill.name
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail")]
pub enum SmokeStatus {
    Passed,
    Failed(String),
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkillCheck {
    pub name: String,
    /// `None` when SKILL.md parses.
    pub manifest_error: Option<String>,
    pub script_present: bool,
    pub smoke: SmokeStatus,
}

impl SkillCheck {
    pub fn passed(&self) -> bool {
        self.manifest_error.is_none()
            && self.script_present
            && !matches!(self.smoke, SmokeStatus::Failed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub bundle_dir: PathBuf,
    /// Problems with the bundle as a whole (index, sdk).
    pub bundle_errors: Vec<String>,
    pub skills: Vec<SkillCheck>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.bundle_errors.is_empty() && self.skills.iter().all(SkillCheck::passed)
    }
}

/// The query of the first `<name> --query "<text>"` line in Usage, unless
/// it is a `<placeholder>`.
pub fn smoke_query(manifest: &SkillManifest) -> Option<String> {
    let re = Regex::new(r#"^\s*(\S+)\s+--query\s+(?:"([^"]*)"|'([^']*)')\s*$"#).unwrap();
    manifest.usage.lines().find_map(|line| {
        let caps = re.captures(line)?;
        if &caps[1] != manifest.name {
            return None;
        }
        let q = caps.get(2).or(caps.get(3))?.as_str().to_string();
        (!(q.starts_with('<') && q.ends_with('>'))).then_some(q)
    })
}

/// Checks every indexed skill; smoke runs use standalone execution.
pub fn verify_bundle(bundle_dir: &Path, config: &RunnerConfig) -> VerifyReport {
    let mut report = VerifyReport {
        bundle_dir: bundle_dir.to_path_buf(),
        bundle_errors: Vec::new(),
        skills: Vec::new(),
    };
    let index = match read_index(bundle_dir) {
        Ok(i) => i,
        Err(e) => {
            report.bundle_errors.push(e.to_string());
            return report;
        }
    };
    if !bundle_dir.join(&index.sdk).is_dir() {
        report.bundle_errors.push(format!("missing {}/", index.sdk));
    }
    if !bundle_dir.join(&index.onboarding).is_file() {
        report
            .bundle_errors
            .push(format!("missing {}", index.onboarding));
    }
    for skill in &index.skills {
        let manifest = read_manifest(bundle_dir, &skill.name);
        let script_present = bundle_dir.join(&skill.entry).is_file();
        let smoke = match (&manifest, script_present) {
            (Err(_), _) => SmokeStatus::Skipped("manifest unreadable".into()),
            (_, false) => SmokeStatus::Skipped("script missing".into()),
            (Ok(m), true) => match smoke_query(m) {
                None => SmokeStatus::Skipped("usage has no runnable example".into()),
                Some(q) => match standalone_execute(config, bundle_dir, &skill.name, &q) {
                    Ok(o) if o.is_success() => SmokeStatus::Passed,
                    Ok(o) => {
                        SmokeStatus::Failed(format!("{}: {}", o.status, o.stderr_tail.trim_end()))
                    }
                    Err(e) => SmokeStatus::Failed(e.to_string()),
                },
            },
        };
        report.skills.push(SkillCheck {
            name: skill.name.clone(),
            manifest_error: manifest.err(),
            script_present,
            smoke,
        });
    }
    report
}
