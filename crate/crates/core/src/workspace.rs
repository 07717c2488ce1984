//! Per-task workspaces.
//!
//! ```text
//! <parent>/<task_id>/staged/<name>/{SKILL.md, agent.<ext>, grants.json}
//! <parent>/<task_id>/out/            subagent working directory
//! <parent>/<task_id>/history.jsonl   execution record
//! ```
//!
//! Nothing a task does reaches the library except through [`WorkspaceManager::promote`].
//! Isolation is directory-scoped only: subagents run as ordinary processes.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{
    self, now_iso8601, parse_skill_md, render_skill_md, ManifestError, RegistryError, SkillKind,
    SkillManifest, SkillRecord, SkillRegistry,
};

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("task `{0}` already has a workspace")]
    DuplicateTask(String),
    #[error("task id `{0}` is not usable as a directory name")]
    InvalidTaskId(String),
    #[error("workspace for task `{0}` is not active")]
    WorkspaceNotActive(String),
    #[error("`{0}` is already staged in this workspace")]
    DuplicateStagedName(String),
    #[error("`{0}` is not staged in this workspace")]
    UnknownStagedSkill(String),
    #[error("staged skill `{skill}` has an invalid manifest: {source}")]
    InvalidManifest {
        skill: String,
        #[source]
        source: ManifestError,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("workspace I/O: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = WorkspaceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkspaceStatus {
    Active,
    Promoted,
    Discarded,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    pub task_id: String,
    pub root_dir: PathBuf,
    pub created_at: String,
    pub staged_skills: Vec<String>,
    pub status: WorkspaceStatus,
}

/// A skill drafted inside a workspace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedSkill {
    pub manifest: SkillManifest,
    pub code: String,
    pub tool_grants: Vec<String>,
}

impl Workspace {
    pub fn staged_root(&self) -> PathBuf {
        self.root_dir.join("staged")
    }

    pub fn staged_dir(&self, name: &str) -> PathBuf {
        self.staged_root().join(name)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.root_dir.join("out")
    }

    pub fn history_path(&self) -> PathBuf {
        self.root_dir.join("history.jsonl")
    }

    pub fn is_active(&self) -> bool {
        self.status == WorkspaceStatus::Active
    }

    pub fn is_staged(&self, name: &str) -> bool {
        self.staged_dir(name).join("SKILL.md").is_file()
    }

    fn ensure_active(&self) -> Result<()> {
        if self.is_active() {
            Ok(())
        } else {
            Err(WorkspaceError::WorkspaceNotActive(self.task_id.clone()))
        }
    }

    /// Writes (or overwrites) a staged skill.
    pub fn stage(&mut self, skill: &StagedSkill, script_ext: &str) -> Result<PathBuf> {
        self.ensure_active()?;
        let name = &skill.manifest.name;
        skill
            .manifest
            .validate()
            .map_err(|source| WorkspaceError::InvalidManifest {
                skill: name.clone(),
                source,
            })?;
        let dir = self.staged_dir(name);
        fs::create_dir_all(&dir)?;
        fs::write(
            dir.join("SKILL.md"),
            render_skill_md(&skill.manifest, SkillKind::Subagent),
        )?;
        let script = dir.join(format!("agent.{script_ext}"));
        fs::write(&script, &skill.code)?;
        fs::write(
            dir.join("grants.json"),
            serde_json::to_vec(&skill.tool_grants).expect("grant list serializes"),
        )?;
        if !self.staged_skills.iter().any(|s| s == name) {
            self.staged_skills.push(name.clone());
        }
        Ok(script)
    }

    pub fn load_staged(&self, name: &str, script_ext: &str) -> Result<StagedSkill> {
        let dir = self.staged_dir(name);
        let text = match fs::read_to_string(dir.join("SKILL.md")) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(WorkspaceError::UnknownStagedSkill(name.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let invalid = |source: ManifestError| WorkspaceError::InvalidManifest {
            skill: name.to_string(),
            source,
        };
        let (manifest, kind) = parse_skill_md(&text).map_err(invalid)?;
        if kind != SkillKind::Subagent || manifest.name != name {
            return Err(invalid(ManifestError::Syntax(format!(
                "staged manifest describes {kind} `{}`",
                manifest.name
            ))));
        }
        let code = fs::read_to_string(dir.join(format!("agent.{script_ext}")))?;
        let tool_grants = match fs::read(dir.join("grants.json")) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| invalid(ManifestError::Syntax(format!("grants.json: {e}"))))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(StagedSkill {
            manifest,
            code,
            tool_grants,
        })
    }

    pub fn staged_script_path(&self, name: &str, script_ext: &str) -> PathBuf {
        self.staged_dir(name).join(format!("agent.{script_ext}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromotedSkill {
    pub name: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    NotStaged,
    InvalidManifest(String),
    VersionConflict { expected: u32, found: u32 },
    Rejected(String),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::NotStaged => f.write_str("NotStaged"),
            SkipReason::InvalidManifest(d) => write!(f, "InvalidManifest: {d}"),
            SkipReason::VersionConflict { expected, found } => {
                write!(
                    f,
                    "VersionConflict: expected version {expected}, found {found}"
                )
            }
            SkipReason::Rejected(d) => write!(f, "Rejected: {d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSkill {
    pub name: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromotionResult {
    pub promoted: Vec<PromotedSkill>,
    pub skipped: Vec<SkippedSkill>,
}

/// Rejects path separators and dot-only ids; maps any other character
/// outside `[A-Za-z0-9._-]` to `_`.
pub fn sanitize_task_id(task_id: &str) -> Result<String> {
    let reject = || WorkspaceError::InvalidTaskId(task_id.to_string());
    if task_id.is_empty()
        || task_id.contains(['/', '\\', '\0'])
        || task_id.chars().all(|c| c == '.')
    {
        return Err(reject());
    }
    Ok(task_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect())
}

#[derive(Debug)]
pub struct WorkspaceManager {
    parent: PathBuf,
    active: Mutex<HashSet<String>>,
}

impl WorkspaceManager {
    pub fn new(parent: impl Into<PathBuf>) -> Result<Self> {
        let parent = parent.into();
        fs::create_dir_all(&parent)?;
        Ok(WorkspaceManager {
            parent,
            active: Mutex::new(HashSet::new()),
        })
    }

    pub fn parent(&self) -> &Path {
        &self.parent
    }

    pub fn workspace_dir(&self, task_id: &str) -> Result<PathBuf> {
        Ok(self.parent.join(sanitize_task_id(task_id)?))
    }

    pub fn create_workspace(&self, task_id: &str) -> Result<Workspace> {
        let dir_name = sanitize_task_id(task_id)?;
        let mut active = self.active.lock().unwrap();
        if active.contains(&dir_name) {
            return Err(WorkspaceError::DuplicateTask(task_id.to_string()));
        }
        let root_dir = self.parent.join(&dir_name);
        match fs::create_dir(&root_dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(WorkspaceError::DuplicateTask(task_id.to_string()))
            }
            Err(e) => return Err(e.into()),
        }
        active.insert(dir_name);
        Ok(Workspace {
            task_id: task_id.to_string(),
            root_dir,
            created_at: now_iso8601(),
            staged_skills: Vec::new(),
            status: WorkspaceStatus::Active,
        })
    }

    fn release(&self, ws: &Workspace) {
        if let Some(name) = ws.root_dir.file_name() {
            self.active
                .lock()
                .unwrap()
                .remove(name.to_string_lossy().as_ref());
        }
    }

    /// Moves staged skills into the library. Per-skill failures land in
    /// `skipped`; only lock and I/O failures abort the whole promotion.
    pub fn promote(
        &self,
        ws: &mut Workspace,
        skill_names: &[String],
        registry: &SkillRegistry,
    ) -> Result<PromotionResult> {
        ws.ensure_active()?;
        let writer = registry.write_lock()?;
        let mut result = PromotionResult::default();
        let mut seen = HashSet::new();
        for name in skill_names {
            if !seen.insert(name.as_str()) {
                continue;
            }
            let skip = |reason| SkippedSkill {
                name: name.clone(),
                reason,
            };
            let staged = match ws.load_staged(name, registry.script_ext()) {
                Ok(s) => s,
                Err(WorkspaceError::UnknownStagedSkill(_)) => {
                    result.skipped.push(skip(SkipReason::NotStaged));
                    continue;
                }
                Err(WorkspaceError::InvalidManifest { source, .. }) => {
                    result
                        .skipped
                        .push(skip(SkipReason::InvalidManifest(source.to_string())));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let outcome = if registry.is_saved(name) {
                let version = staged.manifest.version;
                let reason = staged
                    .manifest
                    .changelog
                    .iter()
                    .find(|c| c.version == version)
                    .map(|c| c.summary.clone())
                    .unwrap_or_else(|| "updated".into());
                writer.save_new_version(
                    name,
                    &staged.code,
                    staged.manifest,
                    &reason,
                    Some(staged.tool_grants),
                )
            } else {
                writer
                    .register(SkillRecord::subagent(
                        staged.manifest,
                        staged.code,
                        staged.tool_grants,
                    ))
                    .map(|_| 1)
            };
            match outcome {
                Ok(version) => result.promoted.push(PromotedSkill {
                    name: name.clone(),
                    version,
                }),
                Err(RegistryError::VersionConflict {
                    expected, found, ..
                }) => result
                    .skipped
                    .push(skip(SkipReason::VersionConflict { expected, found })),
                Err(RegistryError::InvalidManifest { source, .. }) => result
                    .skipped
                    .push(skip(SkipReason::InvalidManifest(source.to_string()))),
                Err(
                    e @ (RegistryError::DuplicateName(_)
                    | RegistryError::UnresolvedToolGrant { .. }
                    | RegistryError::NotASubagent(_)),
                ) => result
                    .skipped
                    .push(skip(SkipReason::Rejected(e.to_string()))),
                Err(e) => return Err(e.into()),
            }
        }
        drop(writer);
        ws.status = WorkspaceStatus::Promoted;
        self.release(ws);
        Ok(result)
    }

    /// Deletes the workspace directory; the library is not touched.
    pub fn discard(&self, ws: &mut Workspace) -> Result<()> {
        ws.ensure_active()?;
        match fs::remove_dir_all(&ws.root_dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        ws.status = WorkspaceStatus::Discarded;
        self.release(ws);
        Ok(())
    }
}

/// Resolves the grants of a staged skill against the built-in tools.
pub fn check_grants(name: &str, grants: &[String]) -> Result<()> {
    registry::resolve_grants(name, grants).map_err(Into::into)
}
