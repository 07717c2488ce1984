//! Persistent skill library.
//!
//! Layout under the library root:
//!
//! ```text
//! <root>/.lock                         advisory writer lock
//! <root>/<name>/SKILL.md               head manifest (commit point)
//! <root>/<name>/agent.<ext>            copy of the head script
//! <root>/<name>/versions/<n>/SKILL.md
//! <root>/<name>/versions/<n>/agent.<ext>
//! <root>/<name>/versions/<n>/version.json
//! ```
//!
//! The head is whatever version the top-level `SKILL.md` names; the head
//! script is always read from `versions/<head>/`, so a writer interrupted
//! between its renames leaves the library at the old head. Meta and tool
//! skills are compiled in (see [`builtin`]) and never touch the disk.

pub mod builtin;
pub mod manifest;

use std::fs::{self, File, OpenOptions};
use std::io;
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{Faults, InjectedCrash};
use crate::fsutil::atomic_write;
pub use manifest::{
    normalize_name, parse_skill_md, render_skill_md, ChangelogEntry, ManifestError, ParameterDoc,
    ReturnsDoc, SkillKind, SkillManifest,
};

const LOCK_FILE: &str = ".lock";
const VERSION_META: &str = "version.json";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("skill `{0}` is already registered")]
    DuplicateName(String),
    #[error("invalid manifest for `{skill}`: {source}")]
    InvalidManifest {
        skill: String,
        #[source]
        source: ManifestError,
    },
    #[error("skill `{skill}` is granted `{grant}`, which is not a registered tool skill")]
    UnresolvedToolGrant { skill: String, grant: String },
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("`{0}` is a built-in skill and has no inspectable script")]
    NotASubagent(String),
    #[error("version conflict on `{name}`: expected version {expected}, found {found}")]
    VersionConflict {
        name: String,
        expected: u32,
        found: u32,
    },
    #[error("library entry `{skill}` is corrupt: {detail}")]
    LibraryCorrupt { skill: String, detail: String },
    #[error("timed out after {0:?} waiting for the library writer lock")]
    LockTimeout(Duration),
    #[error(transparent)]
    Crash(#[from] InjectedCrash),
    #[error("library I/O: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = RegistryError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillVersion {
    pub version: u32,
    pub code: String,
    pub manifest: SkillManifest,
    pub created_at: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillRecord {
    pub kind: SkillKind,
    pub manifest: SkillManifest,
    pub code: String,
    pub tool_grants: Vec<String>,
    pub versions: Vec<SkillVersion>,
}

impl SkillRecord {
    /// A fresh subagent record at version 1.
    pub fn subagent(
        manifest: SkillManifest,
        code: impl Into<String>,
        tool_grants: Vec<String>,
    ) -> Self {
        SkillRecord {
            kind: SkillKind::Subagent,
            manifest,
            code: code.into(),
            tool_grants,
            versions: Vec::new(),
        }
    }

    pub fn summary(&self) -> SkillSummary {
        SkillSummary {
            name: self.manifest.name.clone(),
            kind: self.kind,
            description: self.manifest.one_line_description().to_string(),
            version: self.manifest.version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillSummary {
    pub name: String,
    pub kind: SkillKind,
    pub description: String,
    pub version: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VersionMeta {
    version: u32,
    created_at: String,
    reason: String,
    tool_grants: Vec<String>,
}

pub fn now_iso8601() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Every grant must name a built-in tool skill.
pub fn resolve_grants(skill: &str, grants: &[String]) -> Result<()> {
    match grants.iter().find(|g| !builtin::is_tool(g)) {
        Some(g) => Err(RegistryError::UnresolvedToolGrant {
            skill: skill.to_string(),
            grant: g.clone(),
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct SkillRegistry {
    root: PathBuf,
    script_ext: String,
    lock_timeout: Duration,
    faults: Faults,
}

impl SkillRegistry {
    pub fn open(root: impl Into<PathBuf>, script_ext: impl Into<String>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(SkillRegistry {
            root,
            script_ext: script_ext.into(),
            lock_timeout: Duration::from_secs(10),
            faults: Faults::none(),
        })
    }

    pub fn with_lock_timeout(mut self, timeout: Duration) -> Self {
        self.lock_timeout = timeout;
        self
    }

    #[doc(hidden)]
    pub fn with_faults(mut self, faults: Faults) -> Self {
        self.faults = faults;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn script_ext(&self) -> &str {
        &self.script_ext
    }

    pub fn script_file_name(&self) -> String {
        format!("agent.{}", self.script_ext)
    }

    fn skill_dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn version_dir(&self, name: &str, version: u32) -> PathBuf {
        self.skill_dir(name)
            .join("versions")
            .join(version.to_string())
    }

    /// Path of the head-version script for a saved subagent.
    pub fn head_script_path(&self, name: &str) -> Result<PathBuf> {
        let head = self.read_head(name)?;
        Ok(self
            .version_dir(name, head.version)
            .join(self.script_file_name()))
    }

    /// Head version plus the immutable `versions/<head>/` manifest and
    /// script paths.
    pub fn head_files(&self, name: &str) -> Result<(u32, PathBuf, PathBuf)> {
        if builtin::lookup(name).is_some() {
            return Err(RegistryError::NotASubagent(name.to_string()));
        }
        let head = self.read_head(name)?;
        let dir = self.version_dir(name, head.version);
        Ok((
            head.version,
            dir.join("SKILL.md"),
            dir.join(self.script_file_name()),
        ))
    }

    /// True when `name` is a saved subagent (built-ins excluded).
    pub fn is_saved(&self, name: &str) -> bool {
        self.skill_dir(name).join("SKILL.md").is_file()
    }

    fn read_head(&self, name: &str) -> Result<SkillManifest> {
        let path = self.skill_dir(name).join("SKILL.md");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(RegistryError::UnknownSkill(name.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        self.parse_stored(name, &text)
    }

    fn parse_stored(&self, name: &str, text: &str) -> Result<SkillManifest> {
        let corrupt = |detail: String| RegistryError::LibraryCorrupt {
            skill: name.to_string(),
            detail,
        };
        let (manifest, kind) = parse_skill_md(text).map_err(|e| corrupt(e.to_string()))?;
        if kind != SkillKind::Subagent {
            return Err(corrupt(format!("stored kind is `{kind}`")));
        }
        if manifest.name != name {
            return Err(corrupt(format!(
                "manifest name `{}` does not match directory",
                manifest.name
            )));
        }
        Ok(manifest)
    }

    fn read_version(&self, name: &str, version: u32) -> Result<(SkillVersion, Vec<String>)> {
        let dir = self.version_dir(name, version);
        let corrupt = |detail: String| RegistryError::LibraryCorrupt {
            skill: name.to_string(),
            detail,
        };
        let text = fs::read_to_string(dir.join("SKILL.md"))
            .map_err(|e| corrupt(format!("version {version} manifest: {e}")))?;
        let manifest = self.parse_stored(name, &text)?;
        let code = fs::read_to_string(dir.join(self.script_file_name()))
            .map_err(|e| corrupt(format!("version {version} script: {e}")))?;
        let meta: VersionMeta = fs::read(dir.join(VERSION_META))
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
            .map_err(|e| corrupt(format!("version {version} metadata: {e}")))?;
        Ok((
            SkillVersion {
                version,
                code,
                manifest,
                created_at: meta.created_at,
                reason: meta.reason,
            },
            meta.tool_grants,
        ))
    }

    /// Full record, including every retained version.
    pub fn get(&self, name: &str) -> Result<SkillRecord> {
        if let Some((kind, manifest)) = builtin::lookup(name) {
            return Ok(SkillRecord {
                kind,
                versions: vec![SkillVersion {
                    version: manifest.version,
                    code: String::new(),
                    manifest: manifest.clone(),
                    created_at: String::new(),
                    reason: "built-in".into(),
                }],
                manifest,
                code: String::new(),
                tool_grants: Vec::new(),
            });
        }
        let head = self.read_head(name)?;
        let mut versions = Vec::with_capacity(head.version as usize);
        let mut grants = Vec::new();
        for v in 1..=head.version {
            let (version, g) = self.read_version(name, v)?;
            grants = g;
            versions.push(version);
        }
        let code = versions.last().map(|v| v.code.clone()).unwrap_or_default();
        Ok(SkillRecord {
            kind: SkillKind::Subagent,
            manifest: head,
            code,
            tool_grants: grants,
            versions,
        })
    }

    pub fn list_saved_subagents(&self) -> Result<Vec<SkillSummary>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !entry.file_type()?.is_dir() {
                continue;
            }
            let manifest = self.read_head(&name).map_err(|e| match e {
                RegistryError::UnknownSkill(_) => RegistryError::LibraryCorrupt {
                    skill: name.clone(),
                    detail: "SKILL.md missing".into(),
                },
                other => other,
            })?;
            out.push(SkillSummary {
                description: manifest.one_line_description().to_string(),
                name: manifest.name,
                kind: SkillKind::Subagent,
                version: manifest.version,
            });
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }

    /// Built-ins followed by saved subagents.
    pub fn list_all(&self) -> Result<Vec<SkillSummary>> {
        let mut out: Vec<SkillSummary> = builtin::builtin_skills()
            .into_iter()
            .map(|(kind, m)| SkillSummary {
                description: m.one_line_description().to_string(),
                name: m.name,
                kind,
                version: m.version,
            })
            .collect();
        out.extend(self.list_saved_subagents()?);
        Ok(out)
    }

    pub fn get_skill_description(&self, name: &str) -> Result<String> {
        if let Some((kind, manifest)) = builtin::lookup(name) {
            return Ok(render_skill_md(&manifest, kind));
        }
        let head = self.read_head(name)?;
        Ok(render_skill_md(&head, SkillKind::Subagent))
    }

    pub fn view_subagent_code(&self, name: &str) -> Result<String> {
        if builtin::lookup(name).is_some() {
            return Err(RegistryError::NotASubagent(name.to_string()));
        }
        let head = self.read_head(name)?;
        let (version, _) = self.read_version(name, head.version)?;
        Ok(version.code)
    }

    /// Takes the single-writer lock, waiting up to the configured timeout.
    pub fn write_lock(&self) -> Result<RegistryWriter<'_>> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.root.join(LOCK_FILE))?;
        let deadline = Instant::now() + self.lock_timeout;
        loop {
            // SAFETY: flock on a descriptor we own; released when `file` drops.
            let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) };
            if rc == 0 {
                break;
            }
            let err = io::Error::last_os_error();
            if err.kind() != io::ErrorKind::WouldBlock {
                return Err(err.into());
            }
            if Instant::now() >= deadline {
                return Err(RegistryError::LockTimeout(self.lock_timeout));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        let writer = RegistryWriter {
            registry: self,
            _lock: file,
        };
        writer.recover()?;
        Ok(writer)
    }

    /// Rolls back whatever an interrupted writer left behind. Runs on every
    /// writer-lock acquisition; exposed for startup.
    pub fn recover(&self) -> Result<()> {
        self.write_lock().map(drop)
    }

    pub fn register_skill(&self, record: SkillRecord) -> Result<String> {
        self.write_lock()?.register(record)
    }

    pub fn save_new_version(
        &self,
        name: &str,
        code: &str,
        manifest: SkillManifest,
        reason: &str,
    ) -> Result<u32> {
        self.write_lock()?
            .save_new_version(name, code, manifest, reason, None)
    }
}

/// Holder of the library writer lock. All mutations go through here.
pub struct RegistryWriter<'a> {
    registry: &'a SkillRegistry,
    _lock: File,
}

impl RegistryWriter<'_> {
    /// Removes half-written temporaries, version directories past the head,
    /// and a top-level script that does not match the head.
    fn recover(&self) -> Result<()> {
        let is_tmp = |p: &Path| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with(".tmp-"))
        };
        let remove = |p: &Path| -> io::Result<()> {
            if p.is_dir() {
                fs::remove_dir_all(p)
            } else {
                fs::remove_file(p)
            }
        };
        let root = &self.registry.root;
        for entry in fs::read_dir(root)? {
            let path = entry?.path();
            if is_tmp(&path) {
                remove(&path)?;
            } else if path.is_dir() {
                for inner in [path.clone(), path.join("versions")] {
                    let Ok(rd) = fs::read_dir(&inner) else {
                        continue;
                    };
                    for e in rd {
                        let p = e?.path();
                        if is_tmp(&p) {
                            remove(&p)?;
                        }
                    }
                }
                self.roll_back_uncommitted(&path)?;
            }
        }
        Ok(())
    }

    fn roll_back_uncommitted(&self, skill_dir: &Path) -> Result<()> {
        let reg = self.registry;
        let Some(name) = skill_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
        else {
            return Ok(());
        };
        let Ok(head) = reg.read_head(&name) else {
            return Ok(());
        };
        if let Ok(rd) = fs::read_dir(skill_dir.join("versions")) {
            for e in rd {
                let p = e?.path();
                let n = p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.parse::<u32>().ok());
                if n.is_some_and(|n| n > head.version) {
                    tracing::warn!(skill = %name, dir = %p.display(), "removing uncommitted version");
                    fs::remove_dir_all(&p)?;
                }
            }
        }
        let head_code = reg
            .version_dir(&name, head.version)
            .join(reg.script_file_name());
        let top = skill_dir.join(reg.script_file_name());
        if let Ok(code) = fs::read(&head_code) {
            if fs::read(&top).ok().as_deref() != Some(&code[..]) {
                atomic_write(&top, &code)?;
            }
        }
        Ok(())
    }

    fn write_version_files(
        &self,
        dir: &Path,
        manifest: &SkillManifest,
        code: &str,
        meta: &VersionMeta,
    ) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("SKILL.md"),
            render_skill_md(manifest, SkillKind::Subagent),
        )?;
        fs::write(dir.join(self.registry.script_file_name()), code)?;
        fs::write(
            dir.join(VERSION_META),
            serde_json::to_vec_pretty(meta).expect("version metadata serializes"),
        )?;
        Ok(())
    }

    pub fn register(&self, record: SkillRecord) -> Result<String> {
        let reg = self.registry;
        let mut manifest = record.manifest;
        let name =
            normalize_name(&manifest.name).map_err(|source| RegistryError::InvalidManifest {
                skill: manifest.name.clone(),
                source,
            })?;
        manifest.name = name.clone();
        let invalid = |source: ManifestError| RegistryError::InvalidManifest {
            skill: name.clone(),
            source,
        };
        if record.kind != SkillKind::Subagent {
            return Err(invalid(ManifestError::Field {
                field: "kind".into(),
                reason: "only subagent skills can be registered".into(),
            }));
        }
        if manifest.version == 0 {
            manifest.version = 1;
        }
        if manifest.version != 1 {
            return Err(invalid(ManifestError::Field {
                field: "version".into(),
                reason: format!("new skills start at version 1, got {}", manifest.version),
            }));
        }
        manifest.validate().map_err(invalid)?;
        resolve_grants(&name, &record.tool_grants)?;
        if builtin::lookup(&name).is_some() || reg.skill_dir(&name).exists() {
            return Err(RegistryError::DuplicateName(name));
        }

        let staging = tempfile::Builder::new()
            .prefix(".tmp-")
            .tempdir_in(&reg.root)?
            .keep();
        let meta = VersionMeta {
            version: 1,
            created_at: now_iso8601(),
            reason: "initial version".into(),
            tool_grants: record.tool_grants,
        };
        self.write_version_files(
            &staging.join("versions").join("1"),
            &manifest,
            &record.code,
            &meta,
        )?;
        fs::write(staging.join(reg.script_file_name()), &record.code)?;
        fs::write(
            staging.join("SKILL.md"),
            render_skill_md(&manifest, SkillKind::Subagent),
        )?;
        reg.faults.hit("register:staged")?;
        fs::rename(&staging, reg.skill_dir(&name))?;
        reg.faults.hit("register:committed")?;
        tracing::debug!(skill = %name, "registered");
        Ok(name)
    }

    /// Appends a version. `grants` replaces the tool grants when given.
    pub fn save_new_version(
        &self,
        name: &str,
        code: &str,
        mut manifest: SkillManifest,
        reason: &str,
        grants: Option<Vec<String>>,
    ) -> Result<u32> {
        let reg = self.registry;
        if builtin::lookup(name).is_some() {
            return Err(RegistryError::NotASubagent(name.to_string()));
        }
        let head = reg.read_head(name)?;
        let (_, current_grants) = reg.read_version(name, head.version)?;
        let expected = head.version + 1;
        if manifest.version != expected {
            return Err(RegistryError::VersionConflict {
                name: name.to_string(),
                expected,
                found: manifest.version,
            });
        }
        let invalid = |source: ManifestError| RegistryError::InvalidManifest {
            skill: name.to_string(),
            source,
        };
        if manifest.name != name {
            return Err(invalid(ManifestError::Field {
                field: "name".into(),
                reason: format!("skills cannot be renamed (`{}`)", manifest.name),
            }));
        }
        let summary = changelog_summary(reason);
        if !manifest.changelog.iter().any(|c| c.version == expected) {
            manifest.changelog.push(ChangelogEntry {
                version: expected,
                summary: summary.clone(),
            });
        }
        manifest.validate().map_err(invalid)?;
        let grants = grants.unwrap_or(current_grants);
        resolve_grants(name, &grants)?;

        let versions = reg.skill_dir(name).join("versions");
        let staging = tempfile::Builder::new()
            .prefix(".tmp-")
            .tempdir_in(&versions)?
            .keep();
        let meta = VersionMeta {
            version: expected,
            created_at: now_iso8601(),
            reason: summary,
            tool_grants: grants,
        };
        self.write_version_files(&staging, &manifest, code, &meta)?;
        let target = versions.join(expected.to_string());
        if target.exists() {
            // Left behind by a writer that crashed before committing the head.
            fs::remove_dir_all(&target)?;
        }
        fs::rename(&staging, &target)?;
        reg.faults.hit("save:version_dir")?;
        atomic_write(
            &reg.skill_dir(name).join(reg.script_file_name()),
            code.as_bytes(),
        )?;
        reg.faults.hit("save:head_code")?;
        atomic_write(
            &reg.skill_dir(name).join("SKILL.md"),
            render_skill_md(&manifest, SkillKind::Subagent).as_bytes(),
        )?;
        reg.faults.hit("save:committed")?;
        tracing::debug!(skill = %name, version = expected, "saved new version");
        Ok(expected)
    }
}

fn changelog_summary(reason: &str) -> String {
    let line = reason.lines().map(str::trim).find(|l| !l.is_empty());
    line.unwrap_or("updated").to_string()
}
