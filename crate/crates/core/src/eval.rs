//! Scripted task batches and per-mode orchestration token reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{BatchReport, ReplayBackend, ReplayScript, TaskTokens};
use crate::meta::{MetaError, TaskOptions, TaskOutcome};
use crate::runtime::Runtime;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("batch manifest {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },
    #[error(transparent)]
    Meta(#[from] MetaError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalTask {
    pub id: String,
    /// `from_scratch` or `with_saved`; any tag is accepted and grouped.
    pub mode: String,
    pub query: String,
    /// Replay script, relative to the manifest's directory.
    pub replay: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalManifest {
    pub tasks: Vec<EvalTask>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl EvalManifest {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let err = |detail: String| EvalError::Manifest {
            path: path.to_path_buf(),
            detail,
        };
        let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
        let mut manifest: EvalManifest =
            serde_json::from_slice(&bytes).map_err(|e| err(e.to_string()))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for task in &manifest.tasks {
            ReplayScript::load(&manifest.base_dir.join(&task.replay))
                .map_err(|e| err(format!("task `{}`: {e}", task.id)))?;
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalTaskResult {
    pub id: String,
    pub mode: String,
    pub task_id: String,
    pub outcome: TaskOutcome,
    pub orchestration_tokens: u64,
    pub history: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub modes: BTreeMap<String, BatchReport>,
    pub tasks: Vec<EvalTaskResult>,
}

impl EvalReport {
    pub fn all_completed(&self) -> bool {
        self.tasks
            .iter()
            .all(|t| t.outcome == TaskOutcome::Completed)
    }
}

impl Runtime {
    /// Runs the batch in manifest order against this runtime's library,
    /// so later tasks see skills saved by earlier ones.
    pub fn run_eval(&self, manifest: &EvalManifest) -> Result<EvalReport, EvalError> {
        let mut tasks = Vec::new();
        let mut per_mode: BTreeMap<String, Vec<TaskTokens>> = BTreeMap::new();
        for task in &manifest.tasks {
            let script =
                ReplayScript::load(&manifest.base_dir.join(&task.replay)).map_err(|e| {
                    EvalError::Manifest {
                        path: manifest.base_dir.join(&task.replay),
                        detail: e.to_string(),
                    }
                })?;
            let result = self.run_task(
                &task.query,
                TaskOptions {
                    task_id: None,
                    backend: Some(Arc::new(ReplayBackend::new(script))),
                },
            )?;
            tracing::info!(id = %task.id, mode = %task.mode, tokens = result.orchestration_tokens, "eval task done");
            per_mode
                .entry(task.mode.clone())
                .or_default()
                .push(TaskTokens {
                    task_id: result.task_id.clone(),
                    orchestration_tokens: result.orchestration_tokens,
                });
            tasks.push(EvalTaskResult {
                id: task.id.clone(),
                mode: task.mode.clone(),
                task_id: result.task_id,
                outcome: result.outcome,
                orchestration_tokens: result.orchestration_tokens,
                history: result.workspace_dir.join("history.jsonl"),
                failure: result.failure,
            });
        }
        let modes = per_mode
            .into_iter()
            .map(|(mode, totals)| (mode, BatchReport::from_totals(totals)))
            .collect();
        Ok(EvalReport { modes, tasks })
    }
}
