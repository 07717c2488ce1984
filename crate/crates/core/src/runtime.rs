//! Wires the registry, workspaces, gateway, broker and runner together.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::broker::tools::{FixturePages, FixtureSearch, JinaReader, SerperSearch};
use crate::broker::{ReadingAdapter, SafetyRules, SearchAdapter, ToolBroker, Unconfigured};
use crate::fault::Faults;
use crate::gateway::{LlmBackend, LlmGateway};
use crate::registry::builtin::{WEB_READING, WEB_SEARCH};
use crate::registry::{RegistryError, SkillRegistry};
use crate::runner::{RunnerConfig, SubagentRunner, DEFAULT_KILL_GRACE, DEFAULT_TIMEOUT};
use crate::workspace::{WorkspaceError, WorkspaceManager};

pub const DEFAULT_STEP_LIMIT: u32 = 32;
pub const DEFAULT_REPROMPTS: u32 = 2;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
}

#[derive(Debug, Clone)]
pub enum SearchConfig {
    None,
    Fixtures(PathBuf),
    Serper { api_key: String },
}

#[derive(Debug, Clone)]
pub enum ReadingConfig {
    None,
    Fixtures(PathBuf),
    Jina { api_key: Option<String> },
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub library_dir: PathBuf,
    pub state_dir: PathBuf,
    pub interpreter: String,
    pub script_ext: String,
    pub model: String,
    pub max_output_tokens: u32,
    pub step_limit: u32,
    pub reprompt_limit: u32,
    pub subagent_timeout: Duration,
    pub kill_grace: Duration,
    pub shell_timeout: Duration,
    pub lock_timeout: Duration,
    pub search: SearchConfig,
    pub reading: ReadingConfig,
    /// Rule file replacing the built-in shell safety rules.
    pub safety_rules: Option<PathBuf>,
    /// SDK sources copied into exported bundles.
    pub sdk_dir: Option<PathBuf>,
}

impl RuntimeConfig {
    pub fn new(library_dir: impl Into<PathBuf>, state_dir: impl Into<PathBuf>) -> Self {
        RuntimeConfig {
            library_dir: library_dir.into(),
            state_dir: state_dir.into(),
            interpreter: "python3".into(),
            script_ext: "py".into(),
            model: "default".into(),
            max_output_tokens: 4096,
            step_limit: DEFAULT_STEP_LIMIT,
            reprompt_limit: DEFAULT_REPROMPTS,
            subagent_timeout: DEFAULT_TIMEOUT,
            kill_grace: DEFAULT_KILL_GRACE,
            shell_timeout: Duration::from_secs(60),
            lock_timeout: Duration::from_secs(10),
            search: SearchConfig::None,
            reading: ReadingConfig::None,
            safety_rules: None,
            sdk_dir: None,
        }
    }

    pub fn workspace_parent(&self) -> PathBuf {
        self.state_dir.join("workspaces")
    }

    pub fn runner_config(&self) -> RunnerConfig {
        RunnerConfig {
            interpreter: self.interpreter.clone(),
            script_ext: self.script_ext.clone(),
            default_timeout: self.subagent_timeout,
            kill_grace: self.kill_grace,
            model: self.model.clone(),
            max_output_tokens: self.max_output_tokens,
            ..RunnerConfig::default()
        }
    }
}

pub struct Runtime {
    pub(crate) config: RuntimeConfig,
    pub(crate) registry: SkillRegistry,
    pub(crate) workspaces: WorkspaceManager,
    pub(crate) gateway: Arc<LlmGateway>,
    pub(crate) broker: Arc<ToolBroker>,
    pub(crate) runner: SubagentRunner,
    pub(crate) faults: Faults,
    task_counter: AtomicU64,
}

fn build_broker(config: &RuntimeConfig) -> Result<ToolBroker, RuntimeError> {
    let cfg = |e: crate::broker::ToolError| RuntimeError::Config(e.to_string());
    let search: Arc<dyn SearchAdapter> = match &config.search {
        SearchConfig::None => Arc::new(Unconfigured(WEB_SEARCH)),
        SearchConfig::Fixtures(dir) => Arc::new(FixtureSearch::load(dir).map_err(cfg)?),
        SearchConfig::Serper { api_key } => Arc::new(SerperSearch::new(api_key.clone())),
    };
    let reading: Arc<dyn ReadingAdapter> = match &config.reading {
        ReadingConfig::None => Arc::new(Unconfigured(WEB_READING)),
        ReadingConfig::Fixtures(dir) => Arc::new(FixturePages::load(dir).map_err(cfg)?),
        ReadingConfig::Jina { api_key } => Arc::new(JinaReader::new(api_key.clone())),
    };
    let safety = match &config.safety_rules {
        Some(path) => SafetyRules::load(path).map_err(|e| RuntimeError::Config(e.to_string()))?,
        None => SafetyRules::builtin(),
    };
    Ok(ToolBroker {
        search,
        reading,
        safety,
        shell_timeout: config.shell_timeout,
        ..ToolBroker::default()
    })
}

impl Runtime {
    /// Opens the library (rolling back any interrupted write) and prepares
    /// the workspace parent. `backend` is the default LLM backend; tasks
    /// may bind their own.
    pub fn new(
        config: RuntimeConfig,
        backend: Option<Arc<dyn LlmBackend>>,
    ) -> Result<Self, RuntimeError> {
        Self::with_faults(config, backend, Faults::none())
    }

    #[doc(hidden)]
    pub fn with_faults(
        config: RuntimeConfig,
        backend: Option<Arc<dyn LlmBackend>>,
        faults: Faults,
    ) -> Result<Self, RuntimeError> {
        let registry = SkillRegistry::open(&config.library_dir, &config.script_ext)?
            .with_lock_timeout(config.lock_timeout);
        registry.recover()?;
        let registry = registry.with_faults(faults.clone());
        let workspaces = WorkspaceManager::new(config.workspace_parent())?;
        let gateway = Arc::new(LlmGateway::new(backend));
        let broker = Arc::new(build_broker(&config)?);
        let runner = SubagentRunner::new(config.runner_config(), broker.clone(), gateway.clone());
        Ok(Runtime {
            config,
            registry,
            workspaces,
            gateway,
            broker,
            runner,
            faults,
            task_counter: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn registry(&self) -> &SkillRegistry {
        &self.registry
    }

    pub fn workspaces(&self) -> &WorkspaceManager {
        &self.workspaces
    }

    pub fn gateway(&self) -> &Arc<LlmGateway> {
        &self.gateway
    }

    pub fn broker(&self) -> &Arc<ToolBroker> {
        &self.broker
    }

    pub fn runner(&self) -> &SubagentRunner {
        &self.runner
    }

    pub(crate) fn fresh_task_id(&self) -> String {
        loop {
            let n = self.task_counter.fetch_add(1, Ordering::Relaxed) + 1;
            let id = format!(
                "task-{}-{}-{n}",
                chrono::Utc::now().format("%Y%m%dT%H%M%S"),
                std::process::id()
            );
            if !self.workspaces.parent().join(&id).exists() {
                return id;
            }
        }
    }
}
