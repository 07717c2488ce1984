//! Settings resolution: flags > `AF_*` environment > config file > defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use agent_forge::runtime::{ReadingConfig, RuntimeConfig, SearchConfig};
use serde::Deserialize;

pub const DEFAULT_CONFIG_FILE: &str = "agent-forge.toml";
pub const DEFAULT_HOME: &str = ".agent-forge";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub library: Option<PathBuf>,
    pub state: Option<PathBuf>,
    pub backend: Option<String>,
    pub backend_url: Option<String>,
    pub backend_key: Option<String>,
    pub model: Option<String>,
    pub step_limit: Option<u32>,
    pub max_output_tokens: Option<u32>,
    pub interpreter: Option<String>,
    pub script_ext: Option<String>,
    pub subagent_timeout_secs: Option<u64>,
    pub backend_timeout_secs: Option<u64>,
    pub search_fixtures: Option<PathBuf>,
    pub serper_key: Option<String>,
    pub reading_fixtures: Option<PathBuf>,
    pub jina_key: Option<String>,
    pub safety_rules: Option<PathBuf>,
    pub sdk_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.library,
            &mut cfg.state,
            &mut cfg.search_fixtures,
            &mut cfg.reading_fixtures,
            &mut cfg.safety_rules,
            &mut cfg.sdk_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct FlagValues {
    pub library: Option<PathBuf>,
    pub state: Option<PathBuf>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub step_limit: Option<u32>,
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Http { url: String, key: Option<String> },
    Replay(PathBuf),
    Missing(String),
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub runtime: RuntimeConfig,
    pub backend: BackendChoice,
    pub backend_timeout: Duration,
}

pub fn resolve(
    flags: &FlagValues,
    env: &dyn Fn(&str) -> Option<String>,
    file: &FileConfig,
) -> Result<Settings, String> {
    let env_path = |k: &str| env(k).filter(|v| !v.is_empty()).map(PathBuf::from);
    let home = PathBuf::from(DEFAULT_HOME);
    let library = flags
        .library
        .clone()
        .or_else(|| env_path("AF_LIBRARY"))
        .or_else(|| file.library.clone())
        .unwrap_or_else(|| home.join("library"));
    let state = flags
        .state
        .clone()
        .or_else(|| env_path("AF_STATE"))
        .or_else(|| file.state.clone())
        .unwrap_or_else(|| home.join("state"));

    let mut rc = RuntimeConfig::new(library, state);
    if let Some(m) = flags.model.clone().or_else(|| file.model.clone()) {
        rc.model = m;
    }
    if let Some(n) = flags.step_limit.or(file.step_limit) {
        if n == 0 {
            return Err("step limit must be at least 1".into());
        }
        rc.step_limit = n;
    }
    if let Some(n) = file.max_output_tokens {
        rc.max_output_tokens = n;
    }
    if let Some(i) = &file.interpreter {
        rc.interpreter = i.clone();
    }
    if let Some(e) = &file.script_ext {
        rc.script_ext = e.clone();
    }
    if let Some(s) = file.subagent_timeout_secs {
        rc.subagent_timeout = Duration::from_secs(s);
    }
    rc.search = match (&file.search_fixtures, &file.serper_key) {
        (Some(_), Some(_)) => return Err("config sets both search_fixtures and serper_key".into()),
        (Some(dir), None) => SearchConfig::Fixtures(dir.clone()),
        (None, Some(key)) => SearchConfig::Serper {
            api_key: key.clone(),
        },
        (None, None) => SearchConfig::None,
    };
    rc.reading = match (&file.reading_fixtures, &file.jina_key) {
        (Some(_), Some(_)) => return Err("config sets both reading_fixtures and jina_key".into()),
        (Some(dir), None) => ReadingConfig::Fixtures(dir.clone()),
        (None, Some(key)) => ReadingConfig::Jina {
            api_key: Some(key.clone()),
        },
        (None, None) => ReadingConfig::None,
    };
    rc.safety_rules = file.safety_rules.clone();
    rc.sdk_dir = file.sdk_dir.clone();

    let kind = flags
        .backend
        .clone()
        .or_else(|| flags.replay.as_ref().map(|_| "replay".to_string()))
        .or_else(|| file.backend.clone());
    let url = env("AF_BACKEND_URL")
        .filter(|v| !v.is_empty())
        .or_else(|| file.backend_url.clone());
    let key = env("AF_BACKEND_KEY")
        .filter(|v| !v.is_empty())
        .or_else(|| file.backend_key.clone());
    let backend = match kind.as_deref() {
        Some("replay") => match &flags.replay {
            Some(p) => BackendChoice::Replay(p.clone()),
            None => BackendChoice::Missing("backend `replay` needs --replay <file>".into()),
        },
        Some("http") | None => match url {
            Some(url) => BackendChoice::Http { url, key },
            None => BackendChoice::Missing(
                "no LLM backend: set AF_BACKEND_URL (or backend_url in the config file), or pass --replay <file>"
                    .into(),
            ),
        },
        Some(other) => return Err(format!("unknown backend `{other}` (expected http or replay)")),
    };
    Ok(Settings {
        runtime: rc,
        backend,
        backend_timeout: Duration::from_secs(file.backend_timeout_secs.unwrap_or(120)),
    })
}
