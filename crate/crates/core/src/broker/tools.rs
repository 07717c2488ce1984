//! The four built-in tool skills and their adapters.
//!
//! Search and page reading each have a fixture adapter backed by a corpus
//! directory and a thin live HTTP adapter. Browser automation ships only a
//! recording stub; real drivers plug in through [`BrowserAdapter`].

use std::collections::BTreeMap;
use std::fs;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use scraper::{Html, Node, Selector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::safety::SafetyVerdict;
use crate::process::{capped_text, exit_code, read_capped, terminate, wait_deadline};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("{0} adapter is not configured")]
    AdapterUnconfigured(&'static str),
    #[error("upstream search failed with status {0}")]
    UpstreamFailure(u16),
    #[error("fetch failed with status {0}")]
    FetchFailure(u16),
    #[error("invalid url `{0}`")]
    InvalidUrl(String),
    #[error("command {0}")]
    SafetyDenied(SafetyVerdict),
    #[error("working directory {0} is outside the workspace")]
    CwdOutsideWorkspace(PathBuf),
    #[error("command execution failed: {0}")]
    ExecFailure(String),
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("adapter failure: {0}")]
    Adapter(String),
}

impl ToolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ToolError::AdapterUnconfigured(_) => "AdapterUnconfigured",
            ToolError::UpstreamFailure(_) => "UpstreamFailure",
            ToolError::FetchFailure(_) => "FetchFailure",
            ToolError::InvalidUrl(_) => "InvalidUrl",
            ToolError::SafetyDenied(_) => "SafetyDenied",
            ToolError::CwdOutsideWorkspace(_) => "CwdOutsideWorkspace",
            ToolError::ExecFailure(_) => "ExecFailure",
            ToolError::BadArguments(_) => "BadArguments",
            ToolError::Adapter(_) => "Adapter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageContent {
    pub content_text: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShellOutput {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub trait SearchAdapter: Send + Sync {
    fn search(&self, query: &str, max_results: usize) -> Result<Vec<SearchResult>, ToolError>;
}

pub trait ReadingAdapter: Send + Sync {
    fn read(&self, url: &url::Url) -> Result<PageContent, ToolError>;
}

pub trait BrowserAdapter: Send + Sync {
    fn run(&self, script: &Value) -> Result<Value, ToolError>;
}

pub struct Unconfigured(pub &'static str);

impl SearchAdapter for Unconfigured {
    fn search(&self, _: &str, _: usize) -> Result<Vec<SearchResult>, ToolError> {
        Err(ToolError::AdapterUnconfigured(self.0))
    }
}

impl ReadingAdapter for Unconfigured {
    fn read(&self, _: &url::Url) -> Result<PageContent, ToolError> {
        Err(ToolError::AdapterUnconfigured(self.0))
    }
}

impl BrowserAdapter for Unconfigured {
    fn run(&self, _: &Value) -> Result<Value, ToolError> {
        Err(ToolError::AdapterUnconfigured(self.0))
    }
}

fn valid_url(raw: &str) -> Option<url::Url> {
    url::Url::parse(raw)
        .ok()
        .filter(|u| matches!(u.scheme(), "http" | "https") && u.host().is_some())
}

fn fixture_key(query: &str) -> String {
    query
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Canned results from `<dir>/*.json`, each `{"query": str, "results": [...]}`.
#[derive(Debug)]
pub struct FixtureSearch {
    corpus: BTreeMap<String, Vec<SearchResult>>,
}

#[derive(Deserialize)]
struct SearchFixtureFile {
    query: String,
    results: Vec<SearchResult>,
}

impl FixtureSearch {
    pub fn load(dir: &Path) -> Result<Self, ToolError> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| ToolError::Adapter(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut corpus = BTreeMap::new();
        for path in files {
            let parsed: SearchFixtureFile = fs::read(&path)
                .map_err(|e| e.to_string())
                .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
                .map_err(|e| ToolError::Adapter(format!("{}: {e}", path.display())))?;
            corpus.insert(fixture_key(&parsed.query), parsed.results);
        }
        Ok(FixtureSearch { corpus })
    }
}

impl SearchAdapter for FixtureSearch {
    fn search(&self, query: &str, max_results: usize) -> Result<Vec<SearchResult>, ToolError> {
        Ok(self
            .corpus
            .get(&fixture_key(query))
            .map(|results| {
                results
                    .iter()
                    .filter(|r| valid_url(&r.url).is_some())
                    .take(max_results)
                    .cloned()
                    .collect()
            })
            .unwrap_or_default())
    }
}

/// Serper search over HTTPS.
pub struct SerperSearch {
    api_key: String,
    agent: ureq::Agent,
}

fn http_agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(30)))
        .http_status_as_error(false)
        .build()
        .into()
}

impl SerperSearch {
    pub fn new(api_key: String) -> Self {
        SerperSearch {
            api_key,
            agent: http_agent(),
        }
    }
}

impl SearchAdapter for SerperSearch {
    fn search(&self, query: &str, max_results: usize) -> Result<Vec<SearchResult>, ToolError> {
        if max_results == 0 {
            return Ok(Vec::new());
        }
        let body = serde_json::to_vec(&json!({"q": query, "num": max_results})).unwrap();
        let mut resp = self
            .agent
            .post("https://google.serper.dev/search")
            .header("X-API-KEY", &self.api_key)
            .header("Content-Type", "application/json")
            .send(&body[..])
            .map_err(|e| ToolError::Adapter(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ToolError::UpstreamFailure(status));
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ToolError::Adapter(e.to_string()))?;
        let organic = value
            .get("organic")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        Ok(organic
            .iter()
            .filter_map(|o| {
                let s = |k: &str| {
                    o.get(k)
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string()
                };
                let url = s("link");
                valid_url(&url).map(|_| SearchResult {
                    title: s("title"),
                    url,
                    snippet: s("snippet"),
                })
            })
            .take(max_results)
            .collect())
    }
}

/// Stored pages keyed by `<dir>/index.json`:
/// `{"<url>": {"page": "file.html"} | {"status": 404}}`.
#[derive(Debug)]
pub struct FixturePages {
    dir: PathBuf,
    index: BTreeMap<String, PageEntry>,
}

#[derive(Debug, Deserialize)]
struct PageEntry {
    #[serde(default)]
    page: Option<String>,
    #[serde(default)]
    status: Option<u16>,
}

impl FixturePages {
    pub fn load(dir: &Path) -> Result<Self, ToolError> {
        let path = dir.join("index.json");
        let index = fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
            .map_err(|e| ToolError::Adapter(format!("{}: {e}", path.display())))?;
        Ok(FixturePages {
            dir: dir.to_path_buf(),
            index,
        })
    }
}

impl ReadingAdapter for FixturePages {
    fn read(&self, url: &url::Url) -> Result<PageContent, ToolError> {
        let entry = self
            .index
            .get(url.as_str())
            .ok_or(ToolError::FetchFailure(404))?;
        if let Some(status) = entry.status.filter(|s| !(200..300).contains(s)) {
            return Err(ToolError::FetchFailure(status));
        }
        let page = entry.page.as_deref().ok_or(ToolError::FetchFailure(404))?;
        let html = fs::read_to_string(self.dir.join(page))
            .map_err(|e| ToolError::Adapter(format!("{page}: {e}")))?;
        Ok(extract_main_text(&html))
    }
}

/// Jina reader over HTTPS.
pub struct JinaReader {
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl JinaReader {
    pub fn new(api_key: Option<String>) -> Self {
        JinaReader {
            api_key,
            agent: http_agent(),
        }
    }
}

impl ReadingAdapter for JinaReader {
    fn read(&self, url: &url::Url) -> Result<PageContent, ToolError> {
        let mut req = self
            .agent
            .get(&format!("https://r.jina.ai/{url}"))
            .header("Accept", "text/plain");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.call().map_err(|e| ToolError::Adapter(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ToolError::FetchFailure(status));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ToolError::Adapter(e.to_string()))?;
        let title = text
            .lines()
            .find_map(|l| l.strip_prefix("Title:"))
            .unwrap_or_default()
            .trim()
            .to_string();
        let content = match text.split_once("Markdown Content:") {
            Some((_, body)) => body.trim().to_string(),
            None => text.trim().to_string(),
        };
        Ok(PageContent {
            content_text: content,
            title,
        })
    }
}

const SKIPPED_TAGS: &[&str] = &[
    "script", "style", "noscript", "template", "head", "nav", "header", "footer", "aside", "form",
];
const BLOCK_TAGS: &[&str] = &[
    "p",
    "div",
    "section",
    "article",
    "main",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "li",
    "ul",
    "ol",
    "pre",
    "blockquote",
    "table",
    "tr",
    "br",
    "hr",
    "dd",
    "dt",
    "figcaption",
];

/// Main-content text of an HTML page: one line per block element, with
/// navigation, scripts and page chrome dropped and whitespace collapsed.
pub fn extract_main_text(html: &str) -> PageContent {
    let doc = Html::parse_document(html);
    let title = Selector::parse("title")
        .ok()
        .and_then(|s| doc.select(&s).next())
        .map(|t| t.text().collect::<Vec<_>>().join(" "))
        .map(|t| t.split_whitespace().collect::<Vec<_>>().join(" "))
        .unwrap_or_default();
    let body_sel = Selector::parse("body").unwrap();
    let root = doc
        .select(&body_sel)
        .next()
        .unwrap_or_else(|| doc.root_element());

    let mut lines: Vec<String> = Vec::new();
    let mut current = String::new();
    walk(*root, &mut lines, &mut current);
    flush(&mut lines, &mut current);
    PageContent {
        content_text: lines.join("\n"),
        title,
    }
}

fn flush(lines: &mut Vec<String>, current: &mut String) {
    let line = current.split_whitespace().collect::<Vec<_>>().join(" ");
    if !line.is_empty() {
        lines.push(line);
    }
    current.clear();
}

fn walk(node: ego_tree::NodeRef<'_, Node>, lines: &mut Vec<String>, current: &mut String) {
    for child in node.children() {
        match child.value() {
            Node::Text(text) => {
                current.push_str(text);
            }
            Node::Element(el) => {
                let name = el.name();
                if SKIPPED_TAGS.contains(&name) {
                    continue;
                }
                let block = BLOCK_TAGS.contains(&name);
                if block {
                    flush(lines, current);
                } else {
                    current.push(' ');
                }
                walk(child, lines, current);
                if block {
                    flush(lines, current);
                } else {
                    current.push(' ');
                }
            }
            _ => {}
        }
    }
}

/// Records every requested action script and reports `NotImplemented`.
#[derive(Debug, Default)]
pub struct StubBrowser {
    log: Mutex<Vec<Value>>,
}

impl StubBrowser {
    pub fn actions(&self) -> Vec<Value> {
        self.log.lock().unwrap().clone()
    }
}

impl BrowserAdapter for StubBrowser {
    fn run(&self, script: &Value) -> Result<Value, ToolError> {
        self.log.lock().unwrap().push(script.clone());
        Ok(json!({"status": "NotImplemented", "observations": []}))
    }
}

/// Resolves `cwd` (relative paths against `default_dir`) and checks it lies
/// inside `workspace_root`.
pub fn confine_cwd(
    cwd: Option<&str>,
    default_dir: &Path,
    workspace_root: &Path,
) -> Result<PathBuf, ToolError> {
    let requested = match cwd {
        None | Some("") => default_dir.to_path_buf(),
        Some(c) if Path::new(c).is_absolute() => PathBuf::from(c),
        Some(c) => default_dir.join(c),
    };
    let outside = || ToolError::CwdOutsideWorkspace(requested.clone());
    let root = workspace_root.canonicalize().map_err(|_| outside())?;
    let resolved = requested.canonicalize().map_err(|e| {
        if requested.starts_with(workspace_root) {
            ToolError::ExecFailure(format!("{}: {e}", requested.display()))
        } else {
            outside()
        }
    })?;
    if resolved.starts_with(&root) {
        Ok(resolved)
    } else {
        Err(outside())
    }
}

/// Runs `sh -c command` in `cwd`, capturing each stream up to `cap` bytes.
pub fn run_shell(
    command: &str,
    cwd: &Path,
    cap: usize,
    timeout: Duration,
) -> Result<ShellOutput, ToolError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| ToolError::ExecFailure(e.to_string()))?;
    let stdout = child.stdout.take().unwrap();
    let stderr = child.stderr.take().unwrap();
    let out = thread::spawn(move || read_capped(stdout, cap));
    let err = thread::spawn(move || read_capped(stderr, cap));
    let status = match wait_deadline(&mut child, timeout) {
        Ok(Some(status)) => status,
        Ok(None) => {
            terminate(&mut child, Duration::from_secs(1))
                .map_err(|e| ToolError::ExecFailure(e.to_string()))?;
            return Err(ToolError::ExecFailure(format!(
                "timed out after {}s",
                timeout.as_secs()
            )));
        }
        Err(e) => return Err(ToolError::ExecFailure(e.to_string())),
    };
    // Grandchildren may still hold the pipes open.
    crate::process::signal_group(child.id(), libc::SIGKILL);
    Ok(ShellOutput {
        exit_code: exit_code(status),
        stdout: capped_text(out.join().unwrap_or_default()),
        stderr: capped_text(err.join().unwrap_or_default()),
    })
}
