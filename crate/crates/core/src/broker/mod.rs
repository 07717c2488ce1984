//! Serves tool and LLM calls to one subagent process over the envelope
//! protocol, enforcing that process's tool grants.

pub mod safety;
pub mod tools;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gateway::{CallOrigin, ChatMessage, GatewayError, LlmGateway, LlmRequest};
use crate::registry::builtin::{
    BROWSER_AUTOMATION, SHELL_COMMAND, TOOL_NAMES, WEB_READING, WEB_SEARCH,
};
pub use safety::{SafetyRules, SafetyVerdict};
pub use tools::{
    BrowserAdapter, PageContent, ReadingAdapter, SearchAdapter, SearchResult, ShellOutput,
    StubBrowser, ToolError, Unconfigured,
};

pub const SHELL_STREAM_CAP: usize = 256 * 1024;
pub const DEFAULT_MAX_RESULTS: usize = 5;

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("tool grant `{0}` does not name a registered tool")]
    UnresolvedToolGrant(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("protocol error: {0}")]
pub struct ProtocolError(pub String);

/// One line of the wire protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    /// Broker to child, first line: the query.
    Query {
        query: String,
    },
    ToolCall {
        id: u64,
        tool: String,
        args: Value,
    },
    LlmCall {
        id: u64,
        args: Value,
    },
    Response {
        id: u64,
        ok: bool,
        payload: Value,
    },
    Result {
        payload: Value,
    },
}

// Field order here is the wire order.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    verb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    args: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ok: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<Value>,
}

impl Envelope {
    pub fn to_line(&self) -> String {
        let wire = match self.clone() {
            Envelope::Query { query } => Wire {
                verb: "query".into(),
                payload: Some(json!({ "query": query })),
                ..Wire::default()
            },
            Envelope::ToolCall { id, tool, args } => Wire {
                id: Some(id),
                verb: "tool_call".into(),
                tool: Some(tool),
                args: Some(args),
                ..Wire::default()
            },
            Envelope::LlmCall { id, args } => Wire {
                id: Some(id),
                verb: "llm_call".into(),
                args: Some(args),
                ..Wire::default()
            },
            Envelope::Response { id, ok, payload } => Wire {
                id: Some(id),
                verb: "response".into(),
                ok: Some(ok),
                payload: Some(payload),
                ..Wire::default()
            },
            Envelope::Result { payload } => Wire {
                verb: "result".into(),
                payload: Some(payload),
                ..Wire::default()
            },
        };
        serde_json::to_string(&wire).expect("envelope serializes")
    }

    pub fn parse(line: &str) -> Result<Envelope, ProtocolError> {
        let bad = |m: String| ProtocolError(m);
        let wire: Wire = serde_json::from_str(line)
            .map_err(|e| bad(format!("not an envelope ({e}): {}", head(line))))?;
        let object = |v: Option<Value>, what: &str| match v {
            Some(v @ Value::Object(_)) => Ok(v),
            _ => Err(bad(format!("`{}` needs an object `{what}`", wire.verb))),
        };
        let id = || {
            wire.id
                .ok_or_else(|| bad(format!("`{}` needs an id", wire.verb)))
        };
        match wire.verb.as_str() {
            "query" => {
                let payload = object(wire.payload.clone(), "payload")?;
                let query = payload
                    .get("query")
                    .and_then(Value::as_str)
                    .ok_or_else(|| bad("query payload needs a string `query`".into()))?;
                Ok(Envelope::Query {
                    query: query.to_string(),
                })
            }
            "tool_call" => Ok(Envelope::ToolCall {
                id: id()?,
                tool: wire
                    .tool
                    .clone()
                    .ok_or_else(|| bad("tool_call needs a `tool`".into()))?,
                args: object(wire.args.clone(), "args")?,
            }),
            "llm_call" => Ok(Envelope::LlmCall {
                id: id()?,
                args: object(wire.args.clone(), "args")?,
            }),
            "response" => Ok(Envelope::Response {
                id: id()?,
                ok: wire.ok.ok_or_else(|| bad("response needs `ok`".into()))?,
                payload: object(wire.payload.clone(), "payload")?,
            }),
            "result" => Ok(Envelope::Result {
                payload: wire
                    .payload
                    .clone()
                    .ok_or_else(|| bad("result needs a `payload`".into()))?,
            }),
            other => Err(bad(format!("unknown verb `{other}`"))),
        }
    }
}

fn head(line: &str) -> String {
    line.chars().take(120).collect()
}

pub fn error_payload(kind: &str, message: impl Into<String>) -> Value {
    json!({"error": message.into(), "kind": kind})
}

/// The four tool implementations plus shell policy; shared by all sessions.
pub struct ToolBroker {
    pub search: Arc<dyn SearchAdapter>,
    pub reading: Arc<dyn ReadingAdapter>,
    pub browser: Arc<dyn BrowserAdapter>,
    pub safety: SafetyRules,
    pub shell_cap: usize,
    pub shell_timeout: Duration,
}

impl Default for ToolBroker {
    fn default() -> Self {
        ToolBroker {
            search: Arc::new(Unconfigured(WEB_SEARCH)),
            reading: Arc::new(Unconfigured(WEB_READING)),
            browser: Arc::new(StubBrowser::default()),
            safety: SafetyRules::builtin(),
            shell_cap: SHELL_STREAM_CAP,
            shell_timeout: Duration::from_secs(60),
        }
    }
}

/// Where shell commands may run.
#[derive(Debug, Clone)]
pub struct ShellScope {
    pub workspace_root: PathBuf,
    pub out_dir: PathBuf,
}

fn str_arg<'a>(args: &'a Value, key: &str) -> Result<&'a str, ToolError> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolError::BadArguments(format!("missing string `{key}`")))
}

impl ToolBroker {
    pub fn check_command_safety(&self, command: &str) -> SafetyVerdict {
        self.safety.check(command)
    }

    pub fn web_search(
        &self,
        query: &str,
        max_results: usize,
    ) -> Result<Vec<SearchResult>, ToolError> {
        let mut results = self.search.search(query, max_results)?;
        results.truncate(max_results);
        Ok(results)
    }

    pub fn web_reading(&self, raw_url: &str) -> Result<PageContent, ToolError> {
        let parsed = url::Url::parse(raw_url)
            .ok()
            .filter(|u| matches!(u.scheme(), "http" | "https") && u.host().is_some())
            .ok_or_else(|| ToolError::InvalidUrl(raw_url.to_string()))?;
        self.reading.read(&parsed)
    }

    pub fn shell_command(
        &self,
        command: &str,
        cwd: Option<&str>,
        scope: &ShellScope,
    ) -> Result<ShellOutput, ToolError> {
        let verdict = self.check_command_safety(command);
        if !verdict.is_allow() {
            return Err(ToolError::SafetyDenied(verdict));
        }
        let dir = tools::confine_cwd(cwd, &scope.out_dir, &scope.workspace_root)?;
        tools::run_shell(command, &dir, self.shell_cap, self.shell_timeout)
    }

    pub fn browser_automation(&self, script: &Value) -> Result<Value, ToolError> {
        self.browser.run(script)
    }

    /// Runs one tool by name with wire-shaped arguments.
    pub fn dispatch(
        &self,
        tool: &str,
        args: &Value,
        scope: &ShellScope,
    ) -> Result<Value, ToolError> {
        match tool {
            WEB_SEARCH => {
                let max = match args.get("max_results") {
                    None | Some(Value::Null) => DEFAULT_MAX_RESULTS,
                    Some(v) => v.as_u64().ok_or_else(|| {
                        ToolError::BadArguments(
                            "`max_results` must be a non-negative integer".into(),
                        )
                    })? as usize,
                };
                let results = self.web_search(str_arg(args, "query")?, max)?;
                Ok(json!({ "results": results }))
            }
            WEB_READING => {
                Ok(serde_json::to_value(self.web_reading(str_arg(args, "url")?)?).unwrap())
            }
            SHELL_COMMAND => {
                let cwd = args.get("cwd").and_then(Value::as_str);
                let out = self.shell_command(str_arg(args, "command")?, cwd, scope)?;
                Ok(serde_json::to_value(out).unwrap())
            }
            BROWSER_AUTOMATION => self.browser_automation(args),
            other => Err(ToolError::BadArguments(format!("unknown tool `{other}`"))),
        }
    }
}

pub fn tool_error_payload(err: &ToolError) -> Value {
    let mut payload = error_payload(err.kind(), err.to_string());
    match err {
        ToolError::SafetyDenied(verdict) => {
            payload["verdict"] = serde_json::to_value(verdict).unwrap();
        }
        ToolError::UpstreamFailure(s) | ToolError::FetchFailure(s) => {
            payload["status"] = json!(s);
        }
        _ => {}
    }
    payload
}

/// One tool_call as the broker answered it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub id: u64,
    pub tool: String,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    /// Write this line to the child's stdin.
    Respond(String),
    Result(Value),
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub task_id: String,
    pub subagent: String,
    pub model: String,
    pub max_output_tokens: u32,
    pub scope: ShellScope,
}

/// Broker state for exactly one subagent process.
pub struct BrokerSession {
    broker: Arc<ToolBroker>,
    gateway: Arc<LlmGateway>,
    config: SessionConfig,
    grants: Vec<String>,
    last_id: Option<u64>,
    tool_calls: Vec<ToolCallRecord>,
    llm_calls: u64,
    results: u64,
    gateway_failure: Option<GatewayError>,
}

impl BrokerSession {
    pub fn new(
        broker: Arc<ToolBroker>,
        gateway: Arc<LlmGateway>,
        config: SessionConfig,
        grants: &[String],
    ) -> Result<Self, BrokerError> {
        if let Some(bad) = grants.iter().find(|g| !TOOL_NAMES.contains(&g.as_str())) {
            return Err(BrokerError::UnresolvedToolGrant(bad.clone()));
        }
        Ok(BrokerSession {
            broker,
            gateway,
            config,
            grants: grants.to_vec(),
            last_id: None,
            tool_calls: Vec::new(),
            llm_calls: 0,
            results: 0,
            gateway_failure: None,
        })
    }

    pub fn grants(&self) -> &[String] {
        &self.grants
    }

    pub fn tool_calls(&self) -> &[ToolCallRecord] {
        &self.tool_calls
    }

    pub fn llm_calls(&self) -> u64 {
        self.llm_calls
    }

    pub fn result_count(&self) -> u64 {
        self.results
    }

    /// A gateway error that should abort the task (replay drift, backend
    /// loss); the child only saw an error response.
    pub fn take_gateway_failure(&mut self) -> Option<GatewayError> {
        self.gateway_failure.take()
    }

    fn check_id(&mut self, id: u64) -> Result<(), ProtocolError> {
        if self.last_id.is_some_and(|last| id <= last) {
            return Err(ProtocolError(format!(
                "request id {id} does not increase past {}",
                self.last_id.unwrap()
            )));
        }
        self.last_id = Some(id);
        Ok(())
    }

    /// Handles one line the child wrote to stdout.
    pub fn handle_line(&mut self, line: &str) -> Result<SessionEvent, ProtocolError> {
        match Envelope::parse(line)? {
            Envelope::ToolCall { id, tool, args } => {
                self.check_id(id)?;
                let (ok, payload) = self.tool_call(&tool, &args);
                self.tool_calls.push(ToolCallRecord { id, tool, ok });
                Ok(SessionEvent::Respond(
                    Envelope::Response { id, ok, payload }.to_line(),
                ))
            }
            Envelope::LlmCall { id, args } => {
                self.check_id(id)?;
                let (ok, payload) = self.llm_call(&args);
                Ok(SessionEvent::Respond(
                    Envelope::Response { id, ok, payload }.to_line(),
                ))
            }
            Envelope::Result { payload } => {
                self.results += 1;
                Ok(SessionEvent::Result(payload))
            }
            Envelope::Query { .. } | Envelope::Response { .. } => Err(ProtocolError(
                "child may only send tool_call, llm_call or result".into(),
            )),
        }
    }

    fn tool_call(&self, tool: &str, args: &Value) -> (bool, Value) {
        if !self.grants.iter().any(|g| g == tool) {
            let mut payload = error_payload("ToolNotGranted", "tool not granted");
            payload["tool"] = json!(tool);
            return (false, payload);
        }
        match self.broker.dispatch(tool, args, &self.config.scope) {
            Ok(v) => (true, v),
            Err(e) => (false, tool_error_payload(&e)),
        }
    }

    fn llm_call(&mut self, args: &Value) -> (bool, Value) {
        let messages: Vec<ChatMessage> =
            match args.get("messages").cloned().map(serde_json::from_value) {
                Some(Ok(m)) => m,
                _ => {
                    return (
                        false,
                        error_payload(
                            "InvalidRequest",
                            "`messages` must be a list of {role, content}",
                        ),
                    )
                }
            };
        let max = args
            .get("max_tokens")
            .and_then(Value::as_u64)
            .map_or(self.config.max_output_tokens, |m| {
                m.min(u32::MAX as u64) as u32
            });
        let request = LlmRequest {
            messages,
            model: self.config.model.clone(),
            max_output_tokens: max,
        };
        let origin = CallOrigin::Subagent(self.config.subagent.clone());
        match self.gateway.complete(request, origin, &self.config.task_id) {
            Ok(ex) => {
                self.llm_calls += 1;
                (
                    true,
                    json!({"completion": ex.completion, "usage": ex.usage}),
                )
            }
            Err(e) => {
                let payload = error_payload(gateway_kind(&e), e.to_string());
                if !matches!(e, GatewayError::InvalidRequest(_)) {
                    self.gateway_failure = Some(e);
                }
                (false, payload)
            }
        }
    }
}

fn gateway_kind(e: &GatewayError) -> &'static str {
    match e {
        GatewayError::BackendUnavailable(_) => "BackendUnavailable",
        GatewayError::ReplayExhausted { .. } => "ReplayExhausted",
        GatewayError::ReplayMismatch { .. } => "ReplayMismatch",
        GatewayError::InvalidRequest(_) => "InvalidRequest",
        GatewayError::UnknownTask(_) => "UnknownTask",
        GatewayError::Io(_) => "Io",
    }
}

/// Root-relative helper used by tests and the runner.
pub fn scope_for(workspace_root: &Path) -> ShellScope {
    ShellScope {
        workspace_root: workspace_root.to_path_buf(),
        out_dir: workspace_root.join("out"),
    }
}
