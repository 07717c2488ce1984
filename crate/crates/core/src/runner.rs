//! Supervised execution of subagent scripts.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::broker::{
    BrokerError, BrokerSession, Envelope, SessionConfig, SessionEvent, ShellScope, ToolBroker,
    ToolCallRecord,
};
use crate::gateway::LlmGateway;
use crate::process::{exit_code, signal_group, tail, terminate, wait_deadline};
use crate::workspace::Workspace;

pub const STDERR_TAIL_BYTES: usize = 4096;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_KILL_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("interpreter `{0}` not found")]
    InterpreterNotFound(String),
    #[error("failed to spawn subagent: {0}")]
    SpawnFailure(String),
    #[error("invalid bundle: {0}")]
    BundleInvalid(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail")]
pub enum OutcomeStatus {
    Success,
    NonzeroExit(i32),
    Timeout,
    ProtocolError(String),
}

impl std::fmt::Display for OutcomeStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutcomeStatus::Success => f.write_str("Success"),
            OutcomeStatus::NonzeroExit(c) => write!(f, "NonzeroExit({c})"),
            OutcomeStatus::Timeout => f.write_str("Timeout"),
            OutcomeStatus::ProtocolError(d) => write!(f, "ProtocolError({d})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubagentOutcome {
    pub status: OutcomeStatus,
    pub result_payload: Option<Value>,
    pub stderr_tail: String,
    /// Seconds.
    pub duration: f64,
    pub tool_calls_made: u64,
    pub llm_calls_made: u64,
    pub tool_calls: Vec<ToolCallRecord>,
    /// Set when a brokered LLM call failed in a way that should abort the
    /// task (backend loss, replay drift).
    pub gateway_failure: Option<String>,
}

impl SubagentOutcome {
    pub fn is_success(&self) -> bool {
        self.status == OutcomeStatus::Success
    }
}

#[derive(Debug, Clone)]
pub struct RunnerConfig {
    pub interpreter: String,
    pub script_ext: String,
    pub default_timeout: Duration,
    pub kill_grace: Duration,
    pub model: String,
    pub max_output_tokens: u32,
    /// Variable naming the bundle's `sdk/` directory in standalone runs.
    pub sdk_path_var: String,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            interpreter: "python3".into(),
            script_ext: "py".into(),
            default_timeout: DEFAULT_TIMEOUT,
            kill_grace: DEFAULT_KILL_GRACE,
            model: "default".into(),
            max_output_tokens: 1024,
            sdk_path_var: "PYTHONPATH".into(),
        }
    }
}

/// What to run: a staged or saved script with its grants.
#[derive(Debug, Clone)]
pub struct RunTarget {
    pub name: String,
    pub script: PathBuf,
    pub grants: Vec<String>,
    pub timeout: Option<Duration>,
}

pub struct SubagentRunner {
    config: RunnerConfig,
    broker: Arc<ToolBroker>,
    gateway: Arc<LlmGateway>,
}

fn spawn_error(interpreter: &str, e: io::Error) -> RunnerError {
    if e.kind() == io::ErrorKind::NotFound {
        RunnerError::InterpreterNotFound(interpreter.to_string())
    } else {
        RunnerError::SpawnFailure(e.to_string())
    }
}

/// Copies stderr to `log` in full while keeping the tail.
fn drain_stderr(mut stream: impl Read + Send + 'static, log: Option<File>) -> JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut log = log;
        let mut kept: Vec<u8> = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if let Some(f) = log.as_mut() {
                        let _ = f.write_all(&buf[..n]);
                    }
                    kept.extend_from_slice(&buf[..n]);
                    if kept.len() > 2 * STDERR_TAIL_BYTES {
                        kept.drain(..kept.len() - STDERR_TAIL_BYTES);
                    }
                }
            }
        }
        kept
    })
}

fn stdout_lines(stream: impl Read + Send + 'static) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(stream);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) | Err(_) => break,
                Ok(_) => {
                    let line = String::from_utf8_lossy(&buf);
                    let line = line.strip_suffix('\n').unwrap_or(&line);
                    let line = line.strip_suffix('\r').unwrap_or(line);
                    if tx.send(line.to_string()).is_err() {
                        break;
                    }
                }
            }
        }
    });
    rx
}

fn send(stdin: &mut Option<ChildStdin>, line: &str) {
    if let Some(pipe) = stdin.as_mut() {
        let ok = pipe
            .write_all(line.as_bytes())
            .and_then(|_| pipe.write_all(b"\n"))
            .and_then(|_| pipe.flush());
        if ok.is_err() {
            *stdin = None;
        }
    }
}

fn next_stderr_log(out_dir: &Path, name: &str) -> PathBuf {
    (1..)
        .map(|n| out_dir.join(format!("subagent-{name}-{n}.stderr.log")))
        .find(|p| !p.exists())
        .unwrap()
}

enum Ending {
    Exited(i32),
    Timeout,
    Protocol(String),
}

/// Waits out the child after its stdout closed or a protocol error.
fn finish_child(child: &mut Child, deadline: Instant, grace: Duration) -> io::Result<Option<i32>> {
    let left = deadline.saturating_duration_since(Instant::now());
    match wait_deadline(child, left)? {
        Some(status) => Ok(Some(exit_code(status))),
        None => {
            terminate(child, grace)?;
            Ok(None)
        }
    }
}

impl SubagentRunner {
    pub fn new(config: RunnerConfig, broker: Arc<ToolBroker>, gateway: Arc<LlmGateway>) -> Self {
        SubagentRunner {
            config,
            broker,
            gateway,
        }
    }

    pub fn config(&self) -> &RunnerConfig {
        &self.config
    }

    /// Runs `target` brokered, with `out/` of `workspace` as its working
    /// directory. Never touches the library.
    pub fn execute(
        &self,
        target: &RunTarget,
        query: &str,
        workspace: &Workspace,
    ) -> Result<SubagentOutcome, RunnerError> {
        let out_dir = workspace.out_dir();
        fs::create_dir_all(&out_dir).map_err(|e| RunnerError::SpawnFailure(e.to_string()))?;
        let out_dir = out_dir
            .canonicalize()
            .map_err(|e| RunnerError::SpawnFailure(e.to_string()))?;
        let script = target
            .script
            .canonicalize()
            .map_err(|e| RunnerError::SpawnFailure(format!("{}: {e}", target.script.display())))?;
        let mut session = BrokerSession::new(
            self.broker.clone(),
            self.gateway.clone(),
            SessionConfig {
                task_id: workspace.task_id.clone(),
                subagent: target.name.clone(),
                model: self.config.model.clone(),
                max_output_tokens: self.config.max_output_tokens,
                scope: ShellScope {
                    workspace_root: workspace.root_dir.clone(),
                    out_dir: out_dir.clone(),
                },
            },
            &target.grants,
        )?;

        let log = File::create(next_stderr_log(&out_dir, &target.name)).ok();
        let started = Instant::now();
        let timeout = target.timeout.unwrap_or(self.config.default_timeout);
        let deadline = started + timeout;
        let mut child = Command::new(&self.config.interpreter)
            .arg(&script)
            .current_dir(&out_dir)
            .env("AF_BROKER", "stdio")
            .env("AF_TASK_ID", &workspace.task_id)
            .env("AF_SUBAGENT_NAME", &target.name)
            .env("AF_WORKSPACE_OUT", &out_dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0)
            .spawn()
            .map_err(|e| spawn_error(&self.config.interpreter, e))?;
        tracing::debug!(subagent = %target.name, pid = child.id(), "spawned");

        let stderr = drain_stderr(child.stderr.take().unwrap(), log);
        let lines = stdout_lines(child.stdout.take().unwrap());
        let mut stdin = child.stdin.take();
        send(
            &mut stdin,
            &Envelope::Query {
                query: query.to_string(),
            }
            .to_line(),
        );

        let mut result = None;
        let ending = loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match lines.recv_timeout(left) {
                Ok(line) => match session.handle_line(&line) {
                    Ok(SessionEvent::Respond(reply)) => send(&mut stdin, &reply),
                    Ok(SessionEvent::Result(payload)) => {
                        if result.is_some() {
                            break Ending::Protocol("more than one result message".into());
                        }
                        result = Some(payload);
                    }
                    Err(e) => break Ending::Protocol(e.0),
                },
                Err(RecvTimeoutError::Timeout) => break Ending::Timeout,
                Err(RecvTimeoutError::Disconnected) => {
                    drop(stdin.take());
                    match finish_child(&mut child, deadline, self.config.kill_grace) {
                        Ok(Some(code)) => break Ending::Exited(code),
                        Ok(None) => break Ending::Timeout,
                        Err(e) => break Ending::Protocol(format!("wait failed: {e}")),
                    }
                }
            }
        };
        drop(stdin);
        if !matches!(ending, Ending::Exited(_)) {
            let _ = terminate(&mut child, self.config.kill_grace);
        }
        // Reap anything the script left behind in its group.
        signal_group(child.id(), libc::SIGKILL);
        let stderr_bytes = stderr.join().unwrap_or_default();

        let status = match ending {
            Ending::Timeout => OutcomeStatus::Timeout,
            Ending::Protocol(detail) => OutcomeStatus::ProtocolError(detail),
            Ending::Exited(code) if code != 0 => OutcomeStatus::NonzeroExit(code),
            Ending::Exited(_) if result.is_none() => {
                OutcomeStatus::ProtocolError("exited without a result message".into())
            }
            Ending::Exited(_) => OutcomeStatus::Success,
        };
        if status != OutcomeStatus::Success {
            result = None;
        }
        Ok(SubagentOutcome {
            status,
            result_payload: result,
            stderr_tail: tail(&stderr_bytes, STDERR_TAIL_BYTES),
            duration: started.elapsed().as_secs_f64(),
            tool_calls_made: session.tool_calls().len() as u64,
            llm_calls_made: session.llm_calls(),
            tool_calls: session.tool_calls().to_vec(),
            gateway_failure: session.take_gateway_failure().map(|e| e.to_string()),
        })
    }

    /// Runs a bundled skill the way a host agent would, with no broker:
    /// `<interpreter> skills/<name>/agent.<ext> --query <text>`.
    pub fn standalone_execute(
        &self,
        bundle_dir: &Path,
        skill_name: &str,
        query: &str,
    ) -> Result<SubagentOutcome, RunnerError> {
        standalone_execute(&self.config, bundle_dir, skill_name, query)
    }
}

pub fn standalone_execute(
    config: &RunnerConfig,
    bundle_dir: &Path,
    skill_name: &str,
    query: &str,
) -> Result<SubagentOutcome, RunnerError> {
    let invalid = |m: String| RunnerError::BundleInvalid(m);
    let bundle = bundle_dir
        .canonicalize()
        .map_err(|e| invalid(format!("{}: {e}", bundle_dir.display())))?;
    if !bundle.join("index.json").is_file() {
        return Err(invalid("missing index.json".into()));
    }
    let sdk = bundle.join("sdk");
    if !sdk.is_dir() {
        return Err(invalid("missing sdk/".into()));
    }
    let rel_script = Path::new("skills")
        .join(skill_name)
        .join(format!("agent.{}", config.script_ext));
    if !bundle.join(&rel_script).is_file() {
        return Err(invalid(format!("missing {}", rel_script.display())));
    }
    let out_dir = bundle.join("out");
    fs::create_dir_all(&out_dir).map_err(|e| RunnerError::SpawnFailure(e.to_string()))?;
    let timeout = fs::read_to_string(bundle.join("skills").join(skill_name).join("SKILL.md"))
        .ok()
        .and_then(|t| crate::registry::manifest::parse_skill_md(&t).ok())
        .and_then(|(m, _)| m.timeout_override())
        .unwrap_or(config.default_timeout);

    let started = Instant::now();
    let mut child = Command::new(&config.interpreter)
        .arg(&rel_script)
        .arg("--query")
        .arg(query)
        .current_dir(&bundle)
        .env_remove("AF_BROKER")
        .env_remove("AF_TASK_ID")
        .env(&config.sdk_path_var, &sdk)
        .env("AF_SUBAGENT_NAME", skill_name)
        .env("AF_WORKSPACE_OUT", &out_dir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| spawn_error(&config.interpreter, e))?;
    let stderr = drain_stderr(child.stderr.take().unwrap(), None);
    let mut stdout_pipe = child.stdout.take().unwrap();
    let stdout = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout_pipe.read_to_end(&mut buf);
        buf
    });
    let waited = wait_deadline(&mut child, timeout);
    let code = match waited {
        Ok(Some(status)) => Some(exit_code(status)),
        _ => {
            let _ = terminate(&mut child, config.kill_grace);
            None
        }
    };
    signal_group(child.id(), libc::SIGKILL);
    let stdout_bytes = stdout.join().unwrap_or_default();
    let stderr_bytes = stderr.join().unwrap_or_default();

    let mut result_payload = None;
    let status = match code {
        None => OutcomeStatus::Timeout,
        Some(c) if c != 0 => OutcomeStatus::NonzeroExit(c),
        Some(_) => {
            let text = String::from_utf8_lossy(&stdout_bytes);
            match text.lines().rev().find(|l| !l.trim().is_empty()) {
                None => OutcomeStatus::ProtocolError("no result line on stdout".into()),
                Some(last) => match serde_json::from_str::<Value>(last) {
                    Ok(v) => {
                        result_payload = Some(v);
                        OutcomeStatus::Success
                    }
                    Err(e) => {
                        OutcomeStatus::ProtocolError(format!("last stdout line is not JSON: {e}"))
                    }
                },
            }
        }
    };
    Ok(SubagentOutcome {
        status,
        result_payload,
        stderr_tail: tail(&stderr_bytes, STDERR_TAIL_BYTES),
        duration: started.elapsed().as_secs_f64(),
        tool_calls_made: 0,
        llm_calls_made: 0,
        tool_calls: Vec::new(),
        gateway_failure: None,
    })
}
