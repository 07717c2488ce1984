//! LLM access with per-task, per-origin token accounting.
//!
//! Every completion, whether requested by the orchestrator or by a subagent
//! through the broker, passes through [`LlmGateway::complete`] and is logged
//! with its origin. The orchestration cost of a task is the sum of output
//! tokens over orchestrator-origin exchanges only.

pub mod http;
pub mod replay;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::sha256_hex;
pub use crate::history::CallOrigin;
use crate::history::{ExchangeRecord, TaskLog};
use crate::registry::now_iso8601;
pub use http::HttpChatBackend;
pub use replay::{ReplayBackend, ReplayEntry, ReplayScript};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("LLM backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("replay script exhausted after {consumed} entries")]
    ReplayExhausted { consumed: usize },
    #[error("replay entry {index} expected `{expected}` in the prompt\n{diff}")]
    ReplayMismatch {
        index: usize,
        expected: String,
        received_head: String,
        diff: String,
    },
    #[error("invalid LLM request: {0}")]
    InvalidRequest(String),
    #[error("no exchanges recorded for task `{0}`")]
    UnknownTask(String),
    #[error("history write failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub messages: Vec<ChatMessage>,
    pub model: String,
    pub max_output_tokens: u32,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => Err(GatewayError::InvalidRequest("no messages".into())),
            Some(m) if !matches!(m.role, Role::System | Role::User) => Err(
                GatewayError::InvalidRequest("first message must be system or user".into()),
            ),
            _ if self.max_output_tokens == 0 => Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Counts were estimated because the backend reported none.
    pub approximate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmExchange {
    pub request: LlmRequest,
    pub completion: String,
    pub usage: Usage,
    pub origin: CallOrigin,
    pub task_id: String,
    pub sequence: u64,
}

/// What a backend returns; missing counts are estimated by the gateway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub completion: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<BackendReply, GatewayError>;
}

fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTokens {
    pub task_id: String,
    pub orchestration_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub per_task: Vec<TaskTokens>,
    /// Arithmetic mean of `per_task`; 0 for an empty batch.
    pub mean: f64,
}

impl BatchReport {
    pub fn from_totals(per_task: Vec<TaskTokens>) -> Self {
        let mean = if per_task.is_empty() {
            0.0
        } else {
            per_task.iter().map(|t| t.orchestration_tokens).sum::<u64>() as f64
                / per_task.len() as f64
        };
        BatchReport { per_task, mean }
    }
}

#[derive(Default)]
struct TaskLedger {
    next_seq: u64,
    records: Vec<ExchangeRecord>,
    log: Option<Arc<TaskLog>>,
    backend: Option<Arc<dyn LlmBackend>>,
}

pub struct LlmGateway {
    default_backend: Option<Arc<dyn LlmBackend>>,
    tasks: Mutex<HashMap<String, TaskLedger>>,
}

impl fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmGateway")
            .field("default_backend", &self.default_backend.is_some())
            .finish_non_exhaustive()
    }
}

impl LlmGateway {
    pub fn new(default_backend: Option<Arc<dyn LlmBackend>>) -> Self {
        LlmGateway {
            default_backend,
            tasks: Mutex::new(HashMap::new()),
        }
    }

    pub fn has_default_backend(&self) -> bool {
        self.default_backend.is_some()
    }

    /// Starts accounting for a task. `backend` overrides the default for
    /// this task only (replay scripts are bound this way); `log` receives
    /// one exchange record per completion.
    pub fn open_task(
        &self,
        task_id: &str,
        log: Option<Arc<TaskLog>>,
        backend: Option<Arc<dyn LlmBackend>>,
    ) {
        self.tasks.lock().unwrap().insert(
            task_id.to_string(),
            TaskLedger {
                next_seq: 1,
                log,
                backend,
                ..TaskLedger::default()
            },
        );
    }

    /// Detaches the task's backend and log; its records stay queryable.
    pub fn close_task(&self, task_id: &str) {
        if let Some(ledger) = self.tasks.lock().unwrap().get_mut(task_id) {
            ledger.backend = None;
            ledger.log = None;
        }
    }

    pub fn complete(
        &self,
        request: LlmRequest,
        origin: CallOrigin,
        task_id: &str,
    ) -> Result<LlmExchange, GatewayError> {
        request.validate()?;
        let backend = {
            let mut tasks = self.tasks.lock().unwrap();
            let ledger = tasks
                .entry(task_id.to_string())
                .or_insert_with(|| TaskLedger {
                    next_seq: 1,
                    ..TaskLedger::default()
                });
            ledger
                .backend
                .clone()
                .or_else(|| self.default_backend.clone())
                .ok_or_else(|| GatewayError::BackendUnavailable("no backend configured".into()))?
        };
        let reply = backend.complete(&request)?;
        let approximate = reply.output_tokens.is_none() || reply.input_tokens.is_none();
        let usage = Usage {
            output_tokens: reply
                .output_tokens
                .unwrap_or_else(|| whitespace_tokens(&reply.completion)),
            input_tokens: reply.input_tokens.unwrap_or_else(|| {
                request
                    .messages
                    .iter()
                    .map(|m| whitespace_tokens(&m.content))
                    .sum()
            }),
            approximate,
        };

        let mut tasks = self.tasks.lock().unwrap();
        let ledger = tasks.get_mut(task_id).expect("ledger created above");
        let seq = ledger.next_seq;
        ledger.next_seq += 1;
        let record = ExchangeRecord {
            seq,
            origin: origin.clone(),
            task_id: task_id.to_string(),
            model: request.model.clone(),
            output_tokens: usage.output_tokens,
            input_tokens: usage.input_tokens,
            approximate,
            completion_sha256: sha256_hex(reply.completion.as_bytes()),
            timestamp: now_iso8601(),
        };
        if let Some(log) = &ledger.log {
            log.store_completion(seq, &reply.completion)?;
            log.append(&record)?;
        }
        ledger.records.push(record);
        drop(tasks);

        Ok(LlmExchange {
            request,
            completion: reply.completion,
            usage,
            origin,
            task_id: task_id.to_string(),
            sequence: seq,
        })
    }

    pub fn exchanges(&self, task_id: &str) -> Result<Vec<ExchangeRecord>, GatewayError> {
        self.tasks
            .lock()
            .unwrap()
            .get(task_id)
            .map(|l| l.records.clone())
            .ok_or_else(|| GatewayError::UnknownTask(task_id.to_string()))
    }

    /// Σ output tokens over orchestrator-origin exchanges of the task.
    pub fn orchestration_token_total(&self, task_id: &str) -> Result<u64, GatewayError> {
        Ok(self
            .exchanges(task_id)?
            .iter()
            .filter(|r| r.origin == CallOrigin::Orchestrator)
            .map(|r| r.output_tokens)
            .sum())
    }

    pub fn batch_report(&self, task_ids: &[String]) -> Result<BatchReport, GatewayError> {
        let per_task = task_ids
            .iter()
            .map(|id| {
                Ok(TaskTokens {
                    task_id: id.clone(),
                    orchestration_tokens: self.orchestration_token_total(id)?,
                })
            })
            .collect::<Result<Vec<_>, GatewayError>>()?;
        Ok(BatchReport::from_totals(per_task))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(text: &str) -> LlmRequest {
        LlmRequest {
            messages: vec![
                ChatMessage::new(Role::System, "you orchestrate"),
                ChatMessage::new(Role::User, text),
            ],
            model: "replay".into(),
            max_output_tokens: 256,
        }
    }

    fn gateway_with(entries: Vec<ReplayEntry>) -> LlmGateway {
        let gw = LlmGateway::new(None);
        gw.open_task(
            "t",
            None,
            Some(Arc::new(ReplayBackend::new(ReplayScript::new(entries)))),
        );
        gw
    }

    #[test]
    fn scripted_passthrough() {
        let gw = gateway_with(vec![ReplayEntry::new("decompose", "PLAN: ...", 42)]);
        let ex = gw
            .complete(req("please decompose this"), CallOrigin::Orchestrator, "t")
            .unwrap();
        assert_eq!(ex.completion, "PLAN: ...");
        assert_eq!(ex.usage.output_tokens, 42);
        assert!(ex.usage.approximate, "input count was not scripted");
        assert_eq!(ex.sequence, 1);
    }

    #[test]
    fn mismatch_carries_diff() {
        let gw = gateway_with(vec![ReplayEntry::new("decompose", "x", 1)]);
        match gw.complete(req("something else"), CallOrigin::Orchestrator, "t") {
            Err(GatewayError::ReplayMismatch {
                expected,
                received_head,
                diff,
                ..
            }) => {
                assert_eq!(expected, "decompose");
                assert_eq!(received_head, "something else");
                assert!(
                    diff.contains("-decompose") && diff.contains("+something else"),
                    "{diff}"
                );
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exhaustion_is_an_error() {
        let gw = gateway_with(vec![ReplayEntry::new("", "x", 1)]);
        gw.complete(req("a"), CallOrigin::Orchestrator, "t")
            .unwrap();
        assert!(matches!(
            gw.complete(req("a"), CallOrigin::Orchestrator, "t"),
            Err(GatewayError::ReplayExhausted { consumed: 1 })
        ));
    }

    #[test]
    fn regex_matcher() {
        let gw = gateway_with(vec![ReplayEntry::new("re:exit code \\d+", "x", 1)]);
        gw.complete(
            req("failed with exit code 3"),
            CallOrigin::Orchestrator,
            "t",
        )
        .unwrap();
    }

    #[test]
    fn origin_filtered_totals() {
        let gw = gateway_with(vec![
            ReplayEntry::new("", "a", 100),
            ReplayEntry::new("", "b", 999),
            ReplayEntry::new("", "c", 50),
        ]);
        gw.complete(req("1"), CallOrigin::Orchestrator, "t")
            .unwrap();
        gw.complete(req("2"), CallOrigin::Subagent("s".into()), "t")
            .unwrap();
        gw.complete(req("3"), CallOrigin::Orchestrator, "t")
            .unwrap();
        assert_eq!(gw.orchestration_token_total("t").unwrap(), 150);
        let seqs: Vec<u64> = gw.exchanges("t").unwrap().iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3]);
    }

    #[test]
    fn zero_exchanges_and_unknown_task() {
        let gw = gateway_with(vec![]);
        assert_eq!(gw.orchestration_token_total("t").unwrap(), 0);
        assert!(matches!(
            gw.orchestration_token_total("nope"),
            Err(GatewayError::UnknownTask(_))
        ));
    }

    #[test]
    fn batch_means() {
        let report = BatchReport::from_totals(vec![
            TaskTokens {
                task_id: "a".into(),
                orchestration_tokens: 100,
            },
            TaskTokens {
                task_id: "b".into(),
                orchestration_tokens: 200,
            },
        ]);
        assert_eq!(report.mean, 150.0);
        let single = BatchReport::from_totals(vec![TaskTokens {
            task_id: "a".into(),
            orchestration_tokens: 77,
        }]);
        assert_eq!(single.mean, 77.0);
    }

    #[test]
    fn request_validation() {
        let gw = gateway_with(vec![ReplayEntry::new("", "x", 1)]);
        let mut r = req("a");
        r.messages.clear();
        assert!(matches!(
            gw.complete(r, CallOrigin::Orchestrator, "t"),
            Err(GatewayError::InvalidRequest(_))
        ));
        let mut r = req("a");
        r.messages.remove(0);
        r.messages.insert(0, ChatMessage::new(Role::Assistant, "x"));
        assert!(matches!(
            gw.complete(r, CallOrigin::Orchestrator, "t"),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn missing_usage_falls_back_to_whitespace_count() {
        let gw = gateway_with(vec![ReplayEntry {
            matcher: String::new(),
            completion: "one two  three".into(),
            output_tokens: None,
            input_tokens: None,
        }]);
        let ex = gw
            .complete(req("a"), CallOrigin::Orchestrator, "t")
            .unwrap();
        assert_eq!(ex.usage.output_tokens, 3);
        assert!(ex.usage.approximate);
    }

    #[test]
    fn no_backend_is_unavailable() {
        let gw = LlmGateway::new(None);
        assert!(matches!(
            gw.complete(req("a"), CallOrigin::Orchestrator, "t"),
            Err(GatewayError::BackendUnavailable(_))
        ));
    }

    proptest! {
        #[test]
        fn origin_partition(tokens in proptest::collection::vec((0u64..10_000, any::<bool>()), 0..40)) {
            let entries = tokens.iter().map(|(t, _)| ReplayEntry::new("", "c", *t)).collect();
            let gw = gateway_with(entries);
            for (_, orchestrator) in &tokens {
                let origin = if *orchestrator { CallOrigin::Orchestrator } else { CallOrigin::Subagent("s".into()) };
                gw.complete(req("q"), origin, "t").unwrap();
            }
            let records = gw.exchanges("t").unwrap();
            let all: u64 = records.iter().map(|r| r.output_tokens).sum();
            let sub: u64 = records.iter().filter(|r| r.origin != CallOrigin::Orchestrator).map(|r| r.output_tokens).sum();
            prop_assert_eq!(gw.orchestration_token_total("t").unwrap() + sub, all);
            prop_assert_eq!(all, tokens.iter().map(|(t, _)| t).sum::<u64>());
            let seqs: Vec<u64> = records.iter().map(|r| r.seq).collect();
            prop_assert_eq!(seqs, (1..=tokens.len() as u64).collect::<Vec<_>>());
        }
    }
}
