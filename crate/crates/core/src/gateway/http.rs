//! Chat-completions style HTTP backend.
//!
//! Sends `{"model", "messages", "max_tokens"}` and reads the completion from
//! either `choices[0].message.content` or `content[0].text`; usage from
//! `usage.{completion_tokens|output_tokens}` and
//! `usage.{prompt_tokens|input_tokens}`.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendReply, GatewayError, LlmBackend, LlmRequest};

#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatBackend {
            url: url.into(),
            api_key,
            agent,
        }
    }
}

fn parse_reply(body: &Value) -> Option<BackendReply> {
    let completion = body
        .pointer("/choices/0/message/content")
        .or_else(|| body.pointer("/content/0/text"))?
        .as_str()?
        .to_string();
    let usage = body.get("usage");
    let field = |names: &[&str]| {
        usage.and_then(|u| names.iter().find_map(|n| u.get(*n).and_then(Value::as_u64)))
    };
    Some(BackendReply {
        completion,
        output_tokens: field(&["completion_tokens", "output_tokens"]),
        input_tokens: field(&["prompt_tokens", "input_tokens"]),
    })
}

impl LlmBackend for HttpChatBackend {
    fn complete(&self, request: &LlmRequest) -> Result<BackendReply, GatewayError> {
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "max_tokens": request.max_output_tokens,
        });
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let unavailable =
            |e: String| GatewayError::BackendUnavailable(format!("{}: {e}", self.url));
        let payload = serde_json::to_vec(&body).expect("request body serializes");
        let mut resp = req
            .header("Content-Type", "application/json")
            .send(&payload[..])
            .map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(unavailable(format!("HTTP {status}")));
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(e.to_string()))?;
        parse_reply(&value).ok_or_else(|| unavailable("response carries no completion text".into()))
    }
}
