//! Chat-completions transport used for generation, off-topic rewriting and
//! judging.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("LLM endpoint failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("LLM endpoint rejected the request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed LLM response: {0}")]
    Protocol(String),
    #[error("LLM returned an empty completion")]
    EmptyCompletion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// A successful completion and how many HTTP attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

/// Anything that turns a message list into one completion.
pub trait ChatClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError>;

    fn model_name(&self) -> &str;
}

/// Connection and sampling settings for an OpenAI-compatible endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChatSettings {
    /// Base address; requests go to `{endpoint}/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    /// Extra attempts after a transient failure.
    pub retries: u32,
    pub timeout_secs: u64,
    pub backoff_ms: u64,
}

impl Default for ChatSettings {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000".into(),
            model: "default".into(),
            temperature: 1.0,
            max_tokens: 512,
            seed: None,
            retries: 2,
            timeout_secs: 120,
            backoff_ms: 500,
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

/// Blocking client for `POST {endpoint}/v1/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    settings: ChatSettings,
    url: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Retry(String),
    Fail(LlmError),
}

impl HttpChatClient {
    pub fn new(settings: ChatSettings, api_key: Option<String>) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport { attempts: 0, message: e.to_string() })?;
        let url = format!("{}/v1/chat/completions", settings.endpoint.trim_end_matches('/'));
        Ok(Self { settings, url, api_key, http })
    }

    pub fn settings(&self) -> &ChatSettings {
        &self.settings
    }

    fn attempt(&self, messages: &[ChatMessage]) -> Result<String, Attempt> {
        let body = ChatRequest {
            model: &self.settings.model,
            messages,
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
            seed: self.settings.seed,
        };
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fail(LlmError::Rejected { status: status.as_u16(), body: text }));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fail(LlmError::Protocol(format!("body is not JSON: {e}"))))?;
        let content = value
            .pointer("/choices/0/message/content")
            .ok_or_else(|| Attempt::Fail(LlmError::Protocol("missing choices[0].message.content".into())))?;
        match content {
            Value::String(s) => Ok(s.clone()),
            Value::Null => Ok(String::new()),
            other => Err(Attempt::Fail(LlmError::Protocol(format!("content is not a string: {other}")))),
        }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let max_attempts = self.settings.retries + 1;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(messages) {
                Ok(text) if text.trim().is_empty() => return Err(LlmError::EmptyCompletion),
                Ok(text) => return Ok(Completion { text, attempts }),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempts >= max_attempts {
                        return Err(LlmError::Transport { attempts, message });
                    }
                    log::warn!("LLM attempt {attempts} failed ({message}), retrying");
                    thread::sleep(Duration::from_millis(self.settings.backoff_ms * u64::from(attempts)));
                }
            }
        }
    }

    fn model_name(&self) -> &str {
        &self.settings.model
    }
}

/// Replays canned completions in order and records every request. Useful for
/// tests and offline dry runs.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    replies: Mutex<VecDeque<Result<String, String>>>,
    requests: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedChat {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().map(|s| Ok(s.into())).collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Queues a transport failure.
    pub fn push_failure(&self, message: impl Into<String>) {
        self.replies.lock().unwrap().push_back(Err(message.into()));
    }

    pub fn push_reply(&self, reply: impl Into<String>) {
        self.replies.lock().unwrap().push_back(Ok(reply.into()));
    }

    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.requests.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl ChatClient for ScriptedChat {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        self.requests.lock().unwrap().push(messages.to_vec());
        match self.replies.lock().unwrap().pop_front() {
            Some(Ok(text)) if text.trim().is_empty() => Err(LlmError::EmptyCompletion),
            Some(Ok(text)) => Ok(Completion { text, attempts: 1 }),
            Some(Err(message)) => Err(LlmError::Transport { attempts: 1, message }),
            None => Err(LlmError::Transport { attempts: 1, message: "script exhausted".into() }),
        }
    }

    fn model_name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replays_in_order() {
        let chat = ScriptedChat::new(["a", "b"]);
        let msgs = [ChatMessage::user("hi")];
        assert_eq!(chat.complete(&msgs).unwrap().text, "a");
        assert_eq!(chat.complete(&msgs).unwrap().text, "b");
        assert!(chat.complete(&msgs).is_err());
        assert_eq!(chat.calls(), 3);
    }

    #[test]
    fn request_body_shape() {
        let msgs = [ChatMessage::system("s"), ChatMessage::user("u")];
        let body = ChatRequest { model: "m", messages: &msgs, temperature: 1.0, max_tokens: 30, seed: None };
        assert_eq!(
            serde_json::to_string(&body).unwrap(),
            r#"{"model":"m","messages":[{"role":"system","content":"s"},{"role":"user","content":"u"}],"temperature":1.0,"max_tokens":30}"#
        );
    }
}
