//! Chat-completion backends.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
}

/// Anything that turns a role-tagged transcript into one completion.
pub trait PlannerBackend: Send + Sync {
    fn complete(&self, messages: &[Message]) -> Result<String, BackendError>;
}

/// Replays canned completions in order; after the last one it keeps
/// returning the last. Safe to share, but a shared instance interleaves
/// its script across callers.
#[derive(Debug)]
pub struct ScriptedBackend {
    completions: Vec<String>,
    next: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(completions: Vec<String>) -> Result<Self, BackendError> {
        if completions.is_empty() {
            return Err(BackendError::Config("scripted backend needs at least one completion".into()));
        }
        Ok(ScriptedBackend {
            completions,
            next: AtomicUsize::new(0),
        })
    }

    /// Load every regular file of `dir`, ordered by file name.
    pub fn from_dir(dir: &Path) -> Result<Self, BackendError> {
        let entries = fs::read_dir(dir).map_err(|e| BackendError::Config(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let completions = paths
            .iter()
            .map(|p| fs::read_to_string(p).map_err(|e| BackendError::Config(format!("{}: {e}", p.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        ScriptedBackend::new(completions)
    }

    pub fn calls(&self) -> usize {
        self.next.load(Ordering::SeqCst)
    }
}

impl PlannerBackend for ScriptedBackend {
    fn complete(&self, _messages: &[Message]) -> Result<String, BackendError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        let text = &self.completions[i.min(self.completions.len() - 1)];
        if text.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(text.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// e.g. `https://api.example.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

fn default_timeout() -> u64 {
    120
}

/// Chat-completion endpoint speaking the common `messages`-array protocol.
pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("config", &self.config).finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Fails before any network traffic if the key variable is unset or empty.
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::Config(format!("environment variable `{}` is not set", config.api_key_env)))?;
        if config.model.trim().is_empty() {
            return Err(BackendError::Config("model name is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(RemoteBackend { config, api_key, client })
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, messages: &[Message]) -> Value {
        let mut body = json!({ "model": self.config.model, "messages": messages });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

/// Content of the first choice's message.
pub fn completion_from_response(body: &Value) -> Result<String, BackendError> {
    let content = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::BadResponse("no choices[0].message.content".into()))?;
    if content.trim().is_empty() {
        return Err(BackendError::EmptyCompletion);
    }
    Ok(content.to_string())
}

impl PlannerBackend for RemoteBackend {
    fn complete(&self, messages: &[Message]) -> Result<String, BackendError> {
        let resp = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(&self.request_body(messages))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    BackendError::Timeout(Duration::from_secs(self.config.timeout_secs))
                } else {
                    BackendError::Transport(e.to_string())
                }
            })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| BackendError::BadResponse(e.to_string()))?;
        completion_from_response(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_repeats_last_completion() {
        let b = ScriptedBackend::new(vec!["a".into(), "b".into()]).unwrap();
        let got: Vec<_> = (0..4).map(|_| b.complete(&[]).unwrap()).collect();
        assert_eq!(got, ["a", "b", "b", "b"]);
        assert_eq!(b.calls(), 4);
        assert!(ScriptedBackend::new(vec![]).is_err());
    }

    #[test]
    fn missing_key_is_a_config_error() {
        let cfg = RemoteConfig {
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            api_key_env: "DELINEATE_TEST_SURELY_UNSET_KEY".into(),
            timeout_secs: 1,
            temperature: None,
        };
        assert!(matches!(RemoteBackend::new(cfg), Err(BackendError::Config(_))));
    }

    #[test]
    fn response_extraction() {
        let body = json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(completion_from_response(&body).unwrap(), "hi");
        assert!(matches!(
            completion_from_response(&json!({"choices": []})),
            Err(BackendError::BadResponse(_))
        ));
        let empty = json!({"choices": [{"message": {"content": "  "}}]});
        assert!(matches!(completion_from_response(&empty), Err(BackendError::EmptyCompletion)));
    }

    #[test]
    fn roles_serialize_lowercase() {
        let m = serde_json::to_value(Message::assistant("x")).unwrap();
        assert_eq!(m, json!({"role": "assistant", "content": "x"}));
    }
}
