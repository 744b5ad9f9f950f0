use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::net;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("no fixture completion for prompt {0}")]
    NoFixture(String),
    #[error("environment variable `{0}` with the API key is not set")]
    MissingApiKey(String),
    #[error("generation request failed: {0}")]
    Request(String),
    #[error(transparent)]
    Denied(#[from] net::OutboundDenied),
    #[error("fixture file {path}: {message}")]
    Fixture { path: String, message: String },
}

/// Text completion backend.
pub trait GenerationClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;

    /// Recorded as the provenance of generated attributes.
    fn provenance(&self) -> String;
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Canned completions keyed by the SHA-256 of the prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureClient {
    completions: BTreeMap<String, String>,
}

impl FixtureClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &str, completion: impl Into<String>) {
        self.completions.insert(prompt_hash(prompt), completion.into());
    }

    pub fn len(&self) -> usize {
        self.completions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completions.is_empty()
    }

    pub fn merge(&mut self, other: FixtureClient) {
        self.completions.extend(other.completions);
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let err = |message: String| ClientError::Fixture {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fixture serializes");
        s.push('\n');
        s
    }
}

impl GenerationClient for FixtureClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let key = prompt_hash(prompt);
        self.completions
            .get(&key)
            .cloned()
            .ok_or(ClientError::NoFixture(key))
    }

    fn provenance(&self) -> String {
        "fixture".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteLlmConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for RemoteLlmConfig {
    fn default() -> Self {
        RemoteLlmConfig {
            url: "http://localhost:8081/v1/complete".into(),
            model: "remote".into(),
            api_key_env: "POLICYTRACE_LLM_API_KEY".into(),
            max_tokens: 1024,
            temperature: 0.0,
            timeout_secs: 60,
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    completion: String,
}

/// HTTP completion client: `POST {url}` with `{prompt, max_tokens, temperature}`,
/// expecting `{completion}` back.
pub struct RemoteLlmClient {
    config: RemoteLlmConfig,
    http: OnceLock<reqwest::blocking::Client>,
}

impl RemoteLlmClient {
    pub fn new(config: RemoteLlmConfig) -> Self {
        RemoteLlmClient {
            config,
            http: OnceLock::new(),
        }
    }
}

impl GenerationClient for RemoteLlmClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let key = std::env::var(&self.config.api_key_env)
            .map_err(|_| ClientError::MissingApiKey(self.config.api_key_env.clone()))?;
        net::authorize(&self.config.url)?;
        let http = match self.http.get() {
            Some(c) => c,
            None => {
                let c = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(self.config.timeout_secs))
                    .build()
                    .map_err(|e| ClientError::Request(e.to_string()))?;
                self.http.get_or_init(|| c)
            }
        };
        let resp = http
            .post(&self.config.url)
            .bearer_auth(key)
            .json(&CompletionRequest {
                prompt,
                max_tokens: self.config.max_tokens,
                temperature: self.config.temperature,
            })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| ClientError::Request(e.to_string()))?;
        let body: CompletionResponse = resp.json().map_err(|e| ClientError::Request(e.to_string()))?;
        Ok(body.completion)
    }

    fn provenance(&self) -> String {
        self.config.model.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_lookup_by_hash() {
        let mut c = FixtureClient::new();
        c.insert("prompt one", "answer");
        assert_eq!(c.complete("prompt one").unwrap(), "answer");
        assert!(matches!(c.complete("prompt two"), Err(ClientError::NoFixture(_))));
        let again: FixtureClient = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(again, c);
        assert_eq!(prompt_hash("abc").len(), 64);
    }

    #[test]
    fn remote_needs_key_before_network() {
        let client = RemoteLlmClient::new(RemoteLlmConfig {
            api_key_env: "POLICYTRACE_TEST_KEY_THAT_IS_NOT_SET".into(),
            ..Default::default()
        });
        assert!(matches!(client.complete("x"), Err(ClientError::MissingApiKey(_))));
    }
}
