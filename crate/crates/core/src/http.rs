//! Blocking JSON POST with bounded retries and exponential backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            initial_backoff_ms: 500,
            timeout_secs: 60,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(1 << attempt.min(16)))
    }
}

pub(crate) fn client(policy: &RetryPolicy) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(policy.timeout_secs))
        .build()
        .map_err(|e| Error::Transport(e.to_string()))
}

/// Read an API key from the named environment variable; empty means none.
pub(crate) fn key_from_env(var: Option<&str>) -> Option<String> {
    var.and_then(|v| std::env::var(v).ok()).filter(|k| !k.is_empty())
}

/// POST `body` as JSON. Transport errors, 429 and 5xx responses are retried;
/// other non-success statuses fail immediately.
pub(crate) fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
    policy: &RetryPolicy,
) -> Result<serde_json::Value> {
    let mut last_err = String::new();
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            std::thread::sleep(policy.backoff(attempt - 1));
        }
        let mut req = client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp
                        .json::<serde_json::Value>()
                        .map_err(|e| Error::MalformedResponse(e.to_string()));
                }
                let text = resp.text().unwrap_or_default();
                last_err = format!("HTTP {status}: {text}");
                if !(status.as_u16() == 429 || status.is_server_error()) {
                    return Err(Error::Transport(last_err));
                }
            }
            Err(e) => last_err = e.to_string(),
        }
        log::debug!("POST {url} attempt {} failed: {last_err}", attempt + 1);
    }
    Err(Error::Transport(format!(
        "{url} failed after {} attempts: {last_err}",
        policy.max_retries + 1
    )))
}
