use serde::{Deserialize, Serialize};

use super::backend::{Generator, Request};
use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};

fn default_base_url_env() -> String {
    "RAGBIAS_CHAT_BASE_URL".into()
}

fn default_api_key_env() -> Option<String> {
    Some("RAGBIAS_CHAT_API_KEY".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    pub model: String,
    /// Base URL such as `https://api.openai.com/v1`. When absent it is read
    /// from the variable named by `base_url_env`.
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_base_url_env")]
    pub base_url_env: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl ChatConfig {
    pub fn new(model: impl Into<String>) -> Self {
        ChatConfig {
            model: model.into(),
            base_url: None,
            base_url_env: default_base_url_env(),
            api_key_env: default_api_key_env(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn resolve_base_url(&self) -> Result<String> {
        self.base_url
            .clone()
            .or_else(|| std::env::var(&self.base_url_env).ok())
            .filter(|u| !u.is_empty())
            .map(|u| u.trim_end_matches('/').to_string())
            .ok_or_else(|| {
                Error::Config(format!(
                    "chat backend `{}`: no base_url and ${} is unset",
                    self.model, self.base_url_env
                ))
            })
    }
}

/// Client for chat-completions style endpoints. Always sends temperature 0.
pub struct ChatGenerator {
    config: ChatConfig,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl ChatGenerator {
    pub fn new(config: ChatConfig) -> Result<Self> {
        let url = format!("{}/chat/completions", config.resolve_base_url()?);
        let api_key = http::key_from_env(config.api_key_env.as_deref());
        let client = http::client(&config.retry)?;
        Ok(ChatGenerator {
            config,
            url,
            api_key,
            client,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn request_body(&self, req: &Request) -> serde_json::Value {
        let mut messages = Vec::new();
        if !req.system.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": req.system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": req.user}));
        serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": 0,
            "max_tokens": req.max_tokens,
        })
    }
}

pub(crate) fn parse_chat_response(resp: &serde_json::Value) -> Result<String> {
    resp.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::MalformedResponse(format!("no choices[0].message.content in {resp}")))
}

impl Generator for ChatGenerator {
    fn tag(&self) -> String {
        format!("chat:{}", self.config.model)
    }

    fn is_remote(&self) -> bool {
        true
    }

    fn generate(&self, req: &Request) -> Result<String> {
        let body = self.request_body(req);
        let resp = http::post_json(&self.client, &self.url, self.api_key.as_deref(), &body, &self.config.retry)?;
        parse_chat_response(&resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::backend::{Task, DEFAULT_MAX_TOKENS};

    #[test]
    fn body_shape() {
        let mut cfg = ChatConfig::new("gpt-x");
        cfg.base_url = Some("http://localhost:1/v1/".into());
        let g = ChatGenerator::new(cfg).unwrap();
        assert_eq!(g.url(), "http://localhost:1/v1/chat/completions");
        let body = g.request_body(&Request {
            system: "sys".into(),
            user: "usr".into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            task: Task::Other,
        });
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["max_tokens"], 16);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "usr");
    }

    #[test]
    fn response_parsing() {
        let ok = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "B"}}]});
        assert_eq!(parse_chat_response(&ok).unwrap(), "B");
        let bad = serde_json::json!({"choices": []});
        assert!(matches!(parse_chat_response(&bad), Err(Error::MalformedResponse(_))));
    }

    #[test]
    fn missing_base_url_is_config_error() {
        let mut cfg = ChatConfig::new("m");
        cfg.base_url_env = "RAGBIAS_TEST_SURELY_UNSET_VAR".into();
        assert!(matches!(ChatGenerator::new(cfg), Err(Error::Config(_))));
    }
}
