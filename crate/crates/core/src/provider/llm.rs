//! OpenAI-compatible chat-completions client.

use super::{CandidateExpert, PromptBundle, Provider, ProviderError};
use crate::tpe::Dim;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Base URL up to, not including, `/chat/completions`.
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    /// Name of the environment variable holding the API key. Empty for
    /// endpoints without auth.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Extra attempts on transport errors, 429 and 5xx.
    pub max_retries: usize,
    pub max_tokens: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            temperature: 0.1,
            api_key_env: "RESBOOST_LLM_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 2,
            max_tokens: 1024,
        }
    }
}

pub struct LlmProvider {
    config: LlmConfig,
    key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for LlmProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmProvider")
            .field("config", &self.config)
            .field("key", &self.key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl LlmProvider {
    pub fn new(config: LlmConfig) -> Result<Self, ProviderError> {
        let key = if config.api_key_env.is_empty() {
            None
        } else {
            match std::env::var(&config.api_key_env) {
                Ok(k) if !k.is_empty() => Some(k),
                _ => {
                    return Err(ProviderError::Config(format!(
                        "environment variable {} is not set",
                        config.api_key_env
                    )))
                }
            }
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(LlmProvider { config, key, client })
    }

    fn complete(&self, messages: &[Value], seed: u64) -> Result<String, ProviderError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "seed": seed,
            "messages": messages,
        });
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 << attempt.min(5)));
            }
            let mut req = self.client.post(&url).json(&body);
            if let Some(k) = &self.key {
                req = req.bearer_auth(k);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.as_u16() == 429 || status.is_server_error() {
                last = format!("HTTP {status}");
                continue;
            }
            if !status.is_success() {
                let text = resp.text().unwrap_or_default();
                return Err(ProviderError::Transport(format!("HTTP {status}: {text}")));
            }
            let v: Value = resp.json().map_err(|e| ProviderError::Transport(e.to_string()))?;
            return v["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| ProviderError::Transport("response has no choices[0].message.content".into()));
        }
        Err(ProviderError::Transport(last))
    }

    fn base_messages(prompt: &PromptBundle) -> Vec<Value> {
        vec![
            json!({"role": "system", "content": prompt.task_header}),
            json!({"role": "user", "content": prompt.render()}),
        ]
    }
}

/// Extracts the expert, intent and search space from a model reply.
pub fn parse_response(raw: &str) -> Result<CandidateExpert, ProviderError> {
    let fail = |message: &str| ProviderError::Extraction {
        message: message.into(),
        raw: raw.into(),
    };
    let open = raw.find("```").ok_or_else(|| fail("no fenced code block"))?;
    let after = &raw[open + 3..];
    // skip an info string such as ```dsl
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let inner = &after[body_start..];
    let close = inner.find("```").ok_or_else(|| fail("unterminated code block"))?;
    let dsl_text = inner[..close].trim().to_string();
    let rest = &inner[close + 3..];

    let intent = rest
        .lines()
        .find_map(|l| l.trim().strip_prefix("INTENT:"))
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    let search_space = match rest.find("SEARCH_SPACE:") {
        None => Vec::new(),
        Some(i) => {
            let json = rest[i + "SEARCH_SPACE:".len()..].trim_start();
            let mut stream = serde_json::Deserializer::from_str(json).into_iter::<Vec<Dim>>();
            match stream.next() {
                Some(Ok(dims)) => dims,
                Some(Err(e)) => return Err(fail(&format!("SEARCH_SPACE is not a valid JSON array of dims: {e}"))),
                None => Vec::new(),
            }
        }
    };
    Ok(CandidateExpert {
        dsl_text,
        intent,
        search_space,
        raw: raw.into(),
    })
}

impl Provider for LlmProvider {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn propose(&mut self, prompt: &PromptBundle, seed: u64) -> Result<CandidateExpert, ProviderError> {
        let raw = self.complete(&Self::base_messages(prompt), seed)?;
        parse_response(&raw)
    }

    fn repair(
        &mut self,
        prompt: &PromptBundle,
        candidate: &CandidateExpert,
        report: &str,
        attempt: usize,
    ) -> Result<CandidateExpert, ProviderError> {
        let mut messages = Self::base_messages(prompt);
        messages.push(json!({"role": "assistant", "content": candidate.raw}));
        messages.push(json!({
            "role": "user",
            "content": format!(
                "Your expert was rejected: {report}\nFix it and reply again in the same format \
                 (code block, INTENT line, SEARCH_SPACE line)."
            ),
        }));
        let raw = self.complete(&messages, attempt as u64)?;
        parse_response(&raw)
    }
}
