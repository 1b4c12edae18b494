use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    ChatProvider, ChatRequest, ChatResponse, FinishReason, GatewayError, ResponseFormat, Role,
    Usage,
};

pub const ENDPOINT_ENV: &str = "FLARE_LLM_ENDPOINT";
pub const API_KEY_ENV: &str = "FLARE_LLM_API_KEY";

/// Settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBinding {
    /// Base URL or full `/chat/completions` URL; falls back to `FLARE_LLM_ENDPOINT`.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for HttpBinding {
    fn default() -> Self {
        Self {
            endpoint: None,
            api_key_env: API_KEY_ENV.to_string(),
            timeout_secs: 120,
            max_attempts: 5,
            backoff_base_ms: 1000,
        }
    }
}

pub struct HttpProvider {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    binding: HttpBinding,
}

impl HttpProvider {
    pub fn new(binding: HttpBinding) -> Result<Self, GatewayError> {
        let base = binding
            .endpoint
            .clone()
            .or_else(|| std::env::var(ENDPOINT_ENV).ok())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                GatewayError::Config(format!("no endpoint configured and {ENDPOINT_ENV} unset"))
            })?;
        let trimmed = base.trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let api_key = std::env::var(&binding.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(binding.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            url,
            api_key,
            agent,
            binding,
        })
    }

    fn body(req: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": req.system_prompt})];
        for m in &req.messages {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        let mut body = json!({
            "model": req.model_name,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if req.response_format == ResponseFormat::JsonObject {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<Value, Attempt> {
        let mut request = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}: {text}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(GatewayError::Status { status, body: text }));
        }
        serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(GatewayError::BadResponse(e.to_string())))
    }
}

enum Attempt {
    Retry(String),
    Fatal(GatewayError),
}

impl ChatProvider for HttpProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = Self::body(req);
        let attempts = self.binding.max_attempts.max(1);
        let mut last = String::new();
        for n in 0..attempts {
            if n > 0 {
                let delay = self
                    .binding
                    .backoff_base_ms
                    .saturating_mul(1 << (n - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&body) {
                Ok(v) => return parse_completion(&v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("chat completion attempt {} failed: {msg}", n + 1);
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }
}

fn parse_completion(v: &Value) -> Result<ChatResponse, GatewayError> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::BadResponse("missing choices[0]".into()))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::BadResponse("missing choices[0].message.content".into()))?
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Error,
    };
    let usage = Usage {
        prompt_tokens: v
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        completion_tokens: v
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    Ok(ChatResponse {
        content,
        finish_reason,
        usage,
    })
}
