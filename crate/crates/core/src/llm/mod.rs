//! Chat-completion gateway shared by every agentic stage.
//!
//! Two providers exist: an OpenAI-compatible HTTP client and a scripted mock
//! that replays a response table, used for offline and deterministic runs.

mod http;
mod json;
mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBinding, HttpProvider};
pub use json::{extract_json, NoJsonFound};
pub use mock::{MockBinding, MockEntry, ScriptedMock, WILDCARD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    #[default]
    FreeText,
    JsonObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub response_format: ResponseFormat,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "messages must be non-empty".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// System prompt and every message, joined; what mock matchers see.
    pub fn transcript_text(&self) -> String {
        let mut text = self.system_prompt.clone();
        for m in &self.messages {
            text.push('\n');
            text.push_str(&m.content);
        }
        text
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    #[default]
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("exhausted mock script")]
    ExhaustedScript,
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("gateway configuration: {0}")]
    Config(String),
}

/// A chat-completion backend.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// How a stage reaches its model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum ProviderBinding {
    OpenaiCompatibleHttp(HttpBinding),
    ScriptedMock(MockBinding),
}

impl ProviderBinding {
    /// A binding for the scripted mock with the given entries.
    pub fn mock(entries: Vec<MockEntry>) -> Self {
        ProviderBinding::ScriptedMock(MockBinding {
            script: entries,
            script_file: None,
        })
    }

    /// Makes relative script paths absolute against `base`.
    pub fn rebase(&mut self, base: &std::path::Path) {
        if let ProviderBinding::ScriptedMock(MockBinding {
            script_file: Some(file),
            ..
        }) = self
        {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
    }

    /// Inlines an external mock script so the binding is self-contained.
    pub fn inline(&mut self) -> Result<(), GatewayError> {
        if let ProviderBinding::ScriptedMock(binding) = self {
            if let Some(file) = binding.script_file.take() {
                let mut entries = mock::read_script(&file)?;
                binding.script.append(&mut entries);
            }
        }
        Ok(())
    }
}

/// A connected provider.
pub struct Gateway {
    provider: Box<dyn ChatProvider>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn connect(binding: &ProviderBinding) -> Result<Self, GatewayError> {
        let provider: Box<dyn ChatProvider> = match binding {
            ProviderBinding::OpenaiCompatibleHttp(http) => {
                Box::new(HttpProvider::new(http.clone())?)
            }
            ProviderBinding::ScriptedMock(mock) => {
                let mut entries = mock.script.clone();
                if let Some(file) = &mock.script_file {
                    entries.extend(mock::read_script(file)?);
                }
                Box::new(ScriptedMock::new(entries))
            }
        };
        Ok(Self { provider })
    }

    pub fn from_provider(provider: Box<dyn ChatProvider>) -> Self {
        Self { provider }
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        self.provider.complete(req)
    }
}

/// Model parameters a stage uses when talking to its gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageModel {
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for StageModel {
    fn default() -> Self {
        Self {
            model_name: "gpt-4.1".into(),
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }
}

impl StageModel {
    pub fn request(
        &self,
        system_prompt: String,
        messages: Vec<ChatMessage>,
        json: bool,
    ) -> ChatRequest {
        ChatRequest {
            system_prompt,
            messages,
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            response_format: if json {
                ResponseFormat::JsonObject
            } else {
                ResponseFormat::FreeText
            },
        }
    }
}

/// One recorded exchange, kept for audit trails.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exchange {
    pub stage: String,
    pub request: ChatRequest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<ChatResponse>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Sends `req` and records the exchange into `log`.
pub fn complete_logged(
    gateway: &Gateway,
    stage: &str,
    req: ChatRequest,
    log: &mut Vec<Exchange>,
) -> Result<ChatResponse, GatewayError> {
    let result = gateway.complete(&req);
    log.push(Exchange {
        stage: stage.to_string(),
        request: req,
        response: result.as_ref().ok().cloned(),
        error: result.as_ref().err().map(ToString::to_string),
    });
    result
}
