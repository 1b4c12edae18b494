use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, FinishReason, GatewayError, Usage};

/// Matcher that fires on every request.
pub const WILDCARD: &str = "*";

/// One row of a mock response table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    /// `*`, or a substring of the system prompt plus messages.
    #[serde(default = "wildcard")]
    pub matcher: String,
    /// Further substrings that must all be present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub also: Vec<String>,
    #[serde(default)]
    pub response: String,
    #[serde(default)]
    pub finish_reason: FinishReason,
    /// Repeating entries are never consumed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeat: bool,
    /// When set the entry answers with a scripted gateway failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn wildcard() -> String {
    WILDCARD.to_string()
}

impl MockEntry {
    pub fn new(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: matcher.into(),
            also: Vec::new(),
            response: response.into(),
            finish_reason: FinishReason::Stop,
            repeat: false,
            error: None,
        }
    }

    pub fn any(response: impl Into<String>) -> Self {
        Self::new(WILDCARD, response)
    }

    pub fn failing(matcher: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            error: Some(message.into()),
            ..Self::new(matcher, "")
        }
    }

    pub fn also(mut self, needle: impl Into<String>) -> Self {
        self.also.push(needle.into());
        self
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }

    fn fires(&self, text: &str) -> bool {
        (self.matcher == WILDCARD || text.contains(&self.matcher))
            && self
                .also
                .iter()
                .all(|needle| text.contains(needle.as_str()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockBinding {
    #[serde(default)]
    pub script: Vec<MockEntry>,
    /// JSON file holding an array of entries, appended after `script`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_file: Option<PathBuf>,
}

pub(crate) fn read_script(path: &Path) -> Result<Vec<MockEntry>, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        GatewayError::Config(format!("cannot read mock script {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| GatewayError::Config(format!("bad mock script {}: {e}", path.display())))
}

/// Replays a response table. Each request takes the first unconsumed entry
/// whose matcher fires.
#[derive(Debug)]
pub struct ScriptedMock {
    table: Mutex<Vec<(MockEntry, bool)>>,
}

impl ScriptedMock {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        Self {
            table: Mutex::new(entries.into_iter().map(|e| (e, false)).collect()),
        }
    }

    /// Entries not yet consumed (repeating entries always count).
    pub fn remaining(&self) -> usize {
        let table = self.table.lock().unwrap_or_else(|p| p.into_inner());
        table.iter().filter(|(e, used)| e.repeat || !used).count()
    }
}

impl ChatProvider for ScriptedMock {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let text = req.transcript_text();
        let mut table = self.table.lock().unwrap_or_else(|p| p.into_inner());
        let (entry, used) = table
            .iter_mut()
            .find(|(e, used)| (e.repeat || !*used) && e.fires(&text))
            .ok_or(GatewayError::ExhaustedScript)?;
        *used = true;
        if let Some(message) = &entry.error {
            return Err(GatewayError::Scripted(message.clone()));
        }
        Ok(ChatResponse {
            content: entry.response.clone(),
            finish_reason: entry.finish_reason,
            usage: Usage {
                prompt_tokens: text.split_whitespace().count() as u64,
                completion_tokens: entry.response.split_whitespace().count() as u64,
            },
        })
    }
}
