//! Test-case execution behind the adapter protocol.
//!
//! Whatever the system under test does is recorded as data in a
//! [`RawRunRecord`]; only harness-internal faults would ever surface as Rust
//! errors, and those are folded into the `adapter_error` exit.

pub mod protocol;
pub mod sim;
mod subprocess;

use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::ModelConfig;
use crate::spec::AgentId;
pub use protocol::{
    parse_line, AdapterLine, ProtocolError, RawEvent, ResultExit, RunRequest, ToolStatus,
};
pub use subprocess::SubprocessAdapter;

pub const RAW_SCHEMA: &str = "flare-raw/1";

/// How much of the adapter's stderr is kept, in bytes.
pub const STDERR_TAIL_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunLimits {
    pub wall_clock_timeout_secs: u64,
    pub max_events: usize,
    pub loop_repeat_threshold: usize,
}

impl Default for RunLimits {
    fn default() -> Self {
        Self {
            wall_clock_timeout_secs: 300,
            max_events: 500,
            loop_repeat_threshold: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("run limits must all be positive (got {0:?})")]
pub struct InvalidLimits(pub RunLimits);

impl RunLimits {
    pub fn validate(&self) -> Result<(), InvalidLimits> {
        if self.wall_clock_timeout_secs == 0
            || self.max_events == 0
            || self.loop_repeat_threshold == 0
        {
            Err(InvalidLimits(*self))
        } else {
            Ok(())
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.wall_clock_timeout_secs)
    }
}

/// One concrete execution request, derived from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub case_id: String,
    pub seed_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_seed: Option<u64>,
    pub input: String,
    pub config: ModelConfig,
    pub sequence: Vec<AgentId>,
    pub max_rounds: u32,
}

impl TestCase {
    pub fn request(&self) -> RunRequest {
        RunRequest::new(
            &self.case_id,
            &self.input,
            &self.config,
            &self.sequence,
            self.max_rounds,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunExit {
    Completed,
    Timeout,
    EventCap,
    AdapterError,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRunRecord {
    pub schema_version: String,
    pub case_id: String,
    pub events: Vec<RawEvent>,
    pub exit: RunExit,
    #[serde(default)]
    pub detail: String,
    #[serde(default)]
    pub stderr_tail: String,
    pub started_at_ms: u64,
    pub ended_at_ms: u64,
}

impl RawRunRecord {
    pub fn has_termination(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(e, RawEvent::Termination { .. }))
    }
}

/// Anything that can run a test case to a raw record.
pub trait Adapter: Send + Sync {
    fn execute(&self, case: &TestCase, limits: &RunLimits) -> RawRunRecord;

    /// Cheap bootstrap check run once before a campaign starts.
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub(crate) enum Incoming {
    Line(String),
    Eof,
    TimedOut,
}

pub(crate) enum DriveEnd {
    Result { exit: ResultExit, detail: String },
    Eof,
    Timeout,
    EventCap,
    Violation { line: String, error: ProtocolError },
}

pub(crate) struct Drive {
    pub events: Vec<RawEvent>,
    pub end: DriveEnd,
}

/// Reads adapter lines until a run result, EOF, timeout, event cap or
/// protocol violation. Blank lines are tolerated.
pub(crate) fn drive(
    mut next: impl FnMut(Instant) -> Incoming,
    limits: &RunLimits,
    deadline: Instant,
) -> Drive {
    let mut events = Vec::new();
    let mut last_seq = 0;
    loop {
        let line = match next(deadline) {
            Incoming::Line(l) => l,
            Incoming::Eof => {
                return Drive {
                    events,
                    end: DriveEnd::Eof,
                }
            }
            Incoming::TimedOut => {
                return Drive {
                    events,
                    end: DriveEnd::Timeout,
                }
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line.trim_end_matches('\r'), &mut last_seq) {
            Ok(AdapterLine::Event(ev)) => {
                if events.len() >= limits.max_events {
                    return Drive {
                        events,
                        end: DriveEnd::EventCap,
                    };
                }
                events.push(ev);
            }
            Ok(AdapterLine::RunResult { exit, detail }) => {
                return Drive {
                    events,
                    end: DriveEnd::Result { exit, detail },
                }
            }
            Err(error) => {
                return Drive {
                    events,
                    end: DriveEnd::Violation { line, error },
                }
            }
        }
    }
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize_utterance(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// True when the run timed out, or when one speaker produced the same
/// normalized non-blank utterance `threshold` times in a row.
///
/// Only utterance events take part in the window; tool calls between two
/// identical turns do not break a loop. Blank turns are left to the
/// empty-utterance boundary.
pub fn detect_dead_loop(events: &[RawEvent], exit: RunExit, threshold: usize) -> bool {
    if exit == RunExit::Timeout {
        return true;
    }
    let threshold = threshold.max(1);
    let mut prev: Option<(&AgentId, String)> = None;
    let mut run = 0;
    for ev in events {
        let RawEvent::Utterance { agent, content, .. } = ev else {
            continue;
        };
        let norm = normalize_utterance(content);
        if norm.is_empty() {
            prev = None;
            run = 0;
            continue;
        }
        let same = matches!(&prev, Some((a, c)) if *a == agent && *c == norm);
        run = if same { run + 1 } else { 1 };
        prev = Some((agent, norm));
        if run >= threshold {
            return true;
        }
    }
    false
}
