use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::{
    drive, now_ms, Adapter, DriveEnd, Incoming, RawRunRecord, ResultExit, RunExit, RunLimits,
    TestCase, RAW_SCHEMA, STDERR_TAIL_BYTES,
};

/// How long an adapter may linger after sending its run result.
const EXIT_GRACE: Duration = Duration::from_secs(2);

/// Runs each test case in a fresh adapter process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubprocessAdapter {
    argv: Vec<String>,
    cwd: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommandLineError {
    #[error("adapter command line is empty")]
    Empty,
    #[error("adapter command line has unbalanced quoting: {0}")]
    Quoting(String),
}

impl SubprocessAdapter {
    pub fn new(argv: Vec<String>) -> Result<Self, CommandLineError> {
        if argv.is_empty() {
            return Err(CommandLineError::Empty);
        }
        Ok(Self { argv, cwd: None })
    }

    /// Splits a shell-style command line (no expansion is performed).
    pub fn from_command_line(cmd: &str) -> Result<Self, CommandLineError> {
        let argv = shlex::split(cmd).ok_or_else(|| CommandLineError::Quoting(cmd.to_string()))?;
        Self::new(argv)
    }

    pub fn with_cwd(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cwd = Some(dir.into());
        self
    }

    pub fn argv(&self) -> &[String] {
        &self.argv
    }

    fn spawn(&self) -> std::io::Result<Child> {
        let mut cmd = Command::new(&self.argv[0]);
        cmd.args(&self.argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(dir) = &self.cwd {
            cmd.current_dir(dir);
        }
        cmd.spawn()
    }
}

fn program_exists(program: &str, cwd: Option<&Path>) -> bool {
    let p = Path::new(program);
    if p.components().count() > 1 {
        let full = match cwd {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        };
        return full.exists();
    }
    std::env::var_os("PATH")
        .map(|paths| std::env::split_paths(&paths).any(|d| d.join(program).is_file()))
        .unwrap_or(false)
}

/// Keeps the last `cap` bytes of a stream.
fn tail_of(mut r: impl Read, cap: usize) -> String {
    let mut tail: VecDeque<u8> = VecDeque::with_capacity(cap);
    let mut buf = [0u8; 4096];
    while let Ok(n) = r.read(&mut buf) {
        if n == 0 {
            break;
        }
        tail.extend(&buf[..n]);
        while tail.len() > cap {
            tail.pop_front();
        }
    }
    String::from_utf8_lossy(&Vec::from(tail)).into_owned()
}

fn push_tail(tail: &mut String, extra: &str) {
    if !tail.is_empty() && !tail.ends_with('\n') {
        tail.push('\n');
    }
    tail.push_str(extra);
}

fn wait_with_grace(child: &mut Child, grace: Duration) -> Option<std::process::ExitStatus> {
    let until = Instant::now() + grace;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Some(status),
            Ok(None) if Instant::now() < until => thread::sleep(Duration::from_millis(10)),
            _ => {
                let _ = child.kill();
                return child.wait().ok();
            }
        }
    }
}

impl Adapter for SubprocessAdapter {
    fn check(&self) -> Result<(), String> {
        if program_exists(&self.argv[0], self.cwd.as_deref()) {
            Ok(())
        } else {
            Err(format!("adapter program `{}` not found", self.argv[0]))
        }
    }

    fn execute(&self, case: &TestCase, limits: &RunLimits) -> RawRunRecord {
        let started_at_ms = now_ms();
        let record = |events, exit, detail: String, stderr_tail: String| RawRunRecord {
            schema_version: RAW_SCHEMA.to_string(),
            case_id: case.case_id.clone(),
            events,
            exit,
            detail,
            stderr_tail,
            started_at_ms,
            ended_at_ms: now_ms(),
        };

        let mut child = match self.spawn() {
            Ok(c) => c,
            Err(e) => {
                return record(
                    Vec::new(),
                    RunExit::AdapterError,
                    format!("failed to spawn `{}`: {e}", self.argv[0]),
                    String::new(),
                )
            }
        };
        let deadline = Instant::now() + limits.timeout();

        let stdout = child.stdout.take().expect("stdout piped");
        let stderr = child.stderr.take().expect("stderr piped");
        let (tx, rx) = mpsc::channel::<Option<String>>();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(Some(l)).is_err() {
                            return;
                        }
                    }
                    Err(_) => break,
                }
            }
            let _ = tx.send(None);
        });
        let stderr_reader = thread::spawn(move || tail_of(stderr, STDERR_TAIL_BYTES));

        if let Some(mut stdin) = child.stdin.take() {
            // A broken pipe here shows up as EOF or a crash on the read side.
            let _ = writeln!(stdin, "{}", case.request().to_line());
        }

        let d = drive(
            |deadline| {
                let wait = deadline.saturating_duration_since(Instant::now());
                match rx.recv_timeout(wait) {
                    Ok(Some(l)) => Incoming::Line(l),
                    Ok(None) | Err(RecvTimeoutError::Disconnected) => Incoming::Eof,
                    Err(RecvTimeoutError::Timeout) => Incoming::TimedOut,
                }
            },
            limits,
            deadline,
        );

        let (exit, detail, extra_tail) = match d.end {
            DriveEnd::Result { exit, detail } => {
                wait_with_grace(&mut child, EXIT_GRACE);
                let exit = match exit {
                    ResultExit::Completed => RunExit::Completed,
                    ResultExit::Crash => RunExit::Crash,
                };
                (exit, detail, None)
            }
            DriveEnd::Eof => match wait_with_grace(&mut child, EXIT_GRACE) {
                Some(status) if !status.success() => (
                    RunExit::Crash,
                    format!("adapter exited with {status} before sending run_result"),
                    None,
                ),
                _ => (
                    RunExit::AdapterError,
                    "adapter closed stdout without sending run_result".to_string(),
                    None,
                ),
            },
            DriveEnd::Timeout => {
                let _ = child.kill();
                let _ = child.wait();
                (
                    RunExit::Timeout,
                    format!(
                        "wall-clock timeout after {} s",
                        limits.wall_clock_timeout_secs
                    ),
                    None,
                )
            }
            DriveEnd::EventCap => {
                let _ = child.kill();
                let _ = child.wait();
                (
                    RunExit::EventCap,
                    format!("event cap of {} reached", limits.max_events),
                    None,
                )
            }
            DriveEnd::Violation { line, error } => {
                let _ = child.kill();
                let _ = child.wait();
                (
                    RunExit::AdapterError,
                    format!("protocol violation: {error}"),
                    Some(format!("[flare] offending line: {line}")),
                )
            }
        };
        let mut tail = stderr_reader.join().unwrap_or_default();
        if let Some(extra) = extra_tail {
            push_tail(&mut tail, &extra);
        }
        record(d.events, exit, detail, tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_command_lines() {
        let a =
            SubprocessAdapter::from_command_line("python3 -m flare_adapter --target 'app:main x'")
                .unwrap();
        assert_eq!(
            a.argv(),
            ["python3", "-m", "flare_adapter", "--target", "app:main x"]
        );
        assert_eq!(
            SubprocessAdapter::from_command_line("  "),
            Err(CommandLineError::Empty)
        );
        assert!(SubprocessAdapter::from_command_line("a 'b").is_err());
    }

    #[test]
    fn tail_keeps_last_bytes() {
        let data = "x".repeat(10_000) + "END";
        let t = tail_of(data.as_bytes(), 16);
        assert_eq!(t.len(), 16);
        assert!(t.ends_with("END"));
    }

    #[test]
    fn missing_program_fails_check() {
        let a = SubprocessAdapter::new(vec!["definitely-not-a-real-program-flare".into()]).unwrap();
        assert!(a.check().is_err());
        let sh = SubprocessAdapter::new(vec!["sh".into()]).unwrap();
        assert!(sh.check().is_ok());
    }
}
