//! Operators backed by an external process.
//!
//! Protocol: the command runs as `cmd --input <port0.jsonl> [--input
//! <port1.jsonl> ...]`, each file holding one `{"id","value"}` object per
//! line. The process prints its output records in the same format on stdout
//! and must exit with status 0.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::model::{Backing, Operator, OperatorError, OperatorHandle, RecordFileError, RecordSet};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

static CALLS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum CommandSpec {
    Line(String),
    Argv(Vec<String>),
}

#[derive(Debug, Clone, Deserialize)]
struct ExternalParams {
    command: CommandSpec,
    #[serde(default = "default_arity")]
    arity: usize,
    #[serde(default)]
    timeout_ms: Option<u64>,
}

fn default_arity() -> usize {
    1
}

#[derive(Debug, Clone)]
pub struct ExternalOperator {
    pub program: String,
    pub args: Vec<String>,
    pub arity: usize,
    pub timeout: Duration,
}

impl ExternalOperator {
    pub fn new(program: impl Into<String>, args: Vec<String>, arity: usize) -> Self {
        ExternalOperator {
            program: program.into(),
            args,
            arity: arity.max(1),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// `{"command": "prog arg" | ["prog", "arg"], "arity": 1, "timeout_ms": 60000}`
    pub fn from_params(params: &serde_json::Value) -> Result<Self, String> {
        let p: ExternalParams = serde_json::from_value(params.clone())
            .map_err(|e| format!("bad external operator: {e}"))?;
        let mut argv = match p.command {
            CommandSpec::Line(s) => s.split_whitespace().map(str::to_string).collect(),
            CommandSpec::Argv(v) => v,
        };
        if argv.is_empty() {
            return Err("external operator needs a command".into());
        }
        let program = argv.remove(0);
        let mut op = ExternalOperator::new(program, argv, p.arity);
        if let Some(ms) = p.timeout_ms {
            op.timeout = Duration::from_millis(ms);
        }
        Ok(op)
    }

    pub fn into_handle(self, name: &str) -> OperatorHandle {
        let arity = self.arity;
        OperatorHandle::new(name, arity, Arc::new(self)).with_backing(Backing::External)
    }

    fn scratch_dir() -> PathBuf {
        let n = CALLS.fetch_add(1, Ordering::SeqCst);
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        std::env::temp_dir().join(format!("prober-ext-{}-{n}-{nanos}", std::process::id()))
    }

    fn invoke(&self, inputs: &[RecordSet]) -> Result<RecordSet, OperatorError> {
        let io = |e: std::io::Error| OperatorError::Failed(e.to_string());
        let dir = Self::scratch_dir();
        std::fs::create_dir_all(&dir).map_err(io)?;
        let _cleanup = RemoveOnDrop(dir.clone());

        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args);
        for (port, set) in inputs.iter().enumerate() {
            let path = dir.join(format!("port{port}.jsonl"));
            std::fs::write(&path, set.to_jsonl()).map_err(io)?;
            cmd.arg("--input").arg(&path);
        }
        let mut child = cmd
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| OperatorError::Failed(format!("cannot start `{}`: {e}", self.program)))?;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });
        let err_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });

        let started = Instant::now();
        let status = loop {
            match child.try_wait().map_err(io)? {
                Some(status) => break status,
                None if started.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(OperatorError::Timeout(self.timeout));
                }
                None => thread::sleep(Duration::from_millis(2)),
            }
        };
        let out = out_reader
            .join()
            .map_err(|_| OperatorError::Failed("stdout reader panicked".into()))?
            .map_err(io)?;
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(OperatorError::NonZeroExit {
                code: status.code(),
                stderr: String::from_utf8_lossy(&err).trim().to_string(),
            });
        }
        let text = String::from_utf8(out).map_err(|e| OperatorError::MalformedOutput {
            line: 0,
            message: format!("output is not UTF-8: {e}"),
        })?;
        RecordSet::parse_jsonl(&text, 0).map_err(|e| match e {
            RecordFileError::Malformed { line, message } => {
                OperatorError::MalformedOutput { line, message }
            }
            RecordFileError::DuplicateId { line, id } => OperatorError::MalformedOutput {
                line,
                message: format!("duplicate id `{id}`"),
            },
        })
    }
}

impl Operator for ExternalOperator {
    fn apply(&self, inputs: &[RecordSet]) -> Result<RecordSet, OperatorError> {
        self.invoke(inputs)
    }
}

struct RemoveOnDrop(PathBuf);

impl Drop for RemoveOnDrop {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}
