//! Script execution in a constrained subprocess.
//!
//! Each execution gets its own working directory, a fresh process group, an
//! address-space limit, a wall-clock deadline and a scrubbed environment. On a
//! clean exit the script's `manifest.json` is checked and every declared file
//! is hashed into the result.
//!
//! Two runners are supported. The default starts the interpreter directly and
//! applies limits from this process. The shim runner delegates to an external
//! launcher invoked as `runner_shim <script> --dataset <path> --wall <sec>
//! --mem <bytes>` and reads its outcome from the exit code.

mod manifest;
mod tables;

use std::os::unix::process::ExitStatusExt;
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncRead, AsyncReadExt};
use tokio::process::Command;

use crate::dataset::DatasetRef;
use crate::script::GeneratedScript;

pub use manifest::{collect_artifacts, digest_bytes, Manifest, ManifestEntry, ManifestKind, MANIFEST_FILE};
pub use tables::{collect_tables, parse_table, Cell, ResultTable, TableError};

/// Script file name inside the working directory.
pub const SCRIPT_FILE: &str = ".masqrad_script.py";
pub const DEFAULT_STREAM_CAP: usize = 1 << 20;
/// Replaces the working directory path in captured stderr.
pub const WORKDIR_PLACEHOLDER: &str = "<workdir>";

/// Exit codes of the external runner shim.
pub const SHIM_EXIT_TIMEOUT: i32 = 124;
pub const SHIM_EXIT_MEMORY: i32 = 137;
pub const SHIM_EXIT_MANIFEST: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkPolicy {
    Disabled,
    Enabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecLimits {
    pub wall_time_s: f64,
    pub memory_bytes: u64,
    pub network: NetworkPolicy,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            wall_time_s: 60.0,
            memory_bytes: 1 << 30,
            network: NetworkPolicy::Disabled,
        }
    }
}

impl ExecLimits {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.wall_time_s.is_finite() && self.wall_time_s > 0.0) {
            return Err(format!("wall_time_s must be positive, got {}", self.wall_time_s));
        }
        if self.memory_bytes == 0 {
            return Err("memory_bytes must be positive".into());
        }
        Ok(())
    }

    pub fn wall_time(&self) -> Duration {
        Duration::from_secs_f64(self.wall_time_s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    Nonzero {
        code: i32,
    },
    Timeout,
    MemoryExceeded,
    /// Exited cleanly but the manifest was missing, malformed or pointed at
    /// files that do not exist inside the working directory.
    ManifestInvalid {
        reason: String,
    },
    LaunchFailure {
        reason: String,
    },
}

impl ExitStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, ExitStatus::Success)
    }

    pub fn describe(&self) -> String {
        match self {
            ExitStatus::Success => "success".into(),
            ExitStatus::Nonzero { code } => format!("exited with code {code}"),
            ExitStatus::Timeout => "timed out".into(),
            ExitStatus::MemoryExceeded => "exceeded the memory limit".into(),
            ExitStatus::ManifestInvalid { reason } => format!("manifest check failed: {reason}"),
            ExitStatus::LaunchFailure { reason } => format!("could not launch: {reason}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Image,
    Table,
    Manifest,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub kind: ArtifactKind,
    /// Path relative to the working directory.
    pub file: String,
    pub byte_size: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub exit_status: ExitStatus,
    pub stdout: String,
    pub stderr: String,
    #[serde(default)]
    pub stdout_truncated: bool,
    #[serde(default)]
    pub stderr_truncated: bool,
    pub duration_s: f64,
    pub artifacts: Vec<Artifact>,
}

impl ExecutionResult {
    fn failed(exit_status: ExitStatus, started: Instant) -> Self {
        Self {
            exit_status,
            stdout: String::new(),
            stderr: String::new(),
            stdout_truncated: false,
            stderr_truncated: false,
            duration_s: started.elapsed().as_secs_f64(),
            artifacts: Vec::new(),
        }
    }

    /// Short failure description for critic prompts; `None` on success.
    pub fn error_summary(&self) -> Option<String> {
        if self.exit_status.is_success() {
            return None;
        }
        let tail: String = {
            let lines: Vec<&str> = self.stderr.lines().collect();
            lines[lines.len().saturating_sub(20)..].join("\n")
        };
        Some(if tail.is_empty() {
            format!("The script {}.", self.exit_status.describe())
        } else {
            format!(
                "The script {}. Last lines of stderr:\n{tail}",
                self.exit_status.describe()
            )
        })
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Runner {
    /// Run the script with this interpreter and enforce limits here.
    Interpreter { program: String },
    /// Delegate to an external launcher speaking the shim exit-code contract.
    Shim { program: String },
}

impl Default for Runner {
    fn default() -> Self {
        Runner::Interpreter {
            program: "python3".into(),
        }
    }
}

// Loaded with `python -c`; runs the script as __main__ after closing off
// socket creation when the network is disabled.
const BOOTSTRAP: &str = r#"import os, sys, runpy
if os.environ.get("MASQRAD_NETWORK") != "enabled":
    import socket
    class _NoNetwork(socket.socket):
        def __init__(self, *args, **kwargs):
            raise PermissionError("network access is disabled in the sandbox")
    socket.socket = _NoNetwork
path = sys.argv[1]
sys.argv = [path]
sys.path.insert(0, os.getcwd())
runpy.run_path(path, run_name="__main__")
"#;

#[derive(Debug, Clone)]
pub struct Sandbox {
    pub runner: Runner,
    pub limits: ExecLimits,
    pub stream_cap: usize,
}

impl Default for Sandbox {
    fn default() -> Self {
        Self::new(Runner::default(), ExecLimits::default())
    }
}

async fn read_capped<R: AsyncRead + Unpin>(mut reader: R, cap: usize) -> (String, bool) {
    let mut kept = Vec::new();
    let mut truncated = false;
    let mut buf = [0u8; 8192];
    loop {
        match reader.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                if n > room {
                    truncated = true;
                }
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
        }
    }
    (String::from_utf8_lossy(&kept).into_owned(), truncated)
}

fn is_empty_dir(path: &Path) -> std::io::Result<bool> {
    Ok(std::fs::read_dir(path)?.next().is_none())
}

impl Sandbox {
    pub fn new(runner: Runner, limits: ExecLimits) -> Self {
        Self {
            runner,
            limits,
            stream_cap: DEFAULT_STREAM_CAP,
        }
    }

    fn command(&self, script_path: &Path, dataset: &DatasetRef, workdir: &Path) -> Command {
        // The child runs inside the workdir, so local dataset paths must be absolute.
        let dataset_path = std::fs::canonicalize(&dataset.url_or_path)
            .map(|p| p.display().to_string())
            .unwrap_or_else(|_| dataset.url_or_path.clone());
        let mut cmd = match &self.runner {
            Runner::Interpreter { program } => {
                let mut c = Command::new(program);
                c.arg("-B").arg("-c").arg(BOOTSTRAP).arg(script_path);
                c
            }
            Runner::Shim { program } => {
                let mut c = Command::new(program);
                c.arg(script_path)
                    .arg("--dataset")
                    .arg(&dataset_path)
                    .arg("--wall")
                    .arg(format!("{}", self.limits.wall_time_s))
                    .arg("--mem")
                    .arg(self.limits.memory_bytes.to_string());
                c
            }
        };
        cmd.current_dir(workdir)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true);
        for key in ["PATH", "HOME", "LANG", "TMPDIR"] {
            if let Ok(v) = std::env::var(key) {
                cmd.env(key, v);
            }
        }
        cmd.env("MASQRAD_DATASET", &dataset_path)
            .env(
                "MASQRAD_NETWORK",
                match self.limits.network {
                    NetworkPolicy::Disabled => "disabled",
                    NetworkPolicy::Enabled => "enabled",
                },
            )
            .env("MPLBACKEND", "Agg")
            .env("OPENBLAS_NUM_THREADS", "1")
            .env("PYTHONDONTWRITEBYTECODE", "1");

        let memory = self.limits.memory_bytes;
        let limit_here = matches!(self.runner, Runner::Interpreter { .. });
        // SAFETY: only async-signal-safe libc calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                if libc::setsid() == -1 {
                    return Err(std::io::Error::last_os_error());
                }
                let no_core = libc::rlimit {
                    rlim_cur: 0,
                    rlim_max: 0,
                };
                libc::setrlimit(libc::RLIMIT_CORE, &no_core);
                if limit_here {
                    let mem = libc::rlimit {
                        rlim_cur: memory as libc::rlim_t,
                        rlim_max: memory as libc::rlim_t,
                    };
                    if libc::setrlimit(libc::RLIMIT_AS, &mem) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                }
                Ok(())
            });
        }
        cmd
    }

    /// Runs `script` in `workdir`, which must be empty or absent.
    pub async fn execute(&self, script: &GeneratedScript, dataset: &DatasetRef, workdir: &Path) -> ExecutionResult {
        let started = Instant::now();
        let launch_failure = |reason: String| ExecutionResult::failed(ExitStatus::LaunchFailure { reason }, started);
        if let Err(e) = self.limits.validate() {
            return launch_failure(e);
        }
        if let Err(e) = std::fs::create_dir_all(workdir) {
            return launch_failure(format!("cannot create workdir {}: {e}", workdir.display()));
        }
        let workdir = match std::fs::canonicalize(workdir) {
            Ok(p) => p,
            Err(e) => return launch_failure(e.to_string()),
        };
        let workdir = workdir.as_path();
        match is_empty_dir(workdir) {
            Ok(true) => {}
            Ok(false) => return launch_failure(format!("workdir {} is not empty", workdir.display())),
            Err(e) => return launch_failure(e.to_string()),
        }
        let script_path = workdir.join(SCRIPT_FILE);
        if let Err(e) = std::fs::write(&script_path, &script.source) {
            return launch_failure(format!("cannot write script: {e}"));
        }

        let mut child = match self.command(&script_path, dataset, workdir).spawn() {
            Ok(c) => c,
            Err(e) => return launch_failure(format!("{e}")),
        };
        let pid = child.id();
        let stdout = tokio::spawn(read_capped(child.stdout.take().expect("piped"), self.stream_cap));
        let stderr = tokio::spawn(read_capped(child.stderr.take().expect("piped"), self.stream_cap));

        let (status, timed_out) = match tokio::time::timeout(self.limits.wall_time(), child.wait()).await {
            Ok(status) => (status.ok(), false),
            Err(_) => {
                if let Some(pid) = pid {
                    // SAFETY: signalling the process group we created with setsid.
                    unsafe {
                        libc::killpg(pid as libc::pid_t, libc::SIGKILL);
                    }
                }
                (child.wait().await.ok(), true)
            }
        };
        // Grandchildren may still hold the pipes; they die with the group.
        if let Some(pid) = pid {
            unsafe {
                libc::killpg(pid as libc::pid_t, libc::SIGKILL);
            }
        }
        let (stdout, stdout_truncated) = stdout.await.unwrap_or_default();
        let (stderr, stderr_truncated) = stderr.await.unwrap_or_default();
        // Tracebacks name the per-attempt directory; keep them run-independent.
        let stderr = stderr.replace(&workdir.display().to_string(), WORKDIR_PLACEHOLDER);
        let duration_s = started.elapsed().as_secs_f64();

        let mut artifacts = Vec::new();
        let exit_status = if timed_out {
            ExitStatus::Timeout
        } else {
            match status {
                None => ExitStatus::LaunchFailure {
                    reason: "lost track of the child process".into(),
                },
                Some(status) => {
                    let code = status.code();
                    let signal = status.signal();
                    match self.classify(code, signal, &stderr) {
                        ExitStatus::Success => match collect_artifacts(workdir) {
                            Ok(found) => {
                                artifacts = found;
                                ExitStatus::Success
                            }
                            Err(reason) => ExitStatus::ManifestInvalid { reason },
                        },
                        other => other,
                    }
                }
            }
        };
        ExecutionResult {
            exit_status,
            stdout,
            stderr,
            stdout_truncated,
            stderr_truncated,
            duration_s,
            artifacts,
        }
    }

    fn classify(&self, code: Option<i32>, signal: Option<i32>, stderr: &str) -> ExitStatus {
        match (&self.runner, code, signal) {
            (_, Some(0), _) => ExitStatus::Success,
            (Runner::Shim { .. }, Some(SHIM_EXIT_TIMEOUT), _) => ExitStatus::Timeout,
            (Runner::Shim { .. }, Some(SHIM_EXIT_MEMORY), _) => ExitStatus::MemoryExceeded,
            (Runner::Shim { .. }, Some(SHIM_EXIT_MANIFEST), _) => ExitStatus::ManifestInvalid {
                reason: "runner reported a manifest violation".into(),
            },
            (Runner::Interpreter { .. }, Some(_), _) if stderr.contains("MemoryError") => ExitStatus::MemoryExceeded,
            (_, Some(code), _) => ExitStatus::Nonzero { code },
            (_, None, Some(libc::SIGKILL)) => ExitStatus::MemoryExceeded,
            (_, None, Some(sig)) => ExitStatus::Nonzero { code: 128 + sig },
            (_, None, None) => ExitStatus::LaunchFailure {
                reason: "child ended without status".into(),
            },
        }
    }
}

/// Executes scripts on behalf of the debate loop.
#[async_trait]
pub trait ScriptExecutor: Send + Sync {
    async fn execute(&self, script: &GeneratedScript) -> ExecutionResult;
}

/// Runs each attempt in a fresh numbered directory under `root`.
pub struct SandboxExecutor {
    sandbox: Sandbox,
    dataset: DatasetRef,
    root: PathBuf,
    next: AtomicU32,
}

impl SandboxExecutor {
    pub fn new(sandbox: Sandbox, dataset: DatasetRef, root: impl Into<PathBuf>) -> Self {
        Self {
            sandbox,
            dataset,
            root: root.into(),
            next: AtomicU32::new(1),
        }
    }
}

#[async_trait]
impl ScriptExecutor for SandboxExecutor {
    async fn execute(&self, script: &GeneratedScript) -> ExecutionResult {
        let n = self.next.fetch_add(1, Ordering::SeqCst);
        let workdir = self.root.join(format!("attempt-{n:03}"));
        self.sandbox.execute(script, &self.dataset, &workdir).await
    }
}
