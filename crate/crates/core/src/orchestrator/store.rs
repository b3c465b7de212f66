//! On-disk run store.
//!
//! ```text
//! <root>/<run_id>/run.json           {"digest": sha256(record), "record": PipelineRun}
//! <root>/<run_id>/transitions.jsonl  one Transition per line, append-only
//! <root>/<run_id>/scripts/rev-NNN.py script history
//! <root>/<run_id>/transcript.json    debate transcript
//! <root>/<run_id>/attempts/          debate-time executions
//! <root>/<run_id>/artifacts/         working directory of the final execution
//! <root>/<run_id>/report.json        analysis report
//! ```
//!
//! `run.json` is replaced atomically; the side files are views of the record
//! and are checked against it on load.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{replay_transitions, PipelineRun, Transition};
use crate::sandbox::digest_bytes;

pub const RECORD_FILE: &str = "run.json";
pub const TRANSITIONS_FILE: &str = "transitions.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.json";
pub const REPORT_FILE: &str = "report.json";
pub const SCRIPTS_DIR: &str = "scripts";
pub const ATTEMPTS_DIR: &str = "attempts";
pub const ARTIFACTS_DIR: &str = "artifacts";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("run {0} not found")]
    RunNotFound(String),
    #[error("run {run_id} is corrupt: {reason}")]
    CorruptRecord { run_id: String, reason: String },
    #[error("invalid run id {0:?}")]
    InvalidRunId(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    digest: String,
    record: &'a RawValue,
}

#[derive(Deserialize)]
struct RecordIn<'a> {
    digest: String,
    #[serde(borrow)]
    record: &'a RawValue,
}

pub fn script_file_name(revision: u32) -> String {
    format!("rev-{revision:03}.py")
}

/// Run ids become directory names, so only a conservative alphabet is allowed.
pub fn validate_run_id(run_id: &str) -> Result<(), StoreError> {
    let ok = !run_id.is_empty()
        && run_id.len() <= 64
        && run_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidRunId(run_id.to_string()))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("record types serialize");
    bytes.push(b'\n');
    bytes
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn attempts_dir(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join(ATTEMPTS_DIR)
    }

    pub fn artifacts_dir(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join(ARTIFACTS_DIR)
    }

    pub fn transitions_path(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join(TRANSITIONS_FILE)
    }

    pub fn exists(&self, run_id: &str) -> bool {
        validate_run_id(run_id).is_ok() && self.run_dir(run_id).join(RECORD_FILE).is_file()
    }

    /// Run ids with a record, sorted.
    pub fn list_runs(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if let Some(name) = entry.file_name().to_str() {
                if self.exists(name) {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Writes side files, then replaces the record.
    pub fn persist_run(&self, run: &PipelineRun) -> Result<(), StoreError> {
        validate_run_id(&run.run_id)?;
        let dir = self.run_dir(&run.run_id);
        let scripts = dir.join(SCRIPTS_DIR);
        fs::create_dir_all(&scripts).map_err(io_err(&scripts))?;
        for script in &run.scripts {
            let path = scripts.join(script_file_name(script.revision));
            if fs::read(&path).ok().as_deref() != Some(script.source.as_bytes()) {
                write_atomic(&path, script.source.as_bytes())?;
            }
        }
        if let Some(t) = &run.transcript {
            write_atomic(&dir.join(TRANSCRIPT_FILE), &pretty(t))?;
        }
        if let Some(r) = &run.report {
            write_atomic(&dir.join(REPORT_FILE), &pretty(r))?;
        }
        let record = serde_json::to_string(run).expect("run serializes");
        let raw = RawValue::from_string(record).expect("serializer emits valid json");
        let out = RecordOut {
            digest: digest_bytes(raw.get().as_bytes()),
            record: &raw,
        };
        let mut bytes = serde_json::to_vec(&out).expect("record serializes");
        bytes.push(b'\n');
        write_atomic(&dir.join(RECORD_FILE), &bytes)
    }

    pub fn load_run(&self, run_id: &str) -> Result<PipelineRun, StoreError> {
        validate_run_id(run_id).map_err(|_| StoreError::RunNotFound(run_id.to_string()))?;
        let dir = self.run_dir(run_id);
        let path = dir.join(RECORD_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::RunNotFound(run_id.to_string()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let corrupt = |reason: String| StoreError::CorruptRecord {
            run_id: run_id.to_string(),
            reason,
        };
        let envelope: RecordIn = serde_json::from_slice(&bytes).map_err(|e| corrupt(format!("{RECORD_FILE}: {e}")))?;
        if digest_bytes(envelope.record.get().as_bytes()) != envelope.digest {
            return Err(corrupt("record digest mismatch".into()));
        }
        let run: PipelineRun =
            serde_json::from_str(envelope.record.get()).map_err(|e| corrupt(format!("record does not decode: {e}")))?;
        if run.run_id != run_id {
            return Err(corrupt(format!("record names run {}", run.run_id)));
        }

        for script in &run.scripts {
            let name = script_file_name(script.revision);
            if fs::read(dir.join(SCRIPTS_DIR).join(&name)).ok().as_deref() != Some(script.source.as_bytes()) {
                return Err(corrupt(format!("{SCRIPTS_DIR}/{name} does not match the record")));
            }
        }
        if let Some(t) = &run.transcript {
            if fs::read(dir.join(TRANSCRIPT_FILE)).ok() != Some(pretty(t)) {
                return Err(corrupt(format!("{TRANSCRIPT_FILE} does not match the record")));
            }
        }
        if let Some(r) = &run.report {
            if fs::read(dir.join(REPORT_FILE)).ok() != Some(pretty(r)) {
                return Err(corrupt(format!("{REPORT_FILE} does not match the record")));
            }
        }
        if let Some(exec) = &run.execution {
            let artifacts = dir.join(ARTIFACTS_DIR);
            for a in &exec.artifacts {
                let ok = fs::read(artifacts.join(&a.file)).is_ok_and(|b| digest_bytes(&b) == a.digest);
                if !ok {
                    return Err(corrupt(format!("artifact {} does not match its digest", a.name)));
                }
            }
        }
        Ok(run)
    }

    pub fn append_transition(&self, run_id: &str, t: &Transition) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(t).expect("transition serializes");
        line.push(b'\n');
        self.append_bytes(run_id, &line)
    }

    /// Appends only the first `keep` bytes of a transition line, as an
    /// interrupted write would.
    pub fn append_transition_prefix(&self, run_id: &str, t: &Transition, keep: usize) -> Result<(), StoreError> {
        let line = serde_json::to_vec(t).expect("transition serializes");
        self.append_bytes(run_id, &line[..keep.min(line.len())])
    }

    fn append_bytes(&self, run_id: &str, bytes: &[u8]) -> Result<(), StoreError> {
        validate_run_id(run_id)?;
        let path = self.transitions_path(run_id);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        f.write_all(bytes).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }

    /// Reads the transition log. A torn final line (no trailing newline) is
    /// ignored; any other undecodable line or illegal sequence is corruption.
    pub fn read_transitions(&self, run_id: &str) -> Result<Vec<Transition>, StoreError> {
        validate_run_id(run_id).map_err(|_| StoreError::RunNotFound(run_id.to_string()))?;
        let path = self.transitions_path(run_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return if self.run_dir(run_id).is_dir() {
                    Ok(Vec::new())
                } else {
                    Err(StoreError::RunNotFound(run_id.to_string()))
                };
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let complete = text.rfind('\n').map_or("", |i| &text[..i]);
        let mut transitions = Vec::new();
        for (i, line) in complete.lines().enumerate() {
            let t: Transition = serde_json::from_str(line).map_err(|e| StoreError::CorruptRecord {
                run_id: run_id.to_string(),
                reason: format!("{TRANSITIONS_FILE} line {}: {e}", i + 1),
            })?;
            transitions.push(t);
        }
        replay_transitions(&transitions).map_err(|reason| StoreError::CorruptRecord {
            run_id: run_id.to_string(),
            reason,
        })?;
        Ok(transitions)
    }
}
