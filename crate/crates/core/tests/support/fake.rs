//! Test doubles shared by the integration suites.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;

use masqrad_core::backends::{MockScript, Stage};
use masqrad_core::dataset::DatasetRef;
use masqrad_core::sandbox::{ExecutionResult, ExitStatus, ScriptExecutor};
use masqrad_core::script::{first_code_block, GeneratedScript};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn dataset_path() -> String {
    fixtures().join("movies.csv").display().to_string()
}

pub fn dataset() -> DatasetRef {
    DatasetRef::load(&fixtures().join("movies.csv")).unwrap()
}

pub fn happy_script() -> MockScript {
    MockScript::load(&fixtures().join("mock_happy.json")).unwrap()
}

/// The actor script from the happy fixture.
pub fn happy_actor_script() -> GeneratedScript {
    let script = happy_script();
    let entry = script.entries.iter().find(|e| e.stage == Stage::Actor).unwrap();
    GeneratedScript::from_actor(first_code_block(&entry.response).unwrap())
}

/// Markers of the scripts the mock injects as faults.
const FAILING_MARKERS: [&str; 2] = ["raise RuntimeError", "def broken("];

/// Executes nothing: scripts fail iff they carry an injected fault marker.
#[derive(Default)]
pub struct FakeExecutor {
    pub calls: AtomicUsize,
}

impl FakeExecutor {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ScriptExecutor for FakeExecutor {
    async fn execute(&self, script: &GeneratedScript) -> ExecutionResult {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let failing = FAILING_MARKERS.iter().any(|m| script.source.contains(m));
        ExecutionResult {
            exit_status: if failing {
                ExitStatus::Nonzero { code: 1 }
            } else {
                ExitStatus::Success
            },
            stdout: String::new(),
            stderr: if failing {
                "Traceback: injected".into()
            } else {
                String::new()
            },
            stdout_truncated: false,
            stderr_truncated: false,
            duration_s: 0.0,
            artifacts: Vec::new(),
        }
    }
}
