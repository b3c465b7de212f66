//! Drives one query through interpret → act → debate → execute → analyze and
//! persists the run record before every stage transition.

mod store;
mod timing;

use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::actor::{assemble_actor_prompt, generate_script};
use crate::analysis::{analyze, assemble_analysis_prompt, AnalysisReport, EvidenceIndex};
use crate::backends::{Backend, BackendRequest, Stage, StageOverrides};
use crate::clock::{Clock, SystemClock};
use crate::dataset::DatasetRef;
use crate::debate::{run_debate, DebateError, DebatePolicy, DebateTranscript};
use crate::interpreter::{
    creative_prompt, default_keyword_head, extract_creative_clues, merge_clue_sets, predict_probs, threshold_labels,
    ClassifierHead, ClueSet, Encoder, HashingEncoder, InterpreterError,
};
use crate::query::UserQuery;
use crate::sandbox::{collect_tables, ArtifactKind, ExecutionResult, Sandbox, SandboxExecutor, MANIFEST_FILE};
use crate::script::GeneratedScript;

pub use store::{
    script_file_name, validate_run_id, RunStore, StoreError, ARTIFACTS_DIR, ATTEMPTS_DIR, RECORD_FILE, REPORT_FILE,
    SCRIPTS_DIR, TRANSCRIPT_FILE, TRANSITIONS_FILE,
};
pub use timing::{aggregate_timings, duration_stats, TimingError, TimingStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStage {
    Interpreting,
    Acting,
    Debating,
    Executing,
    Analyzing,
    Done,
    Failed,
}

impl RunStage {
    /// The working stages in execution order.
    pub const PIPELINE: [RunStage; 5] = [
        RunStage::Interpreting,
        RunStage::Acting,
        RunStage::Debating,
        RunStage::Executing,
        RunStage::Analyzing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunStage::Interpreting => "interpreting",
            RunStage::Acting => "acting",
            RunStage::Debating => "debating",
            RunStage::Executing => "executing",
            RunStage::Analyzing => "analyzing",
            RunStage::Done => "done",
            RunStage::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            RunStage::Interpreting,
            RunStage::Acting,
            RunStage::Debating,
            RunStage::Executing,
            RunStage::Analyzing,
            RunStage::Done,
            RunStage::Failed,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
    }

    /// Successor on the success path; `None` for terminal stages.
    pub fn next(self) -> Option<RunStage> {
        match self {
            RunStage::Interpreting => Some(RunStage::Acting),
            RunStage::Acting => Some(RunStage::Debating),
            RunStage::Debating => Some(RunStage::Executing),
            RunStage::Executing => Some(RunStage::Analyzing),
            RunStage::Analyzing => Some(RunStage::Done),
            RunStage::Done | RunStage::Failed => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RunStage::Done | RunStage::Failed)
    }
}

impl fmt::Display for RunStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of the transition log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub seq: u64,
    pub from: Option<RunStage>,
    pub to: RunStage,
    pub at: DateTime<Utc>,
}

pub fn is_legal_transition(from: Option<RunStage>, to: RunStage) -> bool {
    match from {
        None => to == RunStage::Interpreting,
        Some(f) if f.is_terminal() => false,
        Some(f) => to == RunStage::Failed || f.next() == Some(to),
    }
}

/// Checks sequence numbers, chaining and legality of every adjacent pair.
pub fn replay_transitions(log: &[Transition]) -> Result<(), String> {
    let mut state: Option<RunStage> = None;
    for (i, t) in log.iter().enumerate() {
        if t.seq != i as u64 {
            return Err(format!("transition {i} has sequence number {}", t.seq));
        }
        if t.from != state {
            return Err(format!(
                "transition {i} starts from {:?} but the run was in {:?}",
                t.from, state
            ));
        }
        if !is_legal_transition(t.from, t.to) {
            return Err(format!("illegal transition {:?} -> {}", t.from, t.to));
        }
        state = Some(t.to);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: RunStage,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub run_id: String,
    pub query: UserQuery,
    /// Path of the dataset as submitted.
    pub dataset_source: String,
    /// Resolved schema; present once interpreting has succeeded.
    pub dataset: Option<DatasetRef>,
    pub stage: RunStage,
    pub failed_stage: Option<RunStage>,
    pub failure_reason: Option<String>,
    pub clue_set: Option<ClueSet>,
    /// Actor script followed by every critic rewrite, in order.
    pub scripts: Vec<GeneratedScript>,
    pub transcript: Option<DebateTranscript>,
    pub execution: Option<ExecutionResult>,
    pub report: Option<AnalysisReport>,
    pub timings: Vec<StageTiming>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub created_at: DateTime<Utc>,
}

impl PipelineRun {
    pub fn timing(&self, stage: RunStage) -> Option<f64> {
        self.timings.iter().find(|t| t.stage == stage).map(|t| t.duration_s)
    }

    /// Working stages that finished successfully according to the record.
    pub fn completed_stages(&self) -> Vec<RunStage> {
        let upto = match self.stage {
            RunStage::Done => RunStage::PIPELINE.len(),
            RunStage::Failed => self
                .failed_stage
                .and_then(|f| RunStage::PIPELINE.iter().position(|s| *s == f))
                .unwrap_or(0),
            s => RunStage::PIPELINE.iter().position(|p| *p == s).unwrap_or(0),
        };
        RunStage::PIPELINE[..upto].to_vec()
    }

    pub fn last_completed_stage(&self) -> Option<RunStage> {
        self.completed_stages().last().copied()
    }

    /// Structural invariants of a persisted record.
    pub fn check_invariants(&self) -> Result<(), String> {
        let completed = self.completed_stages();
        let mut timed: Vec<RunStage> = completed.clone();
        if self.stage == RunStage::Failed {
            let failed = self.failed_stage.ok_or("failed run without failed_stage")?;
            if self.failure_reason.is_none() {
                return Err("failed run without failure_reason".into());
            }
            timed.push(failed);
        }
        let recorded: Vec<RunStage> = self.timings.iter().map(|t| t.stage).collect();
        if recorded != timed {
            return Err(format!("timings {recorded:?} do not match entered stages {timed:?}"));
        }
        if self.timings.iter().any(|t| t.duration_s.is_nan() || t.duration_s < 0.0) {
            return Err("negative or NaN stage duration".into());
        }
        for stage in completed {
            let present = match stage {
                RunStage::Interpreting => self.clue_set.is_some() && self.dataset.is_some(),
                RunStage::Acting => !self.scripts.is_empty(),
                RunStage::Debating => self.transcript.is_some(),
                RunStage::Executing => self.execution.is_some(),
                RunStage::Analyzing => self.report.is_some(),
                _ => true,
            };
            if !present {
                return Err(format!("stage {stage} completed without its product"));
            }
        }
        if self.stage == RunStage::Done && self.report.is_none() {
            return Err("done run without report".into());
        }
        Ok(())
    }

    /// Artifacts of the final execution, excluding the manifest itself.
    pub fn output_artifact_names(&self) -> Vec<String> {
        self.execution
            .iter()
            .flat_map(|e| &e.artifacts)
            .filter(|a| a.kind != ArtifactKind::Manifest)
            .map(|a| a.name.clone())
            .collect()
    }
}

/// Where an injected interruption strikes within one transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashPhase {
    /// Before the new record is written.
    BeforeRecord,
    /// After the record, before the log line.
    BeforeLog,
    /// Partway through the log line.
    TornLog { keep_bytes: usize },
}

/// Test hook simulating the engine dying mid-run. `transition` counts the
/// run's transitions, with 0 being creation.
pub trait CrashHook: Send + Sync {
    fn interrupt(&self, transition: u64) -> Option<CrashPhase>;
}

/// Crashes at exactly one transition and phase.
#[derive(Debug, Clone, Copy)]
pub struct InterruptAt {
    pub transition: u64,
    pub phase: CrashPhase,
}

impl CrashHook for InterruptAt {
    fn interrupt(&self, transition: u64) -> Option<CrashPhase> {
        (transition == self.transition).then_some(self.phase)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("engine interrupted at transition {transition} ({phase:?})")]
    Interrupted { transition: u64, phase: CrashPhase },
    #[error("run {run_id} is in stage {stage}, expected interpreting")]
    NotFresh { run_id: String, stage: RunStage },
}

/// Everything one pipeline run needs.
#[derive(Clone)]
pub struct Engine {
    backend: Arc<dyn Backend>,
    encoder: Arc<dyn Encoder>,
    head: Arc<ClassifierHead>,
    sandbox: Sandbox,
    policy: DebatePolicy,
    overrides: StageOverrides,
    store: RunStore,
    clock: Arc<dyn Clock>,
    crash_hook: Option<Arc<dyn CrashHook>>,
}

impl Engine {
    /// Engine with the built-in keyword head, a hashing encoder, the default
    /// sandbox and debate policy, and the system clock.
    pub fn new(backend: Arc<dyn Backend>, store: RunStore) -> Self {
        let head = default_keyword_head();
        Self {
            backend,
            encoder: Arc::new(HashingEncoder::new(head.dim())),
            head: Arc::new(head),
            sandbox: Sandbox::default(),
            policy: DebatePolicy::default(),
            overrides: StageOverrides::default(),
            store,
            clock: Arc::new(SystemClock),
            crash_hook: None,
        }
    }

    pub fn with_classifier(mut self, encoder: Arc<dyn Encoder>, head: ClassifierHead) -> Self {
        self.encoder = encoder;
        self.head = Arc::new(head);
        self
    }

    pub fn with_sandbox(mut self, sandbox: Sandbox) -> Self {
        self.sandbox = sandbox;
        self
    }

    pub fn with_policy(mut self, policy: DebatePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_overrides(mut self, overrides: StageOverrides) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_crash_hook(mut self, hook: Arc<dyn CrashHook>) -> Self {
        self.crash_hook = Some(hook);
        self
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    pub fn policy(&self) -> DebatePolicy {
        self.policy
    }

    /// Persists `run` in stage `to` and logs the transition.
    fn transition(&self, run: &mut PipelineRun, seq: u64, to: RunStage) -> Result<(), OrchestratorError> {
        let crash = self.crash_hook.as_ref().and_then(|h| h.interrupt(seq));
        let interrupted = |phase| OrchestratorError::Interrupted { transition: seq, phase };
        if crash == Some(CrashPhase::BeforeRecord) {
            return Err(interrupted(CrashPhase::BeforeRecord));
        }
        let from = (seq > 0).then_some(run.stage);
        run.stage = to;
        self.store.persist_run(run)?;
        if crash == Some(CrashPhase::BeforeLog) {
            return Err(interrupted(CrashPhase::BeforeLog));
        }
        let t = Transition {
            seq,
            from,
            to,
            at: self.clock.now(),
        };
        if let Some(CrashPhase::TornLog { keep_bytes }) = crash {
            self.store.append_transition_prefix(&run.run_id, &t, keep_bytes)?;
            return Err(interrupted(CrashPhase::TornLog { keep_bytes }));
        }
        self.store.append_transition(&run.run_id, &t)?;
        Ok(())
    }

    /// Records a new run in stage interpreting under a fresh id.
    pub fn create_run(&self, query: UserQuery, dataset_source: &str) -> Result<PipelineRun, OrchestratorError> {
        let run_id = format!("run-{}", uuid::Uuid::new_v4().simple());
        self.create_run_with_id(run_id, query, dataset_source)
    }

    pub fn create_run_with_id(
        &self,
        run_id: String,
        query: UserQuery,
        dataset_source: &str,
    ) -> Result<PipelineRun, OrchestratorError> {
        validate_run_id(&run_id)?;
        let mut run = PipelineRun {
            run_id,
            query,
            dataset_source: dataset_source.to_string(),
            dataset: None,
            stage: RunStage::Interpreting,
            failed_stage: None,
            failure_reason: None,
            clue_set: None,
            scripts: Vec::new(),
            transcript: None,
            execution: None,
            report: None,
            timings: Vec::new(),
            warnings: Vec::new(),
            created_at: self.clock.now(),
        };
        self.transition(&mut run, 0, RunStage::Interpreting)?;
        Ok(run)
    }

    /// Runs the pipeline on a freshly created run until done or failed.
    pub async fn drive(&self, mut run: PipelineRun) -> Result<PipelineRun, OrchestratorError> {
        if run.stage != RunStage::Interpreting || !run.timings.is_empty() {
            return Err(OrchestratorError::NotFresh {
                run_id: run.run_id,
                stage: run.stage,
            });
        }
        for (seq, stage) in (1..).zip(RunStage::PIPELINE) {
            let started = Instant::now();
            let outcome = match stage {
                RunStage::Interpreting => self.interpret(&mut run).await,
                RunStage::Acting => self.act(&mut run).await,
                RunStage::Debating => self.debate(&mut run).await,
                RunStage::Executing => self.execute(&mut run).await,
                RunStage::Analyzing => self.analyze(&mut run).await,
                _ => unreachable!("only working stages are driven"),
            };
            run.timings.push(StageTiming {
                stage,
                duration_s: started.elapsed().as_secs_f64(),
            });
            match outcome {
                Ok(()) => {
                    let to = stage.next().expect("working stages have a successor");
                    self.transition(&mut run, seq, to)?;
                }
                Err(reason) => {
                    tracing::warn!(run_id = %run.run_id, %stage, %reason, "run failed");
                    run.failed_stage = Some(stage);
                    run.failure_reason = Some(format!("{stage}: {reason}"));
                    self.transition(&mut run, seq, RunStage::Failed)?;
                    return Ok(run);
                }
            }
        }
        Ok(run)
    }

    pub async fn run_pipeline(&self, query: UserQuery, dataset_source: &str) -> Result<PipelineRun, OrchestratorError> {
        let run = self.create_run(query, dataset_source)?;
        self.drive(run).await
    }

    async fn interpret(&self, run: &mut PipelineRun) -> Result<(), String> {
        let dataset = DatasetRef::load(Path::new(&run.dataset_source)).map_err(|e| e.to_string())?;
        let query = &run.query;
        let structured = async {
            let x = self.encoder.embed(&query.text)?;
            let probs = predict_probs(&x, &self.head)?;
            Ok::<_, InterpreterError>(threshold_labels(&probs, &self.head))
        };
        let creative = async {
            let request = BackendRequest::new(
                Stage::InterpreterCreative,
                creative_prompt(&query.id, &query.text, &dataset),
            )
            .with_params(self.overrides.resolve(Stage::InterpreterCreative));
            self.backend
                .complete(&request)
                .await
                .map(|text| extract_creative_clues(&text))
        };
        let (structured, creative) = tokio::join!(structured, creative);
        let structured = structured.map_err(|e| format!("classifier head: {e}"))?;
        let creative = creative.map_err(|e| format!("creative interpreter: {e}"))?;
        run.clue_set = Some(merge_clue_sets(&structured, &creative));
        run.dataset = Some(dataset);
        Ok(())
    }

    async fn act(&self, run: &mut PipelineRun) -> Result<(), String> {
        let dataset = run.dataset.as_ref().ok_or("dataset missing")?;
        let clues = run.clue_set.clone().unwrap_or_default();
        let prompt = assemble_actor_prompt(&run.query, dataset, &clues);
        let script = generate_script(
            &prompt,
            self.backend.as_ref(),
            Some(self.overrides.resolve(Stage::Actor)),
        )
        .await
        .map_err(|e| e.to_string())?;
        run.scripts.push(script);
        Ok(())
    }

    async fn debate(&self, run: &mut PipelineRun) -> Result<(), String> {
        let dataset = run.dataset.clone().ok_or("dataset missing")?;
        let initial = run.scripts.last().cloned().ok_or("no script to debate")?;
        let executor = SandboxExecutor::new(
            self.sandbox.clone(),
            dataset.clone(),
            self.store.attempts_dir(&run.run_id),
        );
        let result = run_debate(
            &initial,
            &run.query,
            &dataset,
            self.policy,
            self.backend.as_ref(),
            &executor,
            Some(self.overrides.resolve(Stage::Critic)),
        )
        .await;
        let transcript = match &result {
            Ok(t) => Some(t),
            Err(e) => e.transcript(),
        };
        if let Some(t) = transcript {
            run.scripts
                .extend(t.rounds.iter().filter_map(|r| r.verdict.rewrite.clone()));
            run.transcript = Some(t.clone());
        }
        result.map(|_| ()).map_err(|e| {
            let kind = match &e {
                DebateError::Exhausted(_) => "DebateExhausted",
                DebateError::Unfixable { .. } => "Unfixable",
                DebateError::Review { .. } => "CriticReviewFailed",
                DebateError::InvalidPolicy(_) => "InvalidPolicy",
            };
            format!("{kind}: {e}")
        })
    }

    async fn execute(&self, run: &mut PipelineRun) -> Result<(), String> {
        let dataset = run.dataset.as_ref().ok_or("dataset missing")?;
        let script = run
            .transcript
            .as_ref()
            .map(|t| t.final_script.clone())
            .ok_or("no agreed script")?;
        let result = self
            .sandbox
            .execute(&script, dataset, &self.store.artifacts_dir(&run.run_id))
            .await;
        let summary = result.error_summary();
        run.execution = Some(result);
        match summary {
            None => Ok(()),
            Some(s) => Err(s),
        }
    }

    async fn analyze(&self, run: &mut PipelineRun) -> Result<(), String> {
        let execution = run.execution.as_ref().ok_or("no execution result")?;
        let workdir = self.store.artifacts_dir(&run.run_id);
        let mut tables = Vec::new();
        for parsed in collect_tables(execution, &workdir).map_err(|e| e.to_string())? {
            match parsed {
                Ok(t) => tables.push(t),
                Err(e) => run.warnings.push(format!("table skipped: {e}")),
            }
        }
        let names: Vec<String> = execution
            .artifacts
            .iter()
            .filter(|a| a.name != MANIFEST_FILE)
            .map(|a| a.name.clone())
            .collect();
        let dataset_ref = run
            .dataset
            .as_ref()
            .map_or(run.dataset_source.as_str(), |d| d.url_or_path.as_str());
        let prompt = assemble_analysis_prompt(&run.query, dataset_ref, &tables, &names).map_err(|e| e.to_string())?;
        let evidence = EvidenceIndex::new(names.iter().map(String::as_str), &tables);
        let (report, warnings) = analyze(
            &prompt,
            self.backend.as_ref(),
            &evidence,
            self.clock.as_ref(),
            Some(self.overrides.resolve(Stage::Analysis)),
        )
        .await
        .map_err(|e| e.to_string())?;
        run.warnings.extend(warnings);
        run.report = Some(report);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(seq: u64, from: Option<RunStage>, to: RunStage) -> Transition {
        Transition {
            seq,
            from,
            to,
            at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    #[test]
    fn legality() {
        use RunStage::*;
        assert!(is_legal_transition(None, Interpreting));
        assert!(!is_legal_transition(None, Acting));
        assert!(is_legal_transition(Some(Debating), Executing));
        assert!(is_legal_transition(Some(Debating), Failed));
        assert!(!is_legal_transition(Some(Debating), Analyzing));
        assert!(!is_legal_transition(Some(Acting), Interpreting));
        assert!(!is_legal_transition(Some(Done), Failed));
        assert!(!is_legal_transition(Some(Failed), Interpreting));
    }

    #[test]
    fn replay_detects_gaps_and_breaks() {
        use RunStage::*;
        let good = vec![
            t(0, None, Interpreting),
            t(1, Some(Interpreting), Acting),
            t(2, Some(Acting), Failed),
        ];
        assert!(replay_transitions(&good).is_ok());
        let skipped = vec![t(0, None, Interpreting), t(1, Some(Interpreting), Debating)];
        assert!(replay_transitions(&skipped).is_err());
        let unchained = vec![t(0, None, Interpreting), t(1, Some(Acting), Debating)];
        assert!(replay_transitions(&unchained).is_err());
        let renumbered = vec![t(0, None, Interpreting), t(2, Some(Interpreting), Acting)];
        assert!(replay_transitions(&renumbered).is_err());
    }

    #[test]
    fn stage_names_round_trip() {
        for s in RunStage::PIPELINE.into_iter().chain([RunStage::Done, RunStage::Failed]) {
            assert_eq!(RunStage::parse(s.as_str()), Some(s));
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
    }
}
