//! Multi-critic debate over a script.
//!
//! Each round a fresh critic instance reviews the current script, seeing the
//! last execution failure or static findings when there are any. A rejection
//! with a rewrite replaces the current script, which is executed at once. The
//! debate ends in agreement when the last `agreement_window` verdicts approve
//! the same script and that script's latest execution succeeded, and in
//! exhaustion after `max_rounds` rounds.

use serde::{Deserialize, Serialize};

use crate::backends::{Backend, SamplingParams};
use crate::critic::{critic_review, static_validate, CriticError, Decision, Verdict};
use crate::dataset::DatasetRef;
use crate::query::UserQuery;
use crate::sandbox::{ExecutionResult, ExitStatus, ScriptExecutor};
use crate::script::{GeneratedScript, ScriptDigest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebatePolicy {
    pub max_rounds: u32,
    pub agreement_window: u32,
    /// Accept a single approval in round 1 when the incoming script is
    /// statically clean and its first execution succeeded.
    #[serde(default = "default_fast_path")]
    pub fast_path: bool,
}

fn default_fast_path() -> bool {
    true
}

impl Default for DebatePolicy {
    fn default() -> Self {
        Self {
            max_rounds: 5,
            agreement_window: 2,
            fast_path: true,
        }
    }
}

impl DebatePolicy {
    pub fn strict(max_rounds: u32, agreement_window: u32) -> Self {
        Self {
            max_rounds,
            agreement_window,
            fast_path: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_rounds == 0 || self.agreement_window == 0 {
            return Err("max_rounds and agreement_window must be positive".into());
        }
        if self.agreement_window > self.max_rounds {
            return Err(format!(
                "agreement_window {} exceeds max_rounds {}",
                self.agreement_window, self.max_rounds
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateRound {
    pub round_index: u32,
    pub critic_instance_id: String,
    pub input_script_digest: ScriptDigest,
    pub verdict: Verdict,
    /// Failure of the rewrite produced in this round, if it failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution_error: Option<String>,
}

/// Outcome of one sandbox execution during the debate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub script_digest: ScriptDigest,
    pub revision: u32,
    pub exit_status: ExitStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebateOutcome {
    Agreed,
    Exhausted,
    /// Stopped early: a critic declared the input unfixable or a review failed.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub policy: DebatePolicy,
    pub rounds: Vec<DebateRound>,
    pub executions: Vec<ExecutionRecord>,
    pub outcome: DebateOutcome,
    /// True when agreement came from the single-approval fast path.
    #[serde(default)]
    pub fast_path: bool,
    pub final_script: GeneratedScript,
}

impl DebateTranscript {
    /// Checks the structural invariants of a finished transcript.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, r) in self.rounds.iter().enumerate() {
            if r.round_index != i as u32 + 1 {
                return Err(format!("round {} has index {}", i + 1, r.round_index));
            }
        }
        let mut revision = None;
        for r in &self.rounds {
            if let Some(rw) = &r.verdict.rewrite {
                if let Some(prev) = revision {
                    if rw.revision <= prev {
                        return Err("rewrite revisions must increase".into());
                    }
                }
                revision = Some(rw.revision);
            }
        }
        match self.outcome {
            DebateOutcome::Agreed => {
                let needed = if self.fast_path {
                    1
                } else {
                    self.policy.agreement_window as usize
                };
                if self.rounds.len() < needed {
                    return Err("agreement with too few rounds".into());
                }
                let digest = self.final_script.digest();
                let tail = &self.rounds[self.rounds.len() - needed..];
                if !tail
                    .iter()
                    .all(|r| r.verdict.is_approve() && r.verdict.script_digest == digest)
                {
                    return Err("agreement window does not approve the final script".into());
                }
                let last_exec = self
                    .executions
                    .iter()
                    .rev()
                    .find(|e| e.script_digest == digest)
                    .ok_or("final script was never executed")?;
                if !last_exec.exit_status.is_success() {
                    return Err("final script's last execution failed".into());
                }
            }
            DebateOutcome::Exhausted => {
                if self.rounds.len() != self.policy.max_rounds as usize {
                    return Err(format!(
                        "exhausted after {} rounds, max is {}",
                        self.rounds.len(),
                        self.policy.max_rounds
                    ));
                }
            }
            DebateOutcome::Aborted => {}
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DebateError {
    #[error("debate exhausted after {} rounds without agreement", .0.rounds.len())]
    Exhausted(Box<DebateTranscript>),
    #[error("critic declared the request unfixable: {rationale}")]
    Unfixable {
        rationale: String,
        transcript: Box<DebateTranscript>,
    },
    #[error("critic review failed in round {round}: {source}")]
    Review {
        round: u32,
        #[source]
        source: CriticError,
        transcript: Box<DebateTranscript>,
    },
    #[error("invalid debate policy: {0}")]
    InvalidPolicy(String),
}

impl DebateError {
    pub fn transcript(&self) -> Option<&DebateTranscript> {
        match self {
            DebateError::Exhausted(t) => Some(t),
            DebateError::Unfixable { transcript, .. } | DebateError::Review { transcript, .. } => Some(transcript),
            DebateError::InvalidPolicy(_) => None,
        }
    }
}

fn combine_context(exec_error: Option<String>, findings: &[crate::critic::Finding]) -> Option<String> {
    let mut parts = Vec::new();
    if let Some(e) = exec_error {
        parts.push(e);
    }
    if !findings.is_empty() {
        let list = findings.iter().map(|f| format!("- {f}")).collect::<Vec<_>>().join("\n");
        parts.push(format!("Static check findings:\n{list}"));
    }
    (!parts.is_empty()).then(|| parts.join("\n"))
}

fn record(script: &GeneratedScript, result: &ExecutionResult) -> ExecutionRecord {
    ExecutionRecord {
        script_digest: script.digest(),
        revision: script.revision,
        exit_status: result.exit_status.clone(),
    }
}

pub fn critic_instance_id(round: u32) -> String {
    format!("critic-{round:02}")
}

#[allow(clippy::too_many_arguments)]
pub async fn run_debate(
    initial: &GeneratedScript,
    query: &UserQuery,
    dataset: &DatasetRef,
    policy: DebatePolicy,
    backend: &dyn Backend,
    executor: &dyn ScriptExecutor,
    params: Option<SamplingParams>,
) -> Result<DebateTranscript, DebateError> {
    policy.validate().map_err(DebateError::InvalidPolicy)?;

    let mut transcript = DebateTranscript {
        policy,
        rounds: Vec::new(),
        executions: Vec::new(),
        outcome: DebateOutcome::Exhausted,
        fast_path: false,
        final_script: initial.clone(),
    };
    let mut current = initial.clone();

    let first = executor.execute(&current).await;
    transcript.executions.push(record(&current, &first));
    let mut current_ok = first.exit_status.is_success();
    let findings = static_validate(&current, dataset);
    let initially_clean = current_ok && findings.is_empty();
    let mut context = combine_context(first.error_summary(), &findings);

    let window = policy.agreement_window as usize;
    for round in 1..=policy.max_rounds {
        let input_digest = current.digest();
        let verdict = match critic_review(&current, query, dataset, context.as_deref(), backend, round, params).await {
            Ok(v) => v,
            Err(source) => {
                transcript.outcome = DebateOutcome::Aborted;
                transcript.final_script = current;
                return Err(DebateError::Review {
                    round,
                    source,
                    transcript: Box::new(transcript),
                });
            }
        };

        let mut execution_error = None;
        if verdict.decision == Decision::Reject {
            let Some(rewrite) = verdict.rewrite.clone() else {
                let rationale = verdict.rationale.clone();
                transcript.rounds.push(DebateRound {
                    round_index: round,
                    critic_instance_id: critic_instance_id(round),
                    input_script_digest: input_digest,
                    verdict,
                    execution_error: None,
                });
                transcript.outcome = DebateOutcome::Aborted;
                transcript.final_script = current;
                return Err(DebateError::Unfixable {
                    rationale,
                    transcript: Box::new(transcript),
                });
            };
            current = rewrite;
            let result = executor.execute(&current).await;
            transcript.executions.push(record(&current, &result));
            current_ok = result.exit_status.is_success();
            execution_error = result.error_summary();
            context = combine_context(execution_error.clone(), &static_validate(&current, dataset));
        }

        transcript.rounds.push(DebateRound {
            round_index: round,
            critic_instance_id: critic_instance_id(round),
            input_script_digest: input_digest,
            verdict,
            execution_error,
        });

        let approved_now = transcript.rounds.last().is_some_and(|r| r.verdict.is_approve());
        if round == 1 && policy.fast_path && initially_clean && approved_now {
            transcript.outcome = DebateOutcome::Agreed;
            transcript.fast_path = true;
            transcript.final_script = current;
            return Ok(transcript);
        }
        let digest = current.digest();
        let agreed = current_ok
            && transcript.rounds.len() >= window
            && transcript.rounds[transcript.rounds.len() - window..]
                .iter()
                .all(|r| r.verdict.is_approve() && r.verdict.script_digest == digest);
        if agreed {
            transcript.outcome = DebateOutcome::Agreed;
            transcript.final_script = current;
            return Ok(transcript);
        }
    }

    transcript.outcome = DebateOutcome::Exhausted;
    transcript.final_script = current;
    Err(DebateError::Exhausted(Box::new(transcript)))
}
