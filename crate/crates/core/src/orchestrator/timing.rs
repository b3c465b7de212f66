use serde::{Deserialize, Serialize};

use super::{PipelineRun, RunStage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub module: RunStage,
    pub mean: f64,
    /// Sample standard deviation; zero when `n == 1`.
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TimingError {
    #[error("no durations to aggregate")]
    EmptyInput,
    #[error("run {run_id} never entered stage {stage}")]
    StageNotEntered { run_id: String, stage: RunStage },
}

/// Mean and sample standard deviation of raw durations (Welford's update).
pub fn duration_stats(module: RunStage, durations: &[f64]) -> Result<TimingStats, TimingError> {
    if durations.is_empty() {
        return Err(TimingError::EmptyInput);
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in durations.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let n = durations.len();
    let std = if n > 1 {
        (m2 / (n - 1) as f64).max(0.0).sqrt()
    } else {
        0.0
    };
    Ok(TimingStats { module, mean, std, n })
}

pub fn aggregate_timings(runs: &[PipelineRun], module: RunStage) -> Result<TimingStats, TimingError> {
    let durations = runs
        .iter()
        .map(|r| {
            r.timing(module).ok_or_else(|| TimingError::StageNotEntered {
                run_id: r.run_id.clone(),
                stage: module,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    duration_stats(module, &durations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        let s = duration_stats(RunStage::Acting, &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (2.0, 0.0, 3));
        let s = duration_stats(RunStage::Acting, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        let s = duration_stats(RunStage::Acting, &[4.5]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (4.5, 0.0, 1));
        assert_eq!(duration_stats(RunStage::Acting, &[]), Err(TimingError::EmptyInput));
    }
}
