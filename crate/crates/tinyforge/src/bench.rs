//! Repeated independent runs of one stage.

use rayon::prelude::*;
use tinyforge_core::{
    aggregate_stage_stats, RawStageInput, RunSample, StageResult, StageStats,
};

use crate::input::validate_stage_input;
use crate::llm::ProviderSource;
use crate::pipeline::{Orchestrator, PipelineError};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("--runs must be at least 1")]
    NoRuns,
    #[error("--parallel must be at least 1")]
    NoParallelism,
    #[error("building worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("run {run_id}: {source}")]
    Run {
        run_id: String,
        source: PipelineError,
    },
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    /// `(run_id, result)` in run order, whatever order they finished in.
    pub results: Vec<(String, StageResult)>,
    pub stats: StageStats,
}

pub fn bench_run_id(prefix: &str, index: usize) -> String {
    format!("{prefix}-{index:03}")
}

/// Runs `runs` independent stage runs on `parallel` worker threads.
///
/// Run `i` gets provider ordinal `i`, so seeded providers give the same
/// per-run behavior for any degree of parallelism.
pub fn run_bench(
    orchestrator: &Orchestrator,
    raw: &RawStageInput,
    source: &dyn ProviderSource,
    runs: usize,
    parallel: usize,
    prefix: &str,
) -> Result<BenchOutcome, BenchError> {
    if runs == 0 {
        return Err(BenchError::NoRuns);
    }
    if parallel == 0 {
        return Err(BenchError::NoParallelism);
    }
    validate_stage_input(raw.stage, raw).map_err(|e| BenchError::Run {
        run_id: bench_run_id(prefix, 1),
        source: e.into(),
    })?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallel).build()?;
    let results: Vec<(String, StageResult)> = pool.install(|| {
        (1..=runs)
            .into_par_iter()
            .map(|i| {
                let run_id = bench_run_id(prefix, i);
                orchestrator
                    .run_single(&run_id, raw, source, i as u64)
                    .map(|r| (run_id.clone(), r))
                    .map_err(|source| BenchError::Run { run_id, source })
            })
            .collect::<Result<_, _>>()
    })?;
    let samples: Vec<RunSample> = results
        .iter()
        .map(|(id, r)| RunSample::from_result(id.clone(), r))
        .collect();
    let stats = aggregate_stage_stats(&samples).expect("at least one single-stage sample");
    Ok(BenchOutcome { results, stats })
}
