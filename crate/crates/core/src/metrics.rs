//! Per-stage statistics over repeated runs, cost attachment and the report
//! views (stats table/CSV, time-vs-token scatter, time-vs-cost trade-off).
//!
//! Durations and token counts are summed as integers so aggregation is exact
//! and independent of sample order; only display rounds.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::str::FromStr;
use core::time::Duration;

use crate::pricing::{price, CostModel, TokenUsage, Usd};
use crate::run::{StageOutcome, StageResult};
use crate::stage::LifecycleStage;

pub const STATS_CSV_HEADER: &str =
    "stage,n,success_rate_pct,time_mean_s,time_min_s,time_max_s,tok_mean,tok_min,tok_max";
pub const SCATTER_CSV_HEADER: &str = "stage,run_id,duration_s,total_tokens,outcome";
pub const TRADEOFF_CSV_HEADER: &str = "stage,outcome,mean_duration_s,mean_cost_usd,n";

/// One stage run reduced to what the reports need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSample {
    pub run_id: String,
    pub stage: LifecycleStage,
    pub outcome: StageOutcome,
    /// Cumulative over all attempts.
    pub duration: Duration,
    /// Cumulative over all attempts, failed ones included.
    pub usage: TokenUsage,
    pub total_cost: Option<Usd>,
}

impl RunSample {
    pub fn from_result(run_id: impl Into<String>, result: &StageResult) -> Self {
        Self {
            run_id: run_id.into(),
            stage: result.stage,
            outcome: result.outcome(),
            duration: result.total_duration(),
            usage: result.usage(),
            total_cost: None,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.usage.total()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no samples to aggregate")]
    EmptySampleSet,
    #[error("samples span stages {0} and {1}")]
    MixedStages(LifecycleStage, LifecycleStage),
    #[error("unknown report format `{0}` (expected table or csv)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageStats {
    pub stage: LifecycleStage,
    pub n_runs: usize,
    pub successes: usize,
    time_total: Duration,
    pub time_min: Duration,
    pub time_max: Duration,
    tokens_total: u128,
    pub tokens_min: u64,
    pub tokens_max: u64,
}

impl StageStats {
    fn singleton(s: &RunSample) -> Self {
        let t = s.total_tokens();
        Self {
            stage: s.stage,
            n_runs: 1,
            successes: usize::from(s.outcome == StageOutcome::Success),
            time_total: s.duration,
            time_min: s.duration,
            time_max: s.duration,
            tokens_total: u128::from(t),
            tokens_min: t,
            tokens_max: t,
        }
    }

    /// Combines the statistics of two disjoint sample sets of one stage.
    pub fn merge(&self, other: &StageStats) -> Result<StageStats, MetricsError> {
        if self.stage != other.stage {
            return Err(MetricsError::MixedStages(self.stage, other.stage));
        }
        Ok(StageStats {
            stage: self.stage,
            n_runs: self.n_runs + other.n_runs,
            successes: self.successes + other.successes,
            time_total: self.time_total + other.time_total,
            time_min: self.time_min.min(other.time_min),
            time_max: self.time_max.max(other.time_max),
            tokens_total: self.tokens_total + other.tokens_total,
            tokens_min: self.tokens_min.min(other.tokens_min),
            tokens_max: self.tokens_max.max(other.tokens_max),
        })
    }

    pub fn failures(&self) -> usize {
        self.n_runs - self.successes
    }

    /// Fraction in `[0, 1]`.
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.n_runs as f64
    }

    pub fn time_mean_secs(&self) -> f64 {
        let mean = self.time_total.as_nanos() as f64 / self.n_runs as f64 / 1e9;
        mean.clamp(self.time_min.as_secs_f64(), self.time_max.as_secs_f64())
    }

    pub fn tokens_mean(&self) -> f64 {
        let mean = self.tokens_total as f64 / self.n_runs as f64;
        mean.clamp(self.tokens_min as f64, self.tokens_max as f64)
    }
}

/// Mean, range and success rate for one stage's samples.
pub fn aggregate_stage_stats(samples: &[RunSample]) -> Result<StageStats, MetricsError> {
    let (first, rest) = samples.split_first().ok_or(MetricsError::EmptySampleSet)?;
    rest.iter().try_fold(StageStats::singleton(first), |acc, s| {
        acc.merge(&StageStats::singleton(s))
    })
}

/// Groups samples by stage (in pipeline order) and aggregates each group.
pub fn aggregate_by_stage(samples: &[RunSample]) -> Vec<StageStats> {
    LifecycleStage::ALL
        .iter()
        .filter_map(|stage| {
            let group: Vec<RunSample> = samples
                .iter()
                .filter(|s| s.stage == *stage)
                .cloned()
                .collect();
            aggregate_stage_stats(&group).ok()
        })
        .collect()
}

/// Prices every sample from its prompt/completion split.
pub fn attach_costs(samples: &[RunSample], model: &CostModel) -> Vec<RunSample> {
    samples
        .iter()
        .map(|s| RunSample {
            total_cost: Some(price(s.usage, model)),
            ..s.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScatterRow {
    pub stage: LifecycleStage,
    pub run_id: String,
    pub duration: Duration,
    pub total_tokens: u64,
    pub outcome: StageOutcome,
}

pub fn scatter_rows(samples: &[RunSample]) -> Vec<ScatterRow> {
    let mut rows: Vec<ScatterRow> = samples
        .iter()
        .map(|s| ScatterRow {
            stage: s.stage,
            run_id: s.run_id.clone(),
            duration: s.duration,
            total_tokens: s.total_tokens(),
            outcome: s.outcome,
        })
        .collect();
    rows.sort_by(|a, b| (a.stage, &a.run_id).cmp(&(b.stage, &b.run_id)));
    rows
}

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut out = String::from(SCATTER_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.2},{},{}",
            r.stage.label(),
            csv_field(&r.run_id),
            r.duration.as_secs_f64(),
            r.total_tokens,
            r.outcome
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub stage: LifecycleStage,
    pub outcome: StageOutcome,
    pub mean_duration_secs: f64,
    pub mean_cost: Usd,
    pub n: usize,
}

/// Mean duration and cost per (stage, outcome) group; empty groups omitted.
pub fn tradeoff_rows(samples: &[RunSample], model: &CostModel) -> Vec<TradeoffRow> {
    let mut rows = Vec::new();
    for stage in LifecycleStage::ALL {
        for outcome in [StageOutcome::Success, StageOutcome::Failure] {
            let group: Vec<&RunSample> = samples
                .iter()
                .filter(|s| s.stage == stage && s.outcome == outcome)
                .collect();
            if group.is_empty() {
                continue;
            }
            let n = group.len();
            let time: Duration = group.iter().map(|s| s.duration).sum();
            let cost: Usd = group.iter().map(|s| price(s.usage, model)).sum();
            rows.push(TradeoffRow {
                stage,
                outcome,
                mean_duration_secs: time.as_nanos() as f64 / n as f64 / 1e9,
                mean_cost: cost.mean_over(n),
                n,
            });
        }
    }
    rows
}

pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from(TRADEOFF_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.2},{},{}",
            r.stage.label(),
            r.outcome,
            r.mean_duration_secs,
            r.mean_cost,
            r.n
        );
    }
    out
}

pub fn tradeoff_table(rows: &[TradeoffRow]) -> String {
    let mut out = format!(
        "{:<6}{:<10}{:>6}{:>16}{:>16}\n",
        "stage", "outcome", "n", "mean time (s)", "mean cost ($)"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<6}{:<10}{:>6}{:>16.2}{:>16}",
            r.stage.label(),
            r.outcome.as_str(),
            r.n,
            r.mean_duration_secs,
            r.mean_cost.to_string()
        );
    }
    out
}

pub fn scatter_table(rows: &[ScatterRow]) -> String {
    let mut out = format!(
        "{:<6}{:<24}{:>12}{:>12}  {}\n",
        "stage", "run_id", "time (s)", "tokens", "outcome"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<6}{:<24}{:>12.2}{:>12}  {}",
            r.stage.label(),
            r.run_id,
            r.duration.as_secs_f64(),
            group_thousands(r.total_tokens),
            r.outcome
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(MetricsError::UnknownFormat(other.into())),
        }
    }
}

/// Renders per-stage statistics as an aligned table or as CSV.
pub fn render_report(stats: &[StageStats], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(STATS_CSV_HEADER);
            out.push('\n');
            for s in stats {
                let _ = writeln!(
                    out,
                    "{},{},{:.1},{:.2},{:.2},{:.2},{:.2},{},{}",
                    s.stage.label(),
                    s.n_runs,
                    s.success_rate() * 100.0,
                    s.time_mean_secs(),
                    s.time_min.as_secs_f64(),
                    s.time_max.as_secs_f64(),
                    s.tokens_mean(),
                    s.tokens_min,
                    s.tokens_max
                );
            }
            out
        }
        ReportFormat::Table => {
            let mut out = format!(
                "{:<6}{:>5}{:>10}  {:<28}{}\n",
                "stage", "n", "success", "time s: mean [min–max]", "tokens: mean [min–max]"
            );
            for s in stats {
                let time = format!(
                    "{:.2} [{:.2}–{:.2}]",
                    s.time_mean_secs(),
                    s.time_min.as_secs_f64(),
                    s.time_max.as_secs_f64()
                );
                let tokens = format!(
                    "{} [{}–{}]",
                    group_thousands((s.tokens_mean() + 0.5) as u64),
                    group_thousands(s.tokens_min),
                    group_thousands(s.tokens_max)
                );
                let _ = writeln!(
                    out,
                    "{:<6}{:>5}{:>9.1}%  {:<28}{}",
                    s.stage.label(),
                    s.n_runs,
                    s.success_rate() * 100.0,
                    time,
                    tokens
                );
            }
            out
        }
    }
}

fn group_thousands(n: u64) -> String {
    let digits = format!("{n}");
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.into()
    }
}
