//! Reconstructs run samples from a trace and renders the report views.

use std::fmt;
use std::str::FromStr;

use tinyforge_core::{
    aggregate_by_stage, attach_costs, render_report, scatter_csv, scatter_rows, scatter_table,
    tradeoff_csv, tradeoff_rows, tradeoff_table, CostModel, ReportFormat, RunSample, TokenUsage,
};

use crate::trace::{TraceEvent, TraceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportView {
    Stats,
    Scatter,
    Tradeoff,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown view `{0}` (expected stats, scatter or tradeoff)")]
pub struct UnknownView(pub String);

impl FromStr for ReportView {
    type Err = UnknownView;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stats" => Ok(ReportView::Stats),
            "scatter" => Ok(ReportView::Scatter),
            "tradeoff" => Ok(ReportView::Tradeoff),
            other => Err(UnknownView(other.into())),
        }
    }
}

impl fmt::Display for ReportView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportView::Stats => "stats",
            ReportView::Scatter => "scatter",
            ReportView::Tradeoff => "tradeoff",
        })
    }
}

/// One sample per `stage_result` event, with duration `ts_end - ts_start`
/// and the cumulative token split the event carries.
pub fn samples_from_events(events: &[TraceEvent]) -> Vec<RunSample> {
    events
        .iter()
        .filter(|e| e.kind == TraceKind::StageResult)
        .filter_map(|e| {
            Some(RunSample {
                run_id: e.run_id.clone(),
                stage: e.stage,
                outcome: e.outcome.stage_outcome()?,
                duration: e.ts_end.since(e.ts_start),
                usage: TokenUsage::new(e.prompt_tokens, e.completion_tokens),
                total_cost: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("the tradeoff view needs a cost model (config [cost] or --input-price/--output-price)")]
pub struct MissingCostModel;

pub fn render_view(
    samples: &[RunSample],
    view: ReportView,
    format: ReportFormat,
    cost: Option<&CostModel>,
) -> Result<String, MissingCostModel> {
    Ok(match view {
        ReportView::Stats => render_report(&aggregate_by_stage(samples), format),
        ReportView::Scatter => {
            let rows = scatter_rows(samples);
            match format {
                ReportFormat::Csv => scatter_csv(&rows),
                ReportFormat::Table => scatter_table(&rows),
            }
        }
        ReportView::Tradeoff => {
            let model = cost.ok_or(MissingCostModel)?;
            let rows = tradeoff_rows(&attach_costs(samples, model), model);
            match format {
                ReportFormat::Csv => tradeoff_csv(&rows),
                ReportFormat::Table => tradeoff_table(&rows),
            }
        }
    })
}
