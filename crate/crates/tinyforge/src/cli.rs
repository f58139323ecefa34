//! Command-line front end. Exit codes: 0 success, 1 domain failure,
//! 2 usage or configuration error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tinyforge_core::{
    render_report, CostModel, LifecycleStage, ReportFormat, StageResult,
};

use crate::bench::{run_bench, BenchError};
use crate::config::{Config, ProviderKind, DEFAULT_CONFIG, DEFAULT_TRACE};
use crate::pipeline::PipelineError;
use crate::report::{render_view, samples_from_events, ReportView};
use crate::trace::{format_timestamp, load_all, load_run, verify_trace, TraceEvent, TraceKind, TraceStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CONFIG_ENV: &str = "TINYFORGE_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "tinyforge", version, about = "LLM-driven TinyML lifecycle runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one stage or the full pipeline.
    Run(RunArgs),
    /// Run N independent repetitions of one stage and print its statistics.
    Bench(BenchArgs),
    /// Render statistics, scatter or trade-off views from a trace.
    Report(ReportArgs),
    /// Verify a trace and print its attempt timeline.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file [default: $TINYFORGE_CONFIG or ./tinyforge.toml]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root directory for run workspaces.
    #[arg(long)]
    workspace: Option<PathBuf>,
    /// Trace file to append to.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Per-execution timeout in seconds.
    #[arg(long)]
    timeout: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// dp, mc, sg or all
    #[arg(long)]
    stage: String,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// dp, mc or sg
    #[arg(long)]
    stage: String,
    #[arg(long)]
    runs: i64,
    #[arg(long, default_value_t = 1)]
    parallel: i64,
    /// Seed for the stochastic provider.
    #[arg(long)]
    seed: Option<u64>,
    /// table or csv
    #[arg(long, default_value = "table")]
    format: String,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// stats, scatter or tradeoff
    #[arg(long, default_value = "stats")]
    view: String,
    /// table or csv
    #[arg(long, default_value = "table")]
    format: String,
    /// USD per prompt token; overrides the config cost model.
    #[arg(long, requires = "output_price")]
    input_price: Option<String>,
    /// USD per completion token.
    #[arg(long, requires = "input_price")]
    output_price: Option<String>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Restrict the timeline to one run.
    #[arg(long)]
    run: Option<String>,
}

/// Runs the CLI on `args` (including the program name).
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, out, err),
        Command::Bench(a) => cmd_bench(a, out, err),
        Command::Report(a) => cmd_report(a, out, err),
        Command::Replay(a) => cmd_replay(a, out, err),
    };
    match result {
        Ok(code) => code,
        Err(Fail(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

struct Fail(i32, String);

fn usage(msg: impl std::fmt::Display) -> Fail {
    Fail(EXIT_USAGE, msg.to_string())
}

fn failure(msg: impl std::fmt::Display) -> Fail {
    Fail(EXIT_FAILURE, msg.to_string())
}

fn config_path(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
        .unwrap_or_else(|| DEFAULT_CONFIG.into())
}

fn load_config(common: &Common) -> Result<Config, Fail> {
    let mut cfg = Config::load(&config_path(common.config.clone())).map_err(|e| usage(format!("{e:#}")))?;
    if let Some(w) = &common.workspace {
        cfg.workspace_root = w.clone();
    }
    if let Some(t) = &common.trace {
        cfg.trace_path = t.clone();
    }
    if let Some(n) = common.max_attempts {
        cfg.retry.max_attempts = n;
    }
    if let Some(t) = common.timeout {
        cfg.retry.timeout_secs = t;
    }
    cfg.policy().map_err(|e| usage(format!("{e:#}")))?;
    Ok(cfg)
}

fn parse_stage(s: &str) -> Result<LifecycleStage, Fail> {
    s.parse().map_err(usage)
}

/// Input problems are configuration errors; anything else is a run failure.
fn pipeline_fail(e: PipelineError) -> Fail {
    match e {
        PipelineError::Input(_) | PipelineError::MissingStageInput(_) => usage(e),
        PipelineError::Provider(crate::llm::ProviderError::NoFixture(_)) => usage(e),
        other => failure(other),
    }
}

fn new_run_id() -> String {
    let id = uuid::Uuid::new_v4().simple().to_string();
    format!("run-{}", &id[..12])
}

pub fn summary_line(result: &StageResult) -> String {
    let mut line = format!(
        "{}: {} attempts={} seconds={:.2} tokens={}",
        result.stage.label(),
        result.outcome(),
        result.attempts().len(),
        result.total_duration().as_secs_f64(),
        result.total_tokens()
    );
    if let Some(a) = result.artifact_locator() {
        line.push_str(&format!(" artifact={a}"));
    }
    line
}

fn review_alert(err: &mut dyn Write, run_id: &str, result: &StageResult) {
    if !result.succeeded() {
        let excerpt = result
            .attempts()
            .last()
            .and_then(|a| a.error_excerpt())
            .and_then(|e| e.lines().last())
            .unwrap_or("");
        let _ = writeln!(
            err,
            "review requested: run {run_id} stage {} failed after {} attempts; last error: {excerpt}",
            result.stage.label(),
            result.attempts().len()
        );
    }
}

fn cmd_run(a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Fail> {
    let stage = match a.stage.as_str() {
        "all" => None,
        s => Some(parse_stage(s)?),
    };
    let cfg = load_config(&a.common)?;
    let source = cfg.provider_source().map_err(|e| usage(format!("{e:#}")))?;
    let store = TraceStore::open(&cfg.trace_path).map_err(failure)?;
    let orch = cfg
        .orchestrator(Arc::new(store))
        .map_err(|e| usage(format!("{e:#}")))?;
    let run_id = new_run_id();
    let _ = writeln!(err, "run {run_id}");
    let results: Vec<StageResult> = match stage {
        Some(stage) => {
            let raw = cfg
                .stage_input(stage)
                .ok_or_else(|| usage(format!("config has no [stages.{}] section", stage.code())))?;
            vec![orch
                .run_single(&run_id, &raw, source.as_ref(), 0)
                .map_err(pipeline_fail)?]
        }
        None => {
            let output = orch
                .run_pipeline(&run_id, &cfg.pipeline_inputs(), source.as_ref(), 0)
                .map_err(pipeline_fail)?;
            if let Some(h) = output.run.halted_at() {
                let _ = writeln!(err, "pipeline halted at {}; later stages not run", h.label());
            }
            output.run.stage_results().to_vec()
        }
    };
    for r in &results {
        let _ = writeln!(out, "{}", summary_line(r));
        review_alert(err, &run_id, r);
    }
    let expected = if stage.is_some() { 1 } else { LifecycleStage::ALL.len() };
    let ok = results.len() == expected && results.iter().all(StageResult::succeeded);
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Fail> {
    if a.runs < 1 {
        return Err(usage(BenchError::NoRuns));
    }
    if a.parallel < 1 {
        return Err(usage(BenchError::NoParallelism));
    }
    let stage = parse_stage(&a.stage)?;
    let format: ReportFormat = a.format.parse().map_err(usage)?;
    let mut cfg = load_config(&a.common)?;
    if let Some(seed) = a.seed {
        match (&cfg.provider.kind, cfg.provider.stochastic.as_mut()) {
            (ProviderKind::Stochastic, Some(s)) => s.seed = seed,
            _ => return Err(usage("--seed needs the stochastic provider")),
        }
    }
    let raw = cfg
        .stage_input(stage)
        .ok_or_else(|| usage(format!("config has no [stages.{}] section", stage.code())))?;
    let source = cfg.provider_source().map_err(|e| usage(format!("{e:#}")))?;
    let store = TraceStore::open(&cfg.trace_path).map_err(failure)?;
    let orch = cfg
        .orchestrator(Arc::new(store))
        .map_err(|e| usage(format!("{e:#}")))?;
    let prefix = new_run_id();
    let _ = writeln!(err, "bench {prefix}: {} runs of {} on {} threads", a.runs, stage.label(), a.parallel);
    let outcome = run_bench(
        &orch,
        &raw,
        source.as_ref(),
        a.runs as usize,
        a.parallel as usize,
        &prefix,
    )
    .map_err(|e| match e {
        BenchError::Run { source, run_id } => {
            let f = pipeline_fail(source);
            Fail(f.0, format!("run {run_id}: {}", f.1))
        }
        other => failure(other),
    })?;
    for (id, r) in &outcome.results {
        review_alert(err, id, r);
    }
    let _ = write!(out, "{}", render_report(&[outcome.stats], format));
    Ok(EXIT_OK)
}

fn cmd_report(a: ReportArgs, out: &mut dyn Write, _err: &mut dyn Write) -> Result<i32, Fail> {
    let view: ReportView = a.view.parse().map_err(usage)?;
    let format: ReportFormat = a.format.parse().map_err(usage)?;
    // the config is optional here; the default file is used only if present
    let explicit = a.config.is_some() || std::env::var_os(CONFIG_ENV).is_some();
    let path = config_path(a.config.clone());
    let cfg = if explicit || path.is_file() {
        Some(Config::load(&path).map_err(|e| usage(format!("{e:#}")))?)
    } else {
        None
    };
    let cost: Option<CostModel> = match (&a.input_price, &a.output_price) {
        (Some(i), Some(o)) => Some(CostModel::parse(i, o).map_err(usage)?),
        _ => cfg
            .as_ref()
            .map(Config::cost_model)
            .transpose()
            .map_err(|e| usage(format!("{e:#}")))?
            .flatten(),
    };
    let trace = a
        .trace
        .or_else(|| cfg.as_ref().map(|c| c.trace_path.clone()))
        .unwrap_or_else(|| DEFAULT_TRACE.into());
    let events = load_all(&trace).map_err(failure)?;
    let samples = samples_from_events(&events);
    let text = render_view(&samples, view, format, cost.as_ref()).map_err(usage)?;
    let _ = write!(out, "{text}");
    Ok(EXIT_OK)
}

fn timeline_line(e: &TraceEvent) -> String {
    let secs = e.ts_end.since(e.ts_start).as_secs_f64();
    let what = match e.kind {
        TraceKind::Attempt => format!("attempt {}", e.attempt_index),
        TraceKind::StageResult => format!("result after {}", e.attempt_index),
        TraceKind::ReviewRequested => "review requested".to_string(),
    };
    let mut line = format!(
        "{} {} {} {:<18} {:<17} {:>8.2}s tokens={}+{}",
        format_timestamp(e.ts_start),
        e.run_id,
        e.stage.label(),
        what,
        e.outcome.as_str(),
        secs,
        e.prompt_tokens,
        e.completion_tokens
    );
    if e.kind == TraceKind::Attempt {
        if let Some(x) = e.error_excerpt.as_deref().and_then(|x| x.lines().rev().find(|l| !l.trim().is_empty())) {
            let short: String = x.chars().take(100).collect();
            line.push_str(&format!(" | {short}"));
        }
    }
    line
}

fn cmd_replay(a: ReplayArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Fail> {
    let issues = verify_trace(&a.trace).map_err(failure)?;
    let events = match &a.run {
        Some(id) => load_run(&a.trace, id).map_err(failure)?,
        None => load_all(&a.trace).map_err(failure)?,
    };
    for e in &events {
        let _ = writeln!(out, "{}", timeline_line(e));
    }
    for i in &issues {
        let _ = writeln!(out, "violation {i}");
    }
    if issues.is_empty() {
        let _ = writeln!(err, "trace {} verified: {} events", display(&a.trace), events.len());
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(err, "trace {}: {} violations", display(&a.trace), issues.len());
        Ok(EXIT_FAILURE)
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
