//! `tinyforge.toml`: provider, cost model, retry policy, stage inputs,
//! templates, executor and toolchain settings.
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, ensure, Context};
use serde::Deserialize;
use tinyforge_core::stage::StageFields;
use tinyforge_core::{CostModel, LifecycleStage, RawStageInput, RetryPolicy};

use crate::clock::ClockMode;
use crate::executor::{ArduinoCli, MockToolchain, ScriptRunner, ToolchainAdapter, DEFAULT_BOARDS};
use crate::llm::{LiveConfig, LiveSource, ProviderSource, ScriptedSource, StochasticConfig, StochasticSource};
use crate::pipeline::{Orchestrator, PipelineInputs, RequestSettings, DEFAULT_SYSTEM_PROMPT};
use crate::templates::load_registry;
use crate::trace::TraceSink;

pub const DEFAULT_CONFIG: &str = "tinyforge.toml";
pub const DEFAULT_TRACE: &str = "traces/events.log";
pub const DEFAULT_WORKSPACE: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Live,
    Scripted,
    Stochastic,
}

/// Per-stage table keyed by short stage code.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerStage<T> {
    pub dp: Option<T>,
    pub mc: Option<T>,
    pub sg: Option<T>,
}

impl<T> PerStage<T> {
    pub fn get(&self, stage: LifecycleStage) -> Option<&T> {
        match stage {
            LifecycleStage::DataProcessing => self.dp.as_ref(),
            LifecycleStage::ModelConversion => self.mc.as_ref(),
            LifecycleStage::SketchGeneration => self.sg.as_ref(),
        }
    }

    fn get_mut(&mut self, stage: LifecycleStage) -> Option<&mut T> {
        match stage {
            LifecycleStage::DataProcessing => self.dp.as_mut(),
            LifecycleStage::ModelConversion => self.mc.as_mut(),
            LifecycleStage::SketchGeneration => self.sg.as_mut(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    pub system_prompt: Option<String>,
    /// Live only.
    pub endpoint: Option<String>,
    pub request_timeout_secs: Option<u64>,
    /// Scripted only.
    pub fixtures: Option<PerStage<PathBuf>>,
    /// Stochastic only.
    pub stochastic: Option<StochasticConfig>,
}

fn default_model() -> String {
    RequestSettings::default().model_name
}

fn default_temperature() -> f32 {
    RequestSettings::default().temperature
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Price {
    Number(f64),
    Text(String),
}

impl Price {
    fn as_text(&self) -> String {
        match self {
            // shortest round-trip form, so 2.5e-6 stays exactly 0.0000025
            Price::Number(n) => format!("{n}"),
            Price::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub input_price_per_token: Price,
    pub output_price_per_token: Price,
}

impl CostSection {
    pub fn model(&self) -> anyhow::Result<CostModel> {
        Ok(CostModel::parse(
            &self.input_price_per_token.as_text(),
            &self.output_price_per_token.as_text(),
        )?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySection {
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_attempts() -> u32 {
    RetryPolicy::default().max_attempts()
}

fn default_timeout() -> u64 {
    RetryPolicy::default().per_execution_timeout().as_secs()
}

impl Default for RetrySection {
    fn default() -> Self {
        Self {
            max_attempts: default_attempts(),
            timeout_secs: default_timeout(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorSection {
    #[serde(default = "default_interpreter")]
    pub interpreter: String,
    #[serde(default = "default_script_name")]
    pub script_name: String,
    #[serde(default)]
    pub env_whitelist: Vec<String>,
}

fn default_interpreter() -> String {
    "python3".into()
}

fn default_script_name() -> String {
    "code.py".into()
}

impl Default for ExecutorSection {
    fn default() -> Self {
        Self {
            interpreter: default_interpreter(),
            script_name: default_script_name(),
            env_whitelist: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolchainKind {
    #[default]
    Mock,
    ArduinoCli,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolchainSection {
    #[serde(default)]
    pub kind: ToolchainKind,
    pub binary: Option<String>,
    /// Boards the mock toolchain accepts.
    pub known_boards: Option<Vec<String>>,
    #[serde(default)]
    pub upload: bool,
    pub port: Option<String>,
    #[serde(default)]
    pub env_whitelist: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_workspace")]
    pub workspace_root: PathBuf,
    #[serde(default = "default_trace")]
    pub trace_path: PathBuf,
    #[serde(default)]
    pub clock: ClockMode,
    pub provider: ProviderSection,
    pub cost: Option<CostSection>,
    #[serde(default)]
    pub retry: RetrySection,
    #[serde(default)]
    pub templates: PerStage<PathBuf>,
    #[serde(default)]
    pub executor: ExecutorSection,
    #[serde(default)]
    pub toolchain: ToolchainSection,
    #[serde(default)]
    pub stages: PerStage<StageFields>,
}

fn default_workspace() -> PathBuf {
    DEFAULT_WORKSPACE.into()
}

fn default_trace() -> PathBuf {
    DEFAULT_TRACE.into()
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_str(base: &Path, p: &mut Option<String>) {
    if let Some(s) = p {
        if !s.is_empty() && Path::new(s).is_relative() {
            *s = base.join(&*s).display().to_string();
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() {
            Path::new(".")
        } else {
            base
        };
        Self::parse(&text, base).with_context(|| format!("in config {}", path.display()))
    }

    /// Parses config text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut cfg: Config = toml::from_str(text)?;
        resolve(base, &mut cfg.workspace_root);
        resolve(base, &mut cfg.trace_path);
        for stage in LifecycleStage::ALL {
            if let Some(p) = cfg.templates.get_mut(stage) {
                resolve(base, p);
            }
            if let Some(p) = cfg.provider.fixtures.as_mut().and_then(|f| f.get_mut(stage)) {
                resolve(base, p);
            }
            if let Some(f) = cfg.stages.get_mut(stage) {
                resolve_str(base, &mut f.dataset_locator);
                resolve_str(base, &mut f.model_locator);
                resolve_str(base, &mut f.representative_data_locator);
                resolve_str(base, &mut f.converted_model_locator);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let p = &self.provider;
        let set = [
            ("endpoint", p.endpoint.is_some() || p.request_timeout_secs.is_some(), ProviderKind::Live),
            ("fixtures", p.fixtures.is_some(), ProviderKind::Scripted),
            ("stochastic", p.stochastic.is_some(), ProviderKind::Stochastic),
        ];
        for (field, present, owner) in set {
            if present && owner != p.kind {
                bail!("provider.{field} is set but provider.kind is {:?}", p.kind);
            }
            if !present && owner == p.kind {
                bail!("provider.kind is {:?} but provider.{field} is missing", p.kind);
            }
        }
        if let Some(fixtures) = &p.fixtures {
            for stage in LifecycleStage::ALL {
                if let Some(path) = fixtures.get(stage) {
                    ensure!(path.is_file(), "fixture {} does not exist", path.display());
                }
            }
        }
        if let Some(s) = &p.stochastic {
            s.validate().map_err(anyhow::Error::msg)?;
        }
        for stage in LifecycleStage::ALL {
            if let Some(path) = self.templates.get(stage) {
                ensure!(path.is_file(), "template {} does not exist", path.display());
            }
        }
        if let Some(c) = &self.cost {
            c.model().context("cost")?;
        }
        self.policy()?;
        if self.toolchain.upload {
            ensure!(self.toolchain.port.is_some(), "toolchain.upload needs toolchain.port");
        }
        ensure!(!self.executor.script_name.is_empty() && !self.executor.script_name.contains('/'),
            "executor.script_name must be a plain file name");
        Ok(())
    }

    pub fn policy(&self) -> anyhow::Result<RetryPolicy> {
        Ok(RetryPolicy::new(
            self.retry.max_attempts,
            Duration::from_secs(self.retry.timeout_secs),
        )?)
    }

    pub fn cost_model(&self) -> anyhow::Result<Option<CostModel>> {
        self.cost.as_ref().map(CostSection::model).transpose()
    }

    pub fn stage_input(&self, stage: LifecycleStage) -> Option<RawStageInput> {
        self.stages
            .get(stage)
            .map(|f| RawStageInput::new(stage, f.clone()))
    }

    pub fn pipeline_inputs(&self) -> PipelineInputs {
        let mut inputs = PipelineInputs::new();
        for stage in LifecycleStage::ALL {
            if let Some(raw) = self.stage_input(stage) {
                inputs.insert(raw);
            }
        }
        inputs
    }

    pub fn provider_source(&self) -> anyhow::Result<Arc<dyn ProviderSource>> {
        let p = &self.provider;
        Ok(match p.kind {
            ProviderKind::Live => {
                let mut cfg = LiveConfig::new(p.endpoint.clone().unwrap_or_default());
                if let Some(secs) = p.request_timeout_secs {
                    cfg.request_timeout = Duration::from_secs(secs);
                }
                Arc::new(LiveSource::new(cfg))
            }
            ProviderKind::Scripted => {
                let mut src = ScriptedSource::new();
                let fixtures = p.fixtures.as_ref().expect("validated");
                for stage in LifecycleStage::ALL {
                    if let Some(path) = fixtures.get(stage) {
                        src = src.with_fixture(stage, ScriptedSource::load_fixture(path)?);
                    }
                }
                Arc::new(src)
            }
            ProviderKind::Stochastic => Arc::new(StochasticSource::new(
                p.stochastic.clone().expect("validated"),
            )),
        })
    }

    pub fn toolchain(&self) -> Arc<dyn ToolchainAdapter> {
        let t = &self.toolchain;
        match t.kind {
            ToolchainKind::Mock => Arc::new(match &t.known_boards {
                Some(b) => MockToolchain::new(b.iter().cloned()),
                None => MockToolchain::new(DEFAULT_BOARDS.iter().copied()),
            }),
            ToolchainKind::ArduinoCli => {
                let mut cli = ArduinoCli::default();
                if let Some(b) = &t.binary {
                    cli.binary = b.clone();
                }
                cli.env_allow.extend(t.env_whitelist.iter().cloned());
                Arc::new(cli)
            }
        }
    }

    pub fn orchestrator(&self, trace: Arc<dyn TraceSink>) -> anyhow::Result<Orchestrator> {
        let overrides: BTreeMap<LifecycleStage, PathBuf> = LifecycleStage::ALL
            .into_iter()
            .filter_map(|s| self.templates.get(s).map(|p| (s, p.clone())))
            .collect();
        Ok(Orchestrator {
            templates: Arc::new(load_registry(&overrides)?),
            runner: ScriptRunner {
                interpreter: self.executor.interpreter.clone(),
                env_allow: self.executor.env_whitelist.clone(),
            },
            script_name: self.executor.script_name.clone(),
            toolchain: self.toolchain(),
            upload_port: self
                .toolchain
                .upload
                .then(|| self.toolchain.port.clone())
                .flatten(),
            trace,
            request: RequestSettings {
                system_prompt: Some(
                    self.provider
                        .system_prompt
                        .clone()
                        .unwrap_or_else(|| DEFAULT_SYSTEM_PROMPT.into()),
                ),
                model_name: self.provider.model_name.clone(),
                temperature: self.provider.temperature,
            },
            workspace_root: self.workspace_root.clone(),
            clock: self.clock,
            policy: self.policy()?,
        })
    }
}
