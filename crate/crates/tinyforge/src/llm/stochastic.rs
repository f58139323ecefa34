use std::collections::BTreeMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use tinyforge_core::{LifecycleStage, LlmRequest, LlmResponse, TokenUsage};

use super::{check_request, Completion, LlmProvider, ProviderError, ProviderSource};

/// Code bodies for one stage. `{error}` in the failure body is replaced by
/// a diagnostic drawn from the stage's error list.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseBodies {
    pub success: String,
    pub failure: String,
    #[serde(default)]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticConfig {
    pub seed: u64,
    #[serde(default = "default_probability")]
    pub success_probability: f64,
    /// Per-stage override of `success_probability`.
    #[serde(default)]
    pub stage_probability: BTreeMap<LifecycleStage, f64>,
    #[serde(default = "default_prompt_tokens")]
    pub prompt_tokens: [u64; 2],
    #[serde(default = "default_completion_tokens")]
    pub completion_tokens: [u64; 2],
    /// Simulated generation speed.
    #[serde(default = "default_ms_per_token")]
    pub ms_per_token: u64,
    #[serde(default = "default_base_latency")]
    pub base_latency_ms: u64,
    #[serde(default)]
    pub bodies: BTreeMap<LifecycleStage, ResponseBodies>,
}

fn default_probability() -> f64 {
    0.8
}
fn default_prompt_tokens() -> [u64; 2] {
    [1200, 3200]
}
fn default_completion_tokens() -> [u64; 2] {
    [300, 1500]
}
fn default_ms_per_token() -> u64 {
    25
}
fn default_base_latency() -> u64 {
    400
}

impl StochasticConfig {
    pub fn new(seed: u64, success_probability: f64) -> Self {
        Self {
            seed,
            success_probability,
            stage_probability: BTreeMap::new(),
            prompt_tokens: default_prompt_tokens(),
            completion_tokens: default_completion_tokens(),
            ms_per_token: default_ms_per_token(),
            base_latency_ms: default_base_latency(),
            bodies: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let probs = std::iter::once(&self.success_probability).chain(self.stage_probability.values());
        for p in probs {
            if !(0.0..=1.0).contains(p) {
                return Err(format!("success probability {p} outside [0, 1]"));
            }
        }
        for (name, [lo, hi]) in [
            ("prompt_tokens", self.prompt_tokens),
            ("completion_tokens", self.completion_tokens),
        ] {
            if lo > hi {
                return Err(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        Ok(())
    }

    pub fn probability(&self, stage: LifecycleStage) -> f64 {
        self.stage_probability
            .get(&stage)
            .copied()
            .unwrap_or(self.success_probability)
    }

    fn bodies(&self, stage: LifecycleStage) -> ResponseBodies {
        self.bodies
            .get(&stage)
            .cloned()
            .unwrap_or_else(|| default_bodies(stage))
    }
}

fn default_bodies(stage: LifecycleStage) -> ResponseBodies {
    let (success, failure, errors): (&str, &str, &[&str]) = match stage {
        LifecycleStage::DataProcessing => (
            "import os\n\
             os.makedirs(\"artifacts/processed\", exist_ok=True)\n\
             with open(\"artifacts/processed/dataset.csv\", \"w\") as f:\n\
             \x20   f.write(\"red,green,blue,label\\n\")\n",
            "import sys\nsys.stderr.write(\"{error}\\n\")\nsys.exit(1)\n",
            &[
                "ValueError: could not convert string to float: 'label'",
                "KeyError: 'Class'",
                "FileNotFoundError: [Errno 2] No such file or directory: 'data/train.csv'",
            ],
        ),
        LifecycleStage::ModelConversion => (
            "import os\n\
             os.makedirs(\"artifacts\", exist_ok=True)\n\
             with open(\"artifacts/model.tflite\", \"wb\") as f:\n\
             \x20   f.write(b\"TFL3\" + bytes(64))\n",
            "import sys\nsys.stderr.write(\"{error}\\n\")\nsys.exit(1)\n",
            &[
                "ValueError: representative_dataset must yield float32 inputs",
                "RuntimeError: Quantization not yet supported for op: 'DEQUANTIZE'",
            ],
        ),
        LifecycleStage::SketchGeneration => (
            "#include <Arduino.h>\n\nvoid setup() {\n  Serial.begin(9600);\n}\n\nvoid loop() {\n  delay(100);\n}\n",
            "#include <Arduino.h>\n\nvoid setup() {}\n\nvoid loop() {}\n// FORCE_COMPILE_ERROR: {error}\n",
            &[
                "'tflite::MicroMutableOpResolver' has not been declared",
                "'APDS9960' was not declared in this scope",
                "region `FLASH' overflowed by 41216 bytes",
            ],
        ),
    };
    ResponseBodies {
        success: success.into(),
        failure: failure.into(),
        errors: errors.iter().map(|s| s.to_string()).collect(),
    }
}

fn fence_tag(stage: LifecycleStage) -> &'static str {
    match stage {
        LifecycleStage::SketchGeneration => "cpp",
        _ => "python",
    }
}

/// Seeded responder: each call's outcome, token counts and latency are a
/// pure function of (seed, stage, ordinal, call index).
pub struct StochasticProvider {
    config: StochasticConfig,
    stage: LifecycleStage,
    ordinal: u64,
    calls: u64,
}

impl StochasticProvider {
    pub fn new(config: StochasticConfig, stage: LifecycleStage, ordinal: u64) -> Self {
        Self {
            config,
            stage,
            ordinal,
            calls: 0,
        }
    }

    fn rng(&self, call: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update(self.stage.code().as_bytes());
        h.update(self.ordinal.to_le_bytes());
        h.update(call.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Whether call `call` is scripted to succeed, without consuming it.
    pub fn outcome_at(&self, call: u64) -> bool {
        self.rng(call).random::<f64>() < self.config.probability(self.stage)
    }
}

impl LlmProvider for StochasticProvider {
    fn complete(&mut self, request: &LlmRequest) -> Result<Completion, ProviderError> {
        check_request(request)?;
        let call = self.calls;
        self.calls += 1;
        let mut rng = self.rng(call);
        let pass = rng.random::<f64>() < self.config.probability(self.stage);
        let [plo, phi] = self.config.prompt_tokens;
        let [clo, chi] = self.config.completion_tokens;
        let usage = TokenUsage::new(rng.random_range(plo..=phi), rng.random_range(clo..=chi));
        let bodies = self.config.bodies(self.stage);
        let code = if pass {
            bodies.success
        } else {
            let error = if bodies.errors.is_empty() {
                "generated code failed".to_string()
            } else {
                bodies.errors[rng.random_range(0..bodies.errors.len())].clone()
            };
            bodies.failure.replace("{error}", &error)
        };
        let content = format!(
            "Here is the code for this stage.\n\n```{}\n{}```\n",
            fence_tag(self.stage),
            code
        );
        let latency = Duration::from_millis(
            self.config.base_latency_ms + usage.completion_tokens * self.config.ms_per_token,
        );
        Ok(Completion {
            response: LlmResponse::reported(content, usage),
            simulated_latency: Some(latency),
        })
    }
}

#[derive(Debug, Clone)]
pub struct StochasticSource {
    config: StochasticConfig,
}

impl StochasticSource {
    pub fn new(config: StochasticConfig) -> Self {
        Self { config }
    }
}

impl ProviderSource for StochasticSource {
    fn provider(
        &self,
        stage: LifecycleStage,
        ordinal: u64,
    ) -> Result<Box<dyn LlmProvider>, ProviderError> {
        Ok(Box::new(StochasticProvider::new(self.config.clone(), stage, ordinal)))
    }
}
