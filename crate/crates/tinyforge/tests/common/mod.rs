#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use tinyforge::core::stage::StageFields;
use tinyforge::core::{LifecycleStage, QuantizationTarget, RawStageInput, RetryPolicy};
use tinyforge::llm::FixtureEntry;
use tinyforge::pipeline::RequestSettings;
use tinyforge::templates::load_registry;
use tinyforge::{ClockMode, MockToolchain, Orchestrator, PipelineInputs, ScriptRunner, TraceSink};

pub const BOARD: &str = "arduino:mbed_nano:nano33ble";

pub fn dp_ok() -> FixtureEntry {
    FixtureEntry::with_usage(
        "Processing script:\n\n```sh\nmkdir -p artifacts/processed\nprintf 'r,g,b,label\\n' > artifacts/processed/train.csv\n```\n",
        900,
        300,
    )
}

pub fn mc_ok() -> FixtureEntry {
    FixtureEntry::with_usage(
        "```sh\nmkdir -p artifacts\nprintf 'TFL3-int8' > artifacts/model.tflite\n```\n",
        500,
        120,
    )
}

pub fn sg_ok() -> FixtureEntry {
    FixtureEntry::with_usage(
        "```cpp\n#include <Arduino.h>\nvoid setup() {}\nvoid loop() {}\n```\n",
        1500,
        700,
    )
}

/// A script that prints `msg` on stderr and exits 1.
pub fn script_fail(msg: &str) -> FixtureEntry {
    FixtureEntry::with_usage(
        format!("```sh\ncat >&2 <<'EOF'\n{msg}\nEOF\nexit 1\n```\n"),
        800,
        200,
    )
}

/// A sketch that the mock toolchain rejects with `msg`.
pub fn sg_fail(msg: &str) -> FixtureEntry {
    FixtureEntry::with_usage(
        format!("```cpp\nvoid setup() {{}}\n// FORCE_COMPILE_ERROR: {msg}\n```\n"),
        1400,
        650,
    )
}

/// Orchestrator running generated scripts with `sh` and sketches through
/// the mock toolchain.
pub fn orchestrator(root: &Path, trace: Arc<dyn TraceSink>, max_attempts: u32) -> Orchestrator {
    Orchestrator {
        templates: Arc::new(load_registry(&Default::default()).unwrap()),
        runner: ScriptRunner {
            interpreter: "sh".into(),
            env_allow: vec![],
        },
        script_name: "code.sh".into(),
        toolchain: Arc::new(MockToolchain::default()),
        upload_port: None,
        trace,
        request: RequestSettings::default(),
        workspace_root: root.join("runs"),
        clock: ClockMode::Wall,
        policy: RetryPolicy::new(max_attempts, Duration::from_secs(10)).unwrap(),
    }
}

/// User inputs for all three stages. Upstream locators of MC and SG are
/// left for chaining; `dataset` and `model.h5` are created under `root`.
pub struct Inputs {
    pub dp: RawStageInput,
    pub mc: RawStageInput,
    pub sg: RawStageInput,
}

pub fn inputs(root: &Path) -> Inputs {
    let dataset = root.join("dataset");
    fs::create_dir_all(&dataset).unwrap();
    fs::write(dataset.join("fruit.csv"), "red,green,blue,class\n").unwrap();
    let model = root.join("model.h5");
    fs::write(&model, "HDF5").unwrap();
    Inputs {
        dp: RawStageInput::new(
            LifecycleStage::DataProcessing,
            StageFields {
                dataset_locator: Some(path(&dataset)),
                dataset_description: Some("RGB colour readings labelled by fruit".into()),
                model_purpose: Some("classify fruit on a Nano 33 BLE".into()),
                ..Default::default()
            },
        ),
        mc: RawStageInput::new(
            LifecycleStage::ModelConversion,
            StageFields {
                model_locator: Some(path(&model)),
                dataset_overview: Some("3 float features in [0, 255], 5 classes".into()),
                quantization_target: Some(QuantizationTarget::Int8),
                ..Default::default()
            },
        ),
        sg: RawStageInput::new(
            LifecycleStage::SketchGeneration,
            StageFields {
                board_id: Some(BOARD.into()),
                application_description: Some("fruit classifier".into()),
                peripheral_description: Some("APDS9960 colour sensor".into()),
                ..Default::default()
            },
        ),
    }
}

impl Inputs {
    pub fn pipeline(&self) -> PipelineInputs {
        PipelineInputs::new()
            .with(self.dp.clone())
            .with(self.mc.clone())
            .with(self.sg.clone())
    }

    /// SG input with an existing converted model, for single-stage runs.
    pub fn sg_standalone(&self, root: &Path) -> RawStageInput {
        let model = root.join("model.tflite");
        fs::write(&model, "TFL3").unwrap();
        let mut sg = self.sg.clone();
        sg.fields.converted_model_locator = Some(path(&model));
        sg
    }
}

pub fn path(p: &Path) -> String {
    p.display().to_string()
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Writes a JSON fixture file and returns its path.
pub fn write_fixture(dir: &Path, name: &str, entries: &[FixtureEntry]) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(entries).unwrap()).unwrap();
    p
}

/// Every file under `dir`, recursively.
pub fn all_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}
