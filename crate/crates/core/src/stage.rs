//! Lifecycle stages and their input payloads.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// One automated stage of the embedded-ML lifecycle, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleStage {
    DataProcessing,
    ModelConversion,
    SketchGeneration,
}

impl LifecycleStage {
    pub const ALL: [LifecycleStage; 3] = [
        LifecycleStage::DataProcessing,
        LifecycleStage::ModelConversion,
        LifecycleStage::SketchGeneration,
    ];

    /// Short upper-case label used in reports (`DP`, `MC`, `SG`).
    pub fn label(self) -> &'static str {
        match self {
            LifecycleStage::DataProcessing => "DP",
            LifecycleStage::ModelConversion => "MC",
            LifecycleStage::SketchGeneration => "SG",
        }
    }

    /// Lower-case flag spelling (`dp`, `mc`, `sg`).
    pub fn code(self) -> &'static str {
        match self {
            LifecycleStage::DataProcessing => "dp",
            LifecycleStage::ModelConversion => "mc",
            LifecycleStage::SketchGeneration => "sg",
        }
    }

    /// Directory and trace spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleStage::DataProcessing => "data_processing",
            LifecycleStage::ModelConversion => "model_conversion",
            LifecycleStage::SketchGeneration => "sketch_generation",
        }
    }

    pub fn next(self) -> Option<LifecycleStage> {
        match self {
            LifecycleStage::DataProcessing => Some(LifecycleStage::ModelConversion),
            LifecycleStage::ModelConversion => Some(LifecycleStage::SketchGeneration),
            LifecycleStage::SketchGeneration => None,
        }
    }

    /// Input fields owned by this stage, in declaration order.
    pub fn fields(self) -> &'static [&'static str] {
        match self {
            LifecycleStage::DataProcessing => {
                &["dataset_locator", "dataset_description", "model_purpose"]
            }
            LifecycleStage::ModelConversion => &[
                "model_locator",
                "dataset_overview",
                "quantization_target",
                "representative_data_locator",
            ],
            LifecycleStage::SketchGeneration => &[
                "converted_model_locator",
                "board_id",
                "application_description",
                "peripheral_description",
            ],
        }
    }

    /// The field filled from the previous stage's artifact, if any.
    pub fn upstream_field(self) -> Option<&'static str> {
        match self {
            LifecycleStage::DataProcessing => None,
            LifecycleStage::ModelConversion => Some("representative_data_locator"),
            LifecycleStage::SketchGeneration => Some("converted_model_locator"),
        }
    }

    pub fn locator_fields(self) -> &'static [&'static str] {
        match self {
            LifecycleStage::DataProcessing => &["dataset_locator"],
            LifecycleStage::ModelConversion => &["model_locator", "representative_data_locator"],
            LifecycleStage::SketchGeneration => &["converted_model_locator"],
        }
    }
}

impl fmt::Display for LifecycleStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown stage `{0}` (expected dp, mc or sg)")]
pub struct UnknownStage(pub String);

impl FromStr for LifecycleStage {
    type Err = UnknownStage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LifecycleStage::ALL
            .into_iter()
            .find(|st| s.eq_ignore_ascii_case(st.code()) || s == st.as_str())
            .ok_or_else(|| UnknownStage(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizationTarget {
    Int8,
}

impl QuantizationTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantizationTarget::Int8 => "int8",
        }
    }
}

/// Unvalidated stage payload as it arrives from configuration.
///
/// Every field is optional; [`RawStageInput::validate`] enforces that exactly
/// the claimed stage's fields are populated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_locator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_purpose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_locator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_overview: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization_target: Option<QuantizationTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representative_data_locator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converted_model_locator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub board_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub application_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peripheral_description: Option<String>,
}

impl StageFields {
    /// Value of a named field, or `None` when unset or blank.
    pub fn get(&self, name: &str) -> Option<&str> {
        let v = match name {
            "dataset_locator" => self.dataset_locator.as_deref(),
            "dataset_description" => self.dataset_description.as_deref(),
            "model_purpose" => self.model_purpose.as_deref(),
            "model_locator" => self.model_locator.as_deref(),
            "dataset_overview" => self.dataset_overview.as_deref(),
            "quantization_target" => self.quantization_target.map(QuantizationTarget::as_str),
            "representative_data_locator" => self.representative_data_locator.as_deref(),
            "converted_model_locator" => self.converted_model_locator.as_deref(),
            "board_id" => self.board_id.as_deref(),
            "application_description" => self.application_description.as_deref(),
            "peripheral_description" => self.peripheral_description.as_deref(),
            _ => None,
        };
        v.filter(|s| !s.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawStageInput {
    pub stage: LifecycleStage,
    pub fields: StageFields,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InputError {
    #[error("input claims stage {claimed} but was submitted for {expected}")]
    StageMismatch {
        claimed: LifecycleStage,
        expected: LifecycleStage,
    },
    #[error("fields {fields:?} do not belong to stage {stage}")]
    WrongStageFields {
        stage: LifecycleStage,
        fields: Vec<&'static str>,
    },
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("{field} points to `{path}`, which does not exist")]
    PathNotFound { field: &'static str, path: String },
}

impl RawStageInput {
    pub fn new(stage: LifecycleStage, fields: StageFields) -> Self {
        Self { stage, fields }
    }

    /// Checks the payload against `stage` and returns the typed input.
    ///
    /// `path_exists` is consulted for every locator field.
    pub fn validate(
        &self,
        stage: LifecycleStage,
        path_exists: impl Fn(&str) -> bool,
    ) -> Result<StageInput, InputError> {
        self.check(stage, &path_exists, false)?;
        Ok(self.typed())
    }

    /// Same checks as [`validate`](Self::validate) except that the field fed
    /// by the previous stage's artifact may still be absent.
    pub fn check_awaiting_upstream(
        &self,
        stage: LifecycleStage,
        path_exists: impl Fn(&str) -> bool,
    ) -> Result<(), InputError> {
        self.check(stage, &path_exists, true)
    }

    fn check(
        &self,
        stage: LifecycleStage,
        path_exists: &dyn Fn(&str) -> bool,
        awaiting_upstream: bool,
    ) -> Result<(), InputError> {
        if self.stage != stage {
            return Err(InputError::StageMismatch {
                claimed: self.stage,
                expected: stage,
            });
        }
        let foreign: Vec<&'static str> = LifecycleStage::ALL
            .iter()
            .filter(|s| **s != stage)
            .flat_map(|s| s.fields().iter().copied())
            .filter(|f| self.fields.get(f).is_some())
            .collect();
        if !foreign.is_empty() {
            return Err(InputError::WrongStageFields {
                stage,
                fields: foreign,
            });
        }
        let deferred = if awaiting_upstream {
            stage.upstream_field()
        } else {
            None
        };
        for &field in stage.fields() {
            if Some(field) == deferred && self.fields.get(field).is_none() {
                continue;
            }
            if self.fields.get(field).is_none() {
                return Err(InputError::MissingField(field));
            }
        }
        for &field in stage.locator_fields() {
            if let Some(path) = self.fields.get(field) {
                if !path_exists(path) {
                    return Err(InputError::PathNotFound {
                        field,
                        path: path.into(),
                    });
                }
            }
        }
        Ok(())
    }

    fn typed(&self) -> StageInput {
        let f = |name| String::from(self.fields.get(name).unwrap_or_default());
        match self.stage {
            LifecycleStage::DataProcessing => StageInput::DataProcessing(DataProcessingInput {
                dataset_locator: f("dataset_locator"),
                dataset_description: f("dataset_description"),
                model_purpose: f("model_purpose"),
            }),
            LifecycleStage::ModelConversion => StageInput::ModelConversion(ModelConversionInput {
                model_locator: f("model_locator"),
                dataset_overview: f("dataset_overview"),
                quantization_target: self
                    .fields
                    .quantization_target
                    .unwrap_or(QuantizationTarget::Int8),
                representative_data_locator: f("representative_data_locator"),
            }),
            LifecycleStage::SketchGeneration => {
                StageInput::SketchGeneration(SketchGenerationInput {
                    converted_model_locator: f("converted_model_locator"),
                    board_id: f("board_id"),
                    application_description: f("application_description"),
                    peripheral_description: f("peripheral_description"),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataProcessingInput {
    pub dataset_locator: String,
    pub dataset_description: String,
    pub model_purpose: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConversionInput {
    pub model_locator: String,
    pub dataset_overview: String,
    pub quantization_target: QuantizationTarget,
    pub representative_data_locator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchGenerationInput {
    pub converted_model_locator: String,
    pub board_id: String,
    pub application_description: String,
    pub peripheral_description: String,
}

/// A validated stage payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageInput {
    DataProcessing(DataProcessingInput),
    ModelConversion(ModelConversionInput),
    SketchGeneration(SketchGenerationInput),
}

impl StageInput {
    pub fn stage(&self) -> LifecycleStage {
        match self {
            StageInput::DataProcessing(_) => LifecycleStage::DataProcessing,
            StageInput::ModelConversion(_) => LifecycleStage::ModelConversion,
            StageInput::SketchGeneration(_) => LifecycleStage::SketchGeneration,
        }
    }

    /// Looks up a field by name for placeholder substitution.
    pub fn field(&self, name: &str) -> Option<&str> {
        match self {
            StageInput::DataProcessing(i) => match name {
                "dataset_locator" => Some(&i.dataset_locator),
                "dataset_description" => Some(&i.dataset_description),
                "model_purpose" => Some(&i.model_purpose),
                _ => None,
            },
            StageInput::ModelConversion(i) => match name {
                "model_locator" => Some(&i.model_locator),
                "dataset_overview" => Some(&i.dataset_overview),
                "quantization_target" => Some(i.quantization_target.as_str()),
                "representative_data_locator" => Some(&i.representative_data_locator),
                _ => None,
            },
            StageInput::SketchGeneration(i) => match name {
                "converted_model_locator" => Some(&i.converted_model_locator),
                "board_id" => Some(&i.board_id),
                "application_description" => Some(&i.application_description),
                "peripheral_description" => Some(&i.peripheral_description),
                _ => None,
            },
        }
    }

    pub fn board_id(&self) -> Option<&str> {
        match self {
            StageInput::SketchGeneration(i) => Some(&i.board_id),
            _ => None,
        }
    }

    pub fn to_raw(&self) -> RawStageInput {
        let mut fields = StageFields::default();
        match self {
            StageInput::DataProcessing(i) => {
                fields.dataset_locator = Some(i.dataset_locator.clone());
                fields.dataset_description = Some(i.dataset_description.clone());
                fields.model_purpose = Some(i.model_purpose.clone());
            }
            StageInput::ModelConversion(i) => {
                fields.model_locator = Some(i.model_locator.clone());
                fields.dataset_overview = Some(i.dataset_overview.clone());
                fields.quantization_target = Some(i.quantization_target);
                fields.representative_data_locator = Some(i.representative_data_locator.clone());
            }
            StageInput::SketchGeneration(i) => {
                fields.converted_model_locator = Some(i.converted_model_locator.clone());
                fields.board_id = Some(i.board_id.clone());
                fields.application_description = Some(i.application_description.clone());
                fields.peripheral_description = Some(i.peripheral_description.clone());
            }
        }
        RawStageInput::new(self.stage(), fields)
    }
}
