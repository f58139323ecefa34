use std::path::Path;

use tinyforge_core::{InputError, LifecycleStage, RawStageInput, StageInput};

/// Validates `raw` for `stage`, checking every locator against the filesystem.
pub fn validate_stage_input(
    stage: LifecycleStage,
    raw: &RawStageInput,
) -> Result<StageInput, InputError> {
    raw.validate(stage, |p| Path::new(p).exists())
}

/// Pre-flight check for a pipeline stage whose upstream locator is filled in
/// later from the previous stage's artifact.
pub fn check_pipeline_input(stage: LifecycleStage, raw: &RawStageInput) -> Result<(), InputError> {
    raw.check_awaiting_upstream(stage, |p| Path::new(p).exists())
}
