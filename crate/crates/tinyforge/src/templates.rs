//! Default prompt templates and loading of user overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use tinyforge_core::{LifecycleStage, PromptTemplate, TemplateRegistry};

pub fn default_template_text(stage: LifecycleStage) -> &'static str {
    match stage {
        LifecycleStage::DataProcessing => include_str!("../templates/data_processing.txt"),
        LifecycleStage::ModelConversion => include_str!("../templates/model_conversion.txt"),
        LifecycleStage::SketchGeneration => include_str!("../templates/sketch_generation.txt"),
    }
}

/// Registry holding the shipped template for every stage, replaced by the
/// file in `overrides` where one is given.
pub fn load_registry(
    overrides: &BTreeMap<LifecycleStage, PathBuf>,
) -> anyhow::Result<TemplateRegistry> {
    let mut registry = TemplateRegistry::new();
    for stage in LifecycleStage::ALL {
        let (text, origin) = match overrides.get(&stage) {
            Some(path) => (
                fs::read_to_string(path)
                    .with_context(|| format!("reading template {}", path.display()))?,
                path.display().to_string(),
            ),
            None => (default_template_text(stage).to_string(), "built-in".to_string()),
        };
        let template = PromptTemplate::parse(stage, &text)
            .with_context(|| format!("parsing {stage} template ({origin})"))?;
        registry
            .register(template)
            .with_context(|| format!("registering {stage} template ({origin})"))?;
    }
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tinyforge_core::lint_template;

    #[test]
    fn shipped_templates_lint_clean() {
        for stage in LifecycleStage::ALL {
            let t = PromptTemplate::parse(stage, default_template_text(stage)).unwrap();
            assert_eq!(lint_template(&t), Vec::<String>::new(), "{stage}");
        }
        load_registry(&BTreeMap::new()).unwrap();
    }

    #[test]
    fn override_replaces_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sg.txt");
        let custom = default_template_text(LifecycleStage::SketchGeneration)
            .replace("== SECTION: context_setup ==", "== SECTION: context_setup ==\nCUSTOM MARKER");
        fs::write(&path, custom).unwrap();
        let reg = load_registry(&BTreeMap::from([(LifecycleStage::SketchGeneration, path)])).unwrap();
        let t = reg.get(LifecycleStage::SketchGeneration).unwrap();
        assert!(format!("{t:?}").contains("CUSTOM MARKER"));
    }

    #[test]
    fn broken_override_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dp.txt");
        fs::write(&path, "== SECTION: context_setup ==\n{foo}\n").unwrap();
        let err = load_registry(&BTreeMap::from([(LifecycleStage::DataProcessing, path)]))
            .unwrap_err();
        assert!(format!("{err:#}").contains("data"), "{err:#}");
    }
}
