//! Sectioned prompt templates.
//!
//! A template is five sections in a fixed order. Bodies may reference named
//! slots as `{name}`; literal braces are written `{{` and `}}`. The reserved
//! slot `{prior_error}` lives on its own line inside the error-handling
//! section and receives the previous attempt's diagnostic excerpt.
//!
//! On disk a template is plain text:
//!
//! ```text
//! == PLACEHOLDERS: dataset_description, prior_error ==
//! == SECTION: context_setup ==
//! You are preparing a dataset described as {dataset_description}.
//! == SECTION: objectives ==
//! ...
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::stage::{LifecycleStage, StageInput};

pub const PRIOR_ERROR: &str = "prior_error";

/// Text substituted for `{prior_error}` on a first attempt.
pub const NO_PRIOR_ERROR: &str = "None. This is the first attempt.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    ContextSetup,
    Objectives,
    TaskInstructions,
    ErrorHandlingProtocol,
    OutputIndicator,
}

impl SectionKind {
    pub const ALL: [SectionKind; 5] = [
        SectionKind::ContextSetup,
        SectionKind::Objectives,
        SectionKind::TaskInstructions,
        SectionKind::ErrorHandlingProtocol,
        SectionKind::OutputIndicator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SectionKind::ContextSetup => "context_setup",
            SectionKind::Objectives => "objectives",
            SectionKind::TaskInstructions => "task_instructions",
            SectionKind::ErrorHandlingProtocol => "error_handling_protocol",
            SectionKind::OutputIndicator => "output_indicator",
        }
    }

    /// Heading line used in rendered prompts.
    pub fn heading(self) -> &'static str {
        match self {
            SectionKind::ContextSetup => "### Context Setup",
            SectionKind::Objectives => "### Objectives",
            SectionKind::TaskInstructions => "### Task Instructions",
            SectionKind::ErrorHandlingProtocol => "### Error Handling Protocol",
            SectionKind::OutputIndicator => "### Output Indicator",
        }
    }

    fn rank(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SectionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| *c != '_' && *c != ' ' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        SectionKind::ALL
            .into_iter()
            .find(|k| k.as_str().replace('_', "") == norm)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub stage: LifecycleStage,
    pub sections: Vec<(SectionKind, String)>,
    pub placeholders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("template for {stage} failed lint: {}", .issues.join("; "))]
    LintFailure {
        stage: LifecycleStage,
        issues: Vec<String>,
    },
    #[error("no template registered for {0}")]
    NotRegistered(LifecycleStage),
    #[error("placeholder `{0}` cannot be resolved")]
    UnresolvedPlaceholder(String),
    #[error("malformed template text: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment<'a> {
    Text(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn tokenize(body: &str) -> Result<Vec<Segment<'_>>, String> {
    let mut out = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    let mut text_start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' | b'}' if bytes.get(i + 1) == Some(&bytes[i]) => {
                out.push(Segment::Text(&body[text_start..i]));
                out.push(Segment::Brace(bytes[i] as char));
                i += 2;
                text_start = i;
            }
            b'{' => {
                let close = body[i + 1..]
                    .find('}')
                    .map(|j| i + 1 + j)
                    .ok_or_else(|| format!("unclosed `{{` at byte {i}"))?;
                let name = &body[i + 1..close];
                if !is_slot_name(name) {
                    return Err(format!("`{{{name}}}` is not a placeholder (escape braces as `{{{{`)"));
                }
                out.push(Segment::Text(&body[text_start..i]));
                out.push(Segment::Slot(name));
                i = close + 1;
                text_start = i;
            }
            b'}' => return Err(format!("unmatched `}}` at byte {i}")),
            _ => i += 1,
        }
    }
    out.push(Segment::Text(&body[text_start..]));
    out.retain(|s| !matches!(s, Segment::Text("")));
    Ok(out)
}

impl PromptTemplate {
    pub fn new(
        stage: LifecycleStage,
        sections: Vec<(SectionKind, String)>,
        placeholders: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            stage,
            sections,
            placeholders: placeholders.into_iter().map(Into::into).collect(),
        }
    }

    /// Parses the `== SECTION: <kind> ==` text format.
    pub fn parse(stage: LifecycleStage, text: &str) -> Result<Self, PromptError> {
        let mut placeholders = Vec::new();
        let mut sections: Vec<(SectionKind, Vec<&str>)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let err = |message: String| PromptError::Parse {
                line: n + 1,
                message,
            };
            let directive = line
                .trim()
                .strip_prefix("==")
                .and_then(|l| l.strip_suffix("=="))
                .map(str::trim);
            match directive.and_then(|d| d.split_once(':')) {
                Some((key, value)) if key.trim() == "SECTION" => {
                    let kind = value
                        .trim()
                        .parse()
                        .map_err(|k| err(format!("unknown section kind `{k}`")))?;
                    sections.push((kind, Vec::new()));
                }
                Some((key, value)) if key.trim() == "PLACEHOLDERS" => {
                    if !sections.is_empty() {
                        return Err(err("PLACEHOLDERS must precede all sections".into()));
                    }
                    placeholders.extend(
                        value
                            .split(',')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(String::from),
                    );
                }
                Some((key, _)) => return Err(err(format!("unknown directive `{}`", key.trim()))),
                None => match sections.last_mut() {
                    Some((_, body)) => body.push(line),
                    None if line.trim().is_empty() || line.trim_start().starts_with('#') => {}
                    None => return Err(err("text before the first section".into())),
                },
            }
        }
        let sections = sections
            .into_iter()
            .map(|(kind, lines)| {
                let start = lines.iter().position(|l| !l.trim().is_empty());
                let end = lines.iter().rposition(|l| !l.trim().is_empty());
                let body = match (start, end) {
                    (Some(s), Some(e)) => lines[s..=e].join("\n"),
                    _ => String::new(),
                };
                (kind, body)
            })
            .collect();
        Ok(Self::new(stage, sections, placeholders))
    }

    fn section(&self, kind: SectionKind) -> Option<&str> {
        self.sections
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, b)| b.as_str())
    }
}

/// Checks structural invariants; an empty list means the template is sound.
pub fn lint_template(template: &PromptTemplate) -> Vec<String> {
    let mut issues = Vec::new();

    for kind in SectionKind::ALL {
        match template.sections.iter().filter(|(k, _)| *k == kind).count() {
            0 => issues.push(format!("missing section {kind}")),
            1 => {}
            n => issues.push(format!("duplicate section {kind} ({n} occurrences)")),
        }
    }
    let mut highest = 0;
    for (i, (kind, _)) in template.sections.iter().enumerate() {
        if kind.rank() < highest {
            issues.push(format!("section order violated at index {i}"));
            break;
        }
        highest = kind.rank();
    }

    for name in &template.placeholders {
        if name != PRIOR_ERROR && !template.stage.fields().contains(&name.as_str()) {
            issues.push(format!(
                "declared placeholder {{{name}}} is not an input of stage {}",
                template.stage.code()
            ));
        }
    }

    let mut prior_error_slots = 0;
    for (kind, body) in &template.sections {
        let segments = match tokenize(body) {
            Ok(s) => s,
            Err(e) => {
                issues.push(format!("section {kind}: {e}"));
                continue;
            }
        };
        for seg in segments {
            let Segment::Slot(name) = seg else { continue };
            if !template.placeholders.iter().any(|p| p == name) {
                issues.push(format!("undeclared placeholder {{{name}}} in section {kind}"));
            }
            if name == PRIOR_ERROR {
                prior_error_slots += 1;
                if *kind != SectionKind::ErrorHandlingProtocol {
                    issues.push(format!(
                        "{{{PRIOR_ERROR}}} may only appear in section {}",
                        SectionKind::ErrorHandlingProtocol
                    ));
                }
            }
        }
    }
    if let Some(body) = template.section(SectionKind::ErrorHandlingProtocol) {
        let slot = format!("{{{PRIOR_ERROR}}}");
        if body.lines().any(|l| l.contains(&slot) && l.trim() != slot) {
            issues.push(format!("{slot} must stand alone on its line"));
        }
    }
    if prior_error_slots != 1 {
        issues.push(format!(
            "expected exactly one {{{PRIOR_ERROR}}} slot, found {prior_error_slots}"
        ));
    }
    issues
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub stage: LifecycleStage,
    pub attempt_index: u32,
    pub contains_error_feedback: bool,
}

/// Renders `template` for `input`.
///
/// Sections are emitted in canonical order under fixed headings. Slot values
/// are inserted verbatim and never rescanned, so braces inside an error
/// excerpt or a description stay literal.
pub fn render_prompt(
    template: &PromptTemplate,
    input: &StageInput,
    prior_error: Option<&str>,
    attempt_index: u32,
) -> Result<RenderedPrompt, PromptError> {
    let mut text = String::new();
    for kind in SectionKind::ALL {
        let Some(body) = template.section(kind) else {
            continue;
        };
        if !text.is_empty() {
            text.push_str("\n\n");
        }
        text.push_str(kind.heading());
        text.push('\n');
        for seg in tokenize(body).map_err(PromptError::Malformed)? {
            match seg {
                Segment::Text(t) => text.push_str(t),
                Segment::Brace(c) => text.push(c),
                Segment::Slot(PRIOR_ERROR) => {
                    text.push_str(prior_error.unwrap_or(NO_PRIOR_ERROR))
                }
                Segment::Slot(name) => text.push_str(
                    input
                        .field(name)
                        .ok_or_else(|| PromptError::UnresolvedPlaceholder(name.into()))?,
                ),
            }
        }
    }
    text.push('\n');
    Ok(RenderedPrompt {
        text,
        stage: input.stage(),
        attempt_index,
        contains_error_feedback: prior_error.is_some(),
    })
}

/// Returns the body of `kind` inside a rendered prompt, if present.
pub fn rendered_section(text: &str, kind: SectionKind) -> Option<&str> {
    let start = text.find(&format!("{}\n", kind.heading()))? + kind.heading().len() + 1;
    let rest = &text[start..];
    let end = SectionKind::ALL
        .iter()
        .filter(|k| **k > kind)
        .filter_map(|k| rest.find(&format!("\n\n{}\n", k.heading())))
        .min()
        .unwrap_or(rest.len());
    Some(&rest[..end])
}

/// Per-stage template store. Written at startup, read concurrently after.
#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    templates: BTreeMap<LifecycleStage, PromptTemplate>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a template, replacing any previous one for its stage.
    pub fn register(&mut self, template: PromptTemplate) -> Result<(), PromptError> {
        let issues = lint_template(&template);
        if !issues.is_empty() {
            return Err(PromptError::LintFailure {
                stage: template.stage,
                issues,
            });
        }
        self.templates.insert(template.stage, template);
        Ok(())
    }

    pub fn get(&self, stage: LifecycleStage) -> Option<&PromptTemplate> {
        self.templates.get(&stage)
    }

    pub fn render(
        &self,
        input: &StageInput,
        prior_error: Option<&str>,
        attempt_index: u32,
    ) -> Result<RenderedPrompt, PromptError> {
        let template = self
            .get(input.stage())
            .ok_or(PromptError::NotRegistered(input.stage()))?;
        render_prompt(template, input, prior_error, attempt_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::{DataProcessingInput, SketchGenerationInput};
    use alloc::vec;
    use proptest::prelude::*;

    fn dp_template() -> PromptTemplate {
        PromptTemplate::new(
            LifecycleStage::DataProcessing,
            vec![
                (SectionKind::ContextSetup, "Dataset: {dataset_description}".into()),
                (SectionKind::Objectives, "Purpose: {model_purpose}".into()),
                (
                    SectionKind::TaskInstructions,
                    "Read {dataset_locator}; write artifacts/processed. Use {{braces}}.".into(),
                ),
                (
                    SectionKind::ErrorHandlingProtocol,
                    "On failure you get the error.\nPrevious error:\n{prior_error}".into(),
                ),
                (SectionKind::OutputIndicator, "Reply with one ```python block.".into()),
            ],
            ["dataset_description", "model_purpose", "dataset_locator", "prior_error"],
        )
    }

    fn sg_template() -> PromptTemplate {
        PromptTemplate::new(
            LifecycleStage::SketchGeneration,
            vec![
                (SectionKind::ContextSetup, "Board {board_id}".into()),
                (SectionKind::Objectives, "{application_description}".into()),
                (SectionKind::TaskInstructions, "Model at {converted_model_locator}".into()),
                (SectionKind::ErrorHandlingProtocol, "Compiler said:\n{prior_error}".into()),
                (SectionKind::OutputIndicator, "One ```cpp block.".into()),
            ],
            ["board_id", "application_description", "converted_model_locator", "prior_error"],
        )
    }

    fn dp_input() -> StageInput {
        StageInput::DataProcessing(DataProcessingInput {
            dataset_locator: "/data/fruit".into(),
            dataset_description: "RGB colour readings".into(),
            model_purpose: "fruit classifier".into(),
        })
    }

    fn sg_input() -> StageInput {
        StageInput::SketchGeneration(SketchGenerationInput {
            converted_model_locator: "/m/model.tflite".into(),
            board_id: "arduino:mbed_nano:nano33ble".into(),
            application_description: "classify fruit".into(),
            peripheral_description: "APDS9960 colour sensor".into(),
        })
    }

    #[test]
    fn valid_template_lints_clean_and_registers() {
        assert!(lint_template(&dp_template()).is_empty());
        let mut reg = TemplateRegistry::new();
        reg.register(dp_template()).unwrap();
        assert!(reg.get(LifecycleStage::DataProcessing).is_some());
    }

    #[test]
    fn missing_output_indicator_fails() {
        let mut t = dp_template();
        t.sections.pop();
        let err = TemplateRegistry::new().register(t).unwrap_err();
        match err {
            PromptError::LintFailure { issues, .. } => {
                assert_eq!(issues, ["missing section output_indicator"])
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stray_placeholder_fails() {
        let mut t = dp_template();
        t.sections[1].1.push_str(" {foo}");
        let issues = lint_template(&t);
        assert_eq!(issues, ["undeclared placeholder {foo} in section objectives"]);
        assert!(TemplateRegistry::new().register(t).is_err());
    }

    #[test]
    fn permuted_sections_report_index() {
        let mut t = dp_template();
        t.sections.swap(1, 2);
        assert_eq!(lint_template(&t), ["section order violated at index 2"]);
    }

    #[test]
    fn duplicate_section_is_one_issue() {
        let mut t = dp_template();
        t.sections.insert(1, (SectionKind::ContextSetup, "again".into()));
        assert_eq!(
            lint_template(&t),
            ["duplicate section context_setup (2 occurrences)"]
        );
    }

    #[test]
    fn prior_error_rules() {
        let mut t = dp_template();
        t.sections[3].1 = "Previous error: {prior_error}".into();
        assert_eq!(lint_template(&t), ["{prior_error} must stand alone on its line"]);
        let mut t = dp_template();
        t.sections[3].1 = "nothing".into();
        assert_eq!(lint_template(&t), ["expected exactly one {prior_error} slot, found 0"]);
    }

    #[test]
    fn registering_twice_replaces() {
        let mut reg = TemplateRegistry::new();
        reg.register(dp_template()).unwrap();
        let mut t = dp_template();
        t.sections[0].1 = "replaced {dataset_description}".into();
        reg.register(t.clone()).unwrap();
        assert_eq!(reg.get(LifecycleStage::DataProcessing), Some(&t));
    }

    #[test]
    fn first_attempt_render() {
        let r = render_prompt(&dp_template(), &dp_input(), None, 1).unwrap();
        assert!(r.text.contains("RGB colour readings"));
        assert!(r.text.contains("Use {braces}."));
        assert!(r.text.contains(NO_PRIOR_ERROR));
        assert!(!r.contains_error_feedback);
        assert_eq!(r.attempt_index, 1);
    }

    #[test]
    fn error_feedback_lands_in_error_section_once() {
        let err = "undefined reference to `setup'";
        let r = render_prompt(&sg_template(), &sg_input(), Some(err), 2).unwrap();
        assert!(r.contains_error_feedback);
        assert_eq!(r.text.matches(err).count(), 1);
        let section = rendered_section(&r.text, SectionKind::ErrorHandlingProtocol).unwrap();
        assert!(section.contains(err));
    }

    #[test]
    fn foreign_slot_is_unresolved() {
        let mut t = dp_template();
        t.sections[0].1 = "Board {board_id}".into();
        t.placeholders.push("board_id".into());
        assert_eq!(
            render_prompt(&t, &dp_input(), None, 1),
            Err(PromptError::UnresolvedPlaceholder("board_id".into()))
        );
    }

    #[test]
    fn parses_text_format() {
        let text = "# dp template\n== PLACEHOLDERS: dataset_description, prior_error ==\n\
                    == SECTION: context_setup ==\n\nData: {dataset_description}\n\n\
                    == SECTION: Objectives ==\nGoal\n== SECTION: task_instructions ==\nDo\n\
                    == SECTION: error_handling_protocol ==\n{prior_error}\n\
                    == SECTION: output_indicator ==\nCode only\n";
        let t = PromptTemplate::parse(LifecycleStage::DataProcessing, text).unwrap();
        assert_eq!(t.sections.len(), 5);
        assert_eq!(t.sections[0].1, "Data: {dataset_description}");
        assert_eq!(t.placeholders, ["dataset_description", "prior_error"]);
        assert!(lint_template(&t).is_empty());
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = PromptTemplate::parse(LifecycleStage::DataProcessing, "stray\n").unwrap_err();
        assert_eq!(
            err,
            PromptError::Parse {
                line: 1,
                message: "text before the first section".into()
            }
        );
        let err =
            PromptTemplate::parse(LifecycleStage::DataProcessing, "== SECTION: preamble ==\n")
                .unwrap_err();
        assert!(matches!(err, PromptError::Parse { line: 1, .. }));
    }

    #[test]
    fn unbalanced_braces_lint() {
        let mut t = dp_template();
        t.sections[2].1 = "void setup() { }".into();
        let issues = lint_template(&t);
        assert_eq!(issues.len(), 1);
        assert!(issues[0].starts_with("section task_instructions:"));
    }

    #[test]
    fn output_order_is_canonical() {
        let mut t = dp_template();
        t.sections.reverse();
        let r = render_prompt(&t, &dp_input(), None, 1).unwrap();
        let positions: Vec<usize> = SectionKind::ALL
            .iter()
            .map(|k| r.text.find(k.heading()).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn rendering_is_deterministic_and_injects_once(
            desc in "[ -~]{0,60}",
            err in "E[a-zA-Z0-9]{15}[ -~\n]{0,200}",
        ) {
            let input = StageInput::DataProcessing(DataProcessingInput {
                dataset_locator: "/d".into(),
                dataset_description: desc,
                model_purpose: "p".into(),
            });
            let a = render_prompt(&dp_template(), &input, Some(&err), 3).unwrap();
            let b = render_prompt(&dp_template(), &input, Some(&err), 3).unwrap();
            prop_assert_eq!(&a, &b);
            let section = rendered_section(&a.text, SectionKind::ErrorHandlingProtocol).unwrap();
            prop_assert_eq!(section.matches(err.as_str()).count(), 1);
        }
    }
}
