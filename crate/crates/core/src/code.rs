//! Extracting runnable code from model responses.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    InterpreterScript,
    BoardSketch,
}

impl CodeKind {
    /// Fence info-string tags accepted for this kind.
    pub fn tags(self) -> &'static [&'static str] {
        match self {
            CodeKind::InterpreterScript => &["python", "python3", "py", "sh", "bash", "shell"],
            CodeKind::BoardSketch => &["cpp", "c++", "arduino", "ino", "c"],
        }
    }

    fn accepts(self, tag: &str) -> bool {
        tag.is_empty() || self.tags().iter().any(|t| t.eq_ignore_ascii_case(tag))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub code: String,
    pub kind: CodeKind,
    pub fenced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NoCode {
    #[error("response is empty")]
    Empty,
    #[error("response has code fences but none tagged for {0:?}")]
    NoMatchingFence(CodeKind),
    #[error("matching code block is blank")]
    BlankBlock,
}

struct Fence<'a> {
    tag: &'a str,
    body: Vec<&'a str>,
}

fn fence_open(line: &str) -> Option<&str> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = line.trim_start().strip_prefix("```")?;
    Some(rest.split_whitespace().next().unwrap_or(""))
}

fn fences(content: &str) -> Vec<Fence<'_>> {
    let mut out = Vec::new();
    let mut lines = content.lines();
    while let Some(line) = lines.next() {
        if let Some(tag) = fence_open(line) {
            let body = lines
                .by_ref()
                .take_while(|l| l.trim() != "```")
                .collect();
            out.push(Fence { tag, body });
        }
    }
    out
}

fn trim_blank_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> String {
    let lines: Vec<&str> = lines.into_iter().collect();
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].join("\n"),
        _ => String::new(),
    }
}

/// Pulls the code of the expected kind out of a response.
///
/// The first fenced block whose tag fits `expected` wins (an untagged fence
/// fits any kind). A response without any fence is taken whole, with
/// `fenced = false`.
pub fn extract_code(content: &str, expected: CodeKind) -> Result<CodeArtifact, NoCode> {
    if content.trim().is_empty() {
        return Err(NoCode::Empty);
    }
    let blocks = fences(content);
    let (code, fenced) = if blocks.is_empty() {
        (trim_blank_lines(content.lines()), false)
    } else {
        let block = blocks
            .into_iter()
            .find(|f| expected.accepts(f.tag))
            .ok_or(NoCode::NoMatchingFence(expected))?;
        (trim_blank_lines(block.body), true)
    };
    if code.trim().is_empty() {
        return Err(NoCode::BlankBlock);
    }
    Ok(CodeArtifact {
        code,
        kind: expected,
        fenced,
    })
}

/// Fallback token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}
