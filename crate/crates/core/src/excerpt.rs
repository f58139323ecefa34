//! Execution outcomes and the bounded diagnostic excerpt fed back into
//! retry prompts.

use alloc::format;
use alloc::string::String;
use core::time::Duration;

use serde::{Deserialize, Serialize};

/// Longest excerpt, in characters.
pub const EXCERPT_LIMIT: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Code(i32),
    /// Killed after exceeding the given limit.
    Timeout(Duration),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub exit_status: ExitStatus,
    pub stdout: String,
    pub stderr: String,
    pub duration: Duration,
}

impl ExecutionOutcome {
    pub fn succeeded(&self) -> bool {
        self.exit_status == ExitStatus::Code(0)
    }

    pub fn timed_out(&self) -> bool {
        matches!(self.exit_status, ExitStatus::Timeout(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcerptOrigin {
    Stderr,
    Stdout,
    ExitOnly,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorExcerpt {
    pub text: String,
    pub origin: ExcerptOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("execution succeeded; there is no error to summarize")]
pub struct NotAFailure;

/// Last `limit` characters of `s`.
pub fn tail_chars(s: &str, limit: usize) -> &str {
    let count = s.chars().count();
    if count <= limit {
        return s;
    }
    let (start, _) = s.char_indices().nth(count - limit).expect("index within bounds");
    &s[start..]
}

/// Summarizes a failed execution for the next prompt.
///
/// Compilers and interpreters put the decisive message last, so the excerpt
/// is the tail of stderr, falling back to stdout, falling back to a
/// synthesized line naming the exit status.
pub fn summarize_error(outcome: &ExecutionOutcome) -> Result<ErrorExcerpt, NotAFailure> {
    let code = match outcome.exit_status {
        ExitStatus::Code(0) => return Err(NotAFailure),
        ExitStatus::Timeout(limit) => {
            return Ok(ErrorExcerpt {
                text: format!("execution exceeded {} s timeout", limit.as_secs_f64()),
                origin: ExcerptOrigin::Timeout,
            })
        }
        ExitStatus::Code(code) => code,
    };
    let (text, origin) = if !outcome.stderr.trim().is_empty() {
        (tail_chars(&outcome.stderr, EXCERPT_LIMIT).into(), ExcerptOrigin::Stderr)
    } else if !outcome.stdout.trim().is_empty() {
        (tail_chars(&outcome.stdout, EXCERPT_LIMIT).into(), ExcerptOrigin::Stdout)
    } else {
        (
            format!("process exited with status {code}, no diagnostic output"),
            ExcerptOrigin::ExitOnly,
        )
    };
    Ok(ErrorExcerpt { text, origin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn outcome(status: ExitStatus, stdout: &str, stderr: &str) -> ExecutionOutcome {
        ExecutionOutcome {
            exit_status: status,
            stdout: stdout.into(),
            stderr: stderr.into(),
            duration: Duration::from_millis(3),
        }
    }

    #[test]
    fn long_stderr_keeps_the_tail() {
        let blob: String = (0..10_000).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let ex = summarize_error(&outcome(ExitStatus::Code(1), "", &blob)).unwrap();
        assert_eq!(ex.origin, ExcerptOrigin::Stderr);
        assert_eq!(ex.text.chars().count(), 4000);
        assert_eq!(ex.text, blob[6000..]);
    }

    #[test]
    fn stdout_is_the_fallback() {
        let ex = summarize_error(&outcome(ExitStatus::Code(3), "boom", "")).unwrap();
        assert_eq!(ex.origin, ExcerptOrigin::Stdout);
        assert_eq!(ex.text, "boom");
    }

    #[test]
    fn silent_exit_is_synthesized() {
        let ex = summarize_error(&outcome(ExitStatus::Code(1), "", "")).unwrap();
        assert_eq!(ex.origin, ExcerptOrigin::ExitOnly);
        assert_eq!(ex.text, "process exited with status 1, no diagnostic output");
    }

    #[test]
    fn timeout_names_the_limit() {
        let ex =
            summarize_error(&outcome(ExitStatus::Timeout(Duration::from_secs(1)), "", "x")).unwrap();
        assert_eq!(ex.origin, ExcerptOrigin::Timeout);
        assert_eq!(ex.text, "execution exceeded 1 s timeout");
    }

    #[test]
    fn success_is_not_a_failure() {
        assert_eq!(
            summarize_error(&outcome(ExitStatus::Code(0), "", "warn")),
            Err(NotAFailure)
        );
    }

    #[test]
    fn multibyte_tail() {
        assert_eq!(tail_chars("héllo wörld", 5), "wörld");
        assert_eq!(tail_chars("ab", 5), "ab");
    }

    proptest! {
        #[test]
        fn excerpt_is_bounded_suffix(stderr in "\\PC{1,5000}") {
            prop_assume!(!stderr.trim().is_empty());
            let ex = summarize_error(&outcome(ExitStatus::Code(2), "", &stderr)).unwrap();
            prop_assert!(ex.text.chars().count() <= EXCERPT_LIMIT);
            prop_assert!(stderr.ends_with(&ex.text));
            prop_assert!(!ex.text.to_string().is_empty());
        }
    }
}
