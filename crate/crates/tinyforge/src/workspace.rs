//! Run workspace layout: `<root>/<run_id>/<stage>/attempt_<k>/`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tinyforge_core::LifecycleStage;

pub const PROMPT_FILE: &str = "prompt.txt";
pub const RESPONSE_FILE: &str = "response.txt";
pub const STDOUT_FILE: &str = "stdout.txt";
pub const STDERR_FILE: &str = "stderr.txt";
pub const ARTIFACTS_DIR: &str = "artifacts";

/// Directory tree owned by one run. Generated code executes only inside its
/// attempt directory.
#[derive(Debug, Clone)]
pub struct RunWorkspace {
    run_dir: PathBuf,
    run_id: String,
}

impl RunWorkspace {
    /// Creates `<root>/<run_id>`. The root is made absolute so that artifact
    /// locators stay valid from any working directory.
    pub fn create(root: &Path, run_id: &str) -> io::Result<Self> {
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id == "." || run_id == ".." {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("invalid run id {run_id:?}"),
            ));
        }
        fs::create_dir_all(root)?;
        let run_dir = root.canonicalize()?.join(run_id);
        fs::create_dir_all(&run_dir)?;
        Ok(Self {
            run_dir,
            run_id: run_id.into(),
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    /// Creates a fresh attempt directory with an empty `artifacts/`.
    pub fn attempt_dir(&self, stage: LifecycleStage, index: u32) -> io::Result<PathBuf> {
        let dir = self
            .run_dir
            .join(stage.as_str())
            .join(format!("attempt_{index}"));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(dir.join(ARTIFACTS_DIR))?;
        Ok(dir)
    }

    /// Hash of a rendered prompt with this run's directory abstracted away,
    /// so identical runs under different ids hash identically.
    pub fn prompt_hash(&self, prompt: &str) -> String {
        let normalized = prompt.replace(&*self.run_dir.to_string_lossy(), "{run_dir}");
        hex::encode(Sha256::digest(normalized.as_bytes()))
    }
}
