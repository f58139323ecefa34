//! Local execution of generated code: interpreter scripts for data processing
//! and model conversion, toolchain compile/upload for board sketches.
//!
//! Every child runs with its working directory set to the attempt workspace,
//! in its own process group so a timeout kills the whole tree, and with an
//! environment reduced to `PATH` plus an explicit allow-list.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use tinyforge_core::{ExecutionOutcome, ExitStatus};
use wait_timeout::ChildExt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionKind {
    InterpreterScript,
    ToolchainCompile,
    ToolchainUpload,
}

#[derive(Debug, Clone)]
pub struct ExecutionSpec {
    pub kind: ExecutionKind,
    /// Script file, sketch file, or sketch directory for uploads.
    pub code_or_binary_path: PathBuf,
    pub workspace: PathBuf,
    pub board_id: Option<String>,
    pub port: Option<String>,
    pub timeout: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("interpreter `{0}` not found")]
    InterpreterNotFound(String),
    #[error("toolchain binary `{0}` not found")]
    ToolchainNotFound(String),
    #[error("board `{0}` is not known to the toolchain")]
    BoardUnknown(String),
    #[error("port `{0}` is not available")]
    PortUnavailable(String),
    #[error("no compiled binary for sketch `{0}`")]
    MissingBinary(PathBuf),
    #[error("invalid execution spec: {0}")]
    InvalidSpec(String),
    #[error("sketch `{0}` must sit in a directory named after its file stem")]
    SketchLayout(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_spec(spec: &ExecutionSpec, kind: ExecutionKind) -> Result<(), ExecutorError> {
    if spec.kind != kind {
        return Err(ExecutorError::InvalidSpec(format!(
            "expected {kind:?}, got {:?}",
            spec.kind
        )));
    }
    if spec.timeout.is_zero() {
        return Err(ExecutorError::InvalidSpec("timeout must be positive".into()));
    }
    if !spec.workspace.is_dir() {
        return Err(ExecutorError::InvalidSpec(format!(
            "workspace {} does not exist",
            spec.workspace.display()
        )));
    }
    Ok(())
}

fn drain(mut r: impl Read + Send + 'static) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn kill_group(child: &mut Child) {
    // SAFETY: plain syscall; the child leads its own process group.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
}

/// Spawns `cmd` and waits up to `timeout`, capturing stdout and stderr.
fn run_captured(mut cmd: Command, timeout: Duration) -> io::Result<ExecutionOutcome> {
    cmd.stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let started = Instant::now();
    let mut child = cmd.spawn()?;
    let out = drain(child.stdout.take().expect("piped stdout"));
    let err = drain(child.stderr.take().expect("piped stderr"));
    let exit_status = match child.wait_timeout(timeout)? {
        Some(status) => ExitStatus::Code(
            status
                .code()
                .unwrap_or_else(|| 128 + std::os::unix::process::ExitStatusExt::signal(&status).unwrap_or(0)),
        ),
        None => {
            kill_group(&mut child);
            child.wait()?;
            ExitStatus::Timeout(timeout)
        }
    };
    let duration = started.elapsed();
    Ok(ExecutionOutcome {
        exit_status,
        stdout: out.join().unwrap_or_default(),
        stderr: err.join().unwrap_or_default(),
        duration,
    })
}

fn scrubbed(program: &str, env_allow: &[String]) -> Command {
    let mut cmd = Command::new(program);
    cmd.env_clear();
    if let Some(path) = std::env::var_os("PATH") {
        cmd.env("PATH", path);
    }
    for key in env_allow {
        if let Some(v) = std::env::var_os(key) {
            cmd.env(key, v);
        }
    }
    cmd
}

/// Interpreter used for data-processing and model-conversion scripts.
#[derive(Debug, Clone)]
pub struct ScriptRunner {
    pub interpreter: String,
    pub env_allow: Vec<String>,
}

impl Default for ScriptRunner {
    fn default() -> Self {
        Self {
            interpreter: "python3".into(),
            env_allow: Vec::new(),
        }
    }
}

/// Runs an interpreter script inside its workspace.
pub fn execute_script(
    spec: &ExecutionSpec,
    runner: &ScriptRunner,
) -> Result<ExecutionOutcome, ExecutorError> {
    check_spec(spec, ExecutionKind::InterpreterScript)?;
    if !spec.code_or_binary_path.is_file() {
        return Err(ExecutorError::InvalidSpec(format!(
            "script {} does not exist",
            spec.code_or_binary_path.display()
        )));
    }
    let script = spec
        .code_or_binary_path
        .strip_prefix(&spec.workspace)
        .unwrap_or(&spec.code_or_binary_path);
    let mut cmd = scrubbed(&runner.interpreter, &runner.env_allow);
    cmd.arg(script).current_dir(&spec.workspace);
    run_captured(cmd, spec.timeout).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ExecutorError::InterpreterNotFound(runner.interpreter.clone()),
        _ => ExecutorError::Io(e),
    })
}

#[derive(Debug, Clone)]
pub struct CompileOutcome {
    pub outcome: ExecutionOutcome,
    pub binary: Option<PathBuf>,
}

/// Board vendor toolchain: compile a sketch directory, upload it to a device.
pub trait ToolchainAdapter: Send + Sync {
    fn check_board(&self, board_id: &str) -> Result<(), ExecutorError>;

    fn compile(
        &self,
        sketch_dir: &Path,
        board_id: &str,
        timeout: Duration,
    ) -> Result<CompileOutcome, ExecutorError>;

    fn upload(
        &self,
        sketch_dir: &Path,
        board_id: &str,
        port: &str,
        timeout: Duration,
    ) -> Result<ExecutionOutcome, ExecutorError>;
}

fn sketch_dir(sketch: &Path) -> Result<&Path, ExecutorError> {
    let dir = sketch
        .parent()
        .ok_or_else(|| ExecutorError::SketchLayout(sketch.into()))?;
    match (sketch.file_stem(), dir.file_name()) {
        (Some(stem), Some(name)) if stem == name => Ok(dir),
        _ => Err(ExecutorError::SketchLayout(sketch.into())),
    }
}

/// Compiles the sketch file named by `spec.code_or_binary_path`.
pub fn compile_sketch(
    spec: &ExecutionSpec,
    toolchain: &dyn ToolchainAdapter,
) -> Result<CompileOutcome, ExecutorError> {
    check_spec(spec, ExecutionKind::ToolchainCompile)?;
    let board = spec
        .board_id
        .as_deref()
        .ok_or_else(|| ExecutorError::InvalidSpec("compile needs a board id".into()))?;
    let dir = sketch_dir(&spec.code_or_binary_path)?;
    if !spec.code_or_binary_path.is_file() {
        return Err(ExecutorError::InvalidSpec(format!(
            "sketch {} does not exist",
            spec.code_or_binary_path.display()
        )));
    }
    toolchain.check_board(board)?;
    toolchain.compile(dir, board, spec.timeout)
}

/// Uploads the compiled sketch directory named by `spec.code_or_binary_path`.
pub fn upload_binary(
    spec: &ExecutionSpec,
    toolchain: &dyn ToolchainAdapter,
) -> Result<ExecutionOutcome, ExecutorError> {
    check_spec(spec, ExecutionKind::ToolchainUpload)?;
    let board = spec
        .board_id
        .as_deref()
        .ok_or_else(|| ExecutorError::InvalidSpec("upload needs a board id".into()))?;
    let port = spec
        .port
        .as_deref()
        .ok_or_else(|| ExecutorError::InvalidSpec("upload needs a port".into()))?;
    if !spec.code_or_binary_path.exists() {
        return Err(ExecutorError::MissingBinary(spec.code_or_binary_path.clone()));
    }
    toolchain.check_board(board)?;
    toolchain.upload(&spec.code_or_binary_path, board, port, spec.timeout)
}

/// Marker line that makes [`MockToolchain`] fail a compile with `<msg>`.
pub const FORCE_COMPILE_ERROR: &str = "// FORCE_COMPILE_ERROR:";

/// Message carried by the first `// FORCE_COMPILE_ERROR: <msg>` line.
pub fn forced_compile_error(source: &str) -> Option<&str> {
    source
        .lines()
        .find_map(|l| l.trim().strip_prefix(FORCE_COMPILE_ERROR))
        .map(str::trim)
}

/// Deterministic stand-in for the vendor toolchain.
///
/// Compilation fails with the sentinel's message when the sketch carries a
/// `// FORCE_COMPILE_ERROR: <msg>` line and otherwise writes a placeholder
/// binary to `<sketch>/build/<stem>.ino.bin`. Uploads always succeed once a
/// binary exists.
#[derive(Debug, Clone)]
pub struct MockToolchain {
    known_boards: BTreeSet<String>,
}

pub const DEFAULT_BOARDS: &[&str] = &[
    "arduino:mbed_nano:nano33ble",
    "arduino:mbed_nano:nanorp2040connect",
    "arduino:avr:uno",
    "arduino:samd:mkrzero",
    "esp32:esp32:esp32",
];

impl Default for MockToolchain {
    fn default() -> Self {
        Self::new(DEFAULT_BOARDS.iter().copied())
    }
}

impl MockToolchain {
    pub fn new<S: Into<String>>(boards: impl IntoIterator<Item = S>) -> Self {
        Self {
            known_boards: boards.into_iter().map(Into::into).collect(),
        }
    }

    fn binary_path(dir: &Path) -> PathBuf {
        let stem = dir.file_name().unwrap_or_default().to_string_lossy();
        dir.join("build").join(format!("{stem}.ino.bin"))
    }
}

impl ToolchainAdapter for MockToolchain {
    fn check_board(&self, board_id: &str) -> Result<(), ExecutorError> {
        if self.known_boards.contains(board_id) {
            Ok(())
        } else {
            Err(ExecutorError::BoardUnknown(board_id.into()))
        }
    }

    fn compile(
        &self,
        sketch_dir: &Path,
        board_id: &str,
        _timeout: Duration,
    ) -> Result<CompileOutcome, ExecutorError> {
        self.check_board(board_id)?;
        let started = Instant::now();
        let stem = sketch_dir.file_name().unwrap_or_default().to_string_lossy();
        let source = fs::read_to_string(sketch_dir.join(format!("{stem}.ino")))?;
        if let Some(msg) = forced_compile_error(&source) {
            return Ok(CompileOutcome {
                outcome: ExecutionOutcome {
                    exit_status: ExitStatus::Code(1),
                    stdout: String::new(),
                    stderr: msg.into(),
                    duration: started.elapsed(),
                },
                binary: None,
            });
        }
        let bin = Self::binary_path(sketch_dir);
        fs::create_dir_all(bin.parent().expect("build dir"))?;
        fs::write(&bin, format!("mock firmware for {board_id}\n"))?;
        Ok(CompileOutcome {
            outcome: ExecutionOutcome {
                exit_status: ExitStatus::Code(0),
                stdout: format!("Sketch compiled for {board_id}\n"),
                stderr: String::new(),
                duration: started.elapsed(),
            },
            binary: Some(bin),
        })
    }

    fn upload(
        &self,
        sketch_dir: &Path,
        board_id: &str,
        port: &str,
        _timeout: Duration,
    ) -> Result<ExecutionOutcome, ExecutorError> {
        self.check_board(board_id)?;
        let bin = Self::binary_path(sketch_dir);
        if !bin.is_file() {
            return Err(ExecutorError::MissingBinary(bin));
        }
        Ok(ExecutionOutcome {
            exit_status: ExitStatus::Code(0),
            stdout: format!("Uploaded to {port}\n"),
            stderr: String::new(),
            duration: Duration::ZERO,
        })
    }
}

/// Adapter over the `arduino-cli` command-line tool.
#[derive(Debug, Clone)]
pub struct ArduinoCli {
    pub binary: String,
    pub env_allow: Vec<String>,
}

impl Default for ArduinoCli {
    fn default() -> Self {
        Self {
            binary: "arduino-cli".into(),
            // the CLI keeps cores and libraries under the user's home
            env_allow: vec!["HOME".into()],
        }
    }
}

impl ArduinoCli {
    /// Argument vector for a compile, exactly as passed to the binary.
    pub fn compile_args(board_id: &str, sketch_dir: &Path) -> Vec<String> {
        vec![
            "compile".into(),
            "--fqbn".into(),
            board_id.into(),
            sketch_dir.display().to_string(),
        ]
    }

    pub fn upload_args(port: &str, board_id: &str, sketch_dir: &Path) -> Vec<String> {
        vec![
            "upload".into(),
            "-p".into(),
            port.into(),
            "--fqbn".into(),
            board_id.into(),
            sketch_dir.display().to_string(),
        ]
    }

    fn run(&self, args: Vec<String>, cwd: &Path, timeout: Duration) -> Result<ExecutionOutcome, ExecutorError> {
        let mut cmd = scrubbed(&self.binary, &self.env_allow);
        cmd.args(args).current_dir(cwd);
        run_captured(cmd, timeout).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => ExecutorError::ToolchainNotFound(self.binary.clone()),
            _ => ExecutorError::Io(e),
        })
    }
}

impl ToolchainAdapter for ArduinoCli {
    /// Accepts any syntactically valid `vendor:arch:board` name.
    fn check_board(&self, board_id: &str) -> Result<(), ExecutorError> {
        let parts: Vec<&str> = board_id.split(':').collect();
        if parts.len() >= 3 && parts.iter().all(|p| !p.trim().is_empty()) {
            Ok(())
        } else {
            Err(ExecutorError::BoardUnknown(board_id.into()))
        }
    }

    fn compile(
        &self,
        sketch_dir: &Path,
        board_id: &str,
        timeout: Duration,
    ) -> Result<CompileOutcome, ExecutorError> {
        let outcome = self.run(Self::compile_args(board_id, sketch_dir), sketch_dir, timeout)?;
        let binary = outcome.succeeded().then(|| sketch_dir.to_path_buf());
        Ok(CompileOutcome { outcome, binary })
    }

    fn upload(
        &self,
        sketch_dir: &Path,
        board_id: &str,
        port: &str,
        timeout: Duration,
    ) -> Result<ExecutionOutcome, ExecutorError> {
        if port.starts_with('/') && !Path::new(port).exists() {
            return Err(ExecutorError::PortUnavailable(port.into()));
        }
        self.run(Self::upload_args(port, board_id, sketch_dir), sketch_dir, timeout)
    }
}
