//! Black-box execution of an external SfM/VSLAM pipeline.
//!
//! An adapter turns a hyperparameter map and an image directory into a shell
//! command, runs it in a fresh scratch directory under a timeout, and
//! classifies the result as a [`RunOutcome`]. Pipeline failures are values,
//! not errors; only configuration problems surface as [`RunnerError`].

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{list_images, NoiseManifest};
use crate::trajectory::{Trajectory, TrajectoryError};

/// Hyperparameter assignment, name to numeric value.
pub type Params = BTreeMap<String, f64>;

pub const DEFAULT_MIN_POSE_FRACTION: f64 = 0.5;
const POLL_INTERVAL: Duration = Duration::from_millis(5);
const STDERR_TAIL: usize = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
}

fn config_err(msg: impl Into<String>) -> RunnerError {
    RunnerError::Config(msg.into())
}

/// How a numeric parameter is rendered into the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamFormat {
    /// Shortest decimal that round-trips (`0.0067`).
    #[default]
    Decimal,
    /// Rust `{:e}` notation (`6.7e-3`).
    Scientific,
}

impl ParamFormat {
    pub fn render(self, value: f64) -> String {
        match self {
            ParamFormat::Decimal => format!("{value}"),
            ParamFormat::Scientific => format!("{value:e}"),
        }
    }
}

fn default_trajectory_template() -> String {
    "{output}".into()
}

fn default_min_pose_fraction() -> f64 {
    DEFAULT_MIN_POSE_FRACTION
}

fn default_env_allow() -> Vec<String> {
    vec!["PATH".into()]
}

/// Declarative description of how to invoke a pipeline.
///
/// `command_template` is run through `/bin/sh -c` after substitution of
/// `{images}`, `{output}`, `{scratch}`, `{run_index}` and `{param:NAME}`.
/// Substituted values are shell-quoted. The child sees only the environment
/// variables named in `env_allow`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineAdapter {
    pub command_template: String,
    /// Parent directory for per-run scratch directories; the system temp dir
    /// when absent.
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    /// Seconds.
    pub timeout: f64,
    #[serde(default = "default_trajectory_template")]
    pub trajectory_path_template: String,
    #[serde(default = "default_min_pose_fraction")]
    pub min_pose_fraction: f64,
    #[serde(default = "default_env_allow")]
    pub env_allow: Vec<String>,
    #[serde(default)]
    pub keep_scratch_on_success: bool,
    #[serde(default)]
    pub param_format: BTreeMap<String, ParamFormat>,
}

impl PipelineAdapter {
    pub fn new(command_template: impl Into<String>, timeout: f64) -> Self {
        Self {
            command_template: command_template.into(),
            workdir: None,
            timeout,
            trajectory_path_template: default_trajectory_template(),
            min_pose_fraction: DEFAULT_MIN_POSE_FRACTION,
            env_allow: default_env_allow(),
            keep_scratch_on_success: false,
            param_format: BTreeMap::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, RunnerError> {
        let adapter: Self =
            toml::from_str(text).map_err(|e| config_err(format!("adapter config: {e}")))?;
        adapter.validate()?;
        Ok(adapter)
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("adapter serialises")
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if !(self.timeout > 0.0) || !self.timeout.is_finite() {
            return Err(config_err(format!("timeout must be positive, got {}", self.timeout)));
        }
        if !(self.min_pose_fraction > 0.0 && self.min_pose_fraction <= 1.0) {
            return Err(config_err(format!(
                "min_pose_fraction must lie in (0, 1], got {}",
                self.min_pose_fraction
            )));
        }
        parse_template(&self.command_template)?;
        parse_template(&self.trajectory_path_template)?;
        Ok(())
    }

    /// Names referenced by `{param:NAME}` placeholders.
    pub fn required_params(&self) -> Vec<String> {
        let mut names: Vec<String> = parse_template(&self.command_template)
            .unwrap_or_default()
            .into_iter()
            .chain(parse_template(&self.trajectory_path_template).unwrap_or_default())
            .filter_map(|seg| match seg {
                Segment::Param(name) => Some(name),
                _ => None,
            })
            .collect();
        names.sort();
        names.dedup();
        names
    }

    fn render(
        &self,
        template: &str,
        ctx: &RenderContext<'_>,
        quote: bool,
    ) -> Result<String, RunnerError> {
        let mut out = String::new();
        for seg in parse_template(template)? {
            let value = match seg {
                Segment::Literal(text) => {
                    out.push_str(&text);
                    continue;
                }
                Segment::Images => ctx.images.display().to_string(),
                Segment::Output => ctx.output.display().to_string(),
                Segment::Scratch => ctx.scratch.display().to_string(),
                Segment::RunIndex => ctx.run_index.to_string(),
                Segment::Param(name) => {
                    let value = ctx.params.get(&name).ok_or_else(|| {
                        config_err(format!("placeholder {{param:{name}}} has no binding"))
                    })?;
                    self.param_format
                        .get(&name)
                        .copied()
                        .unwrap_or_default()
                        .render(*value)
                }
            };
            if quote {
                out.push_str(&shell_quote(&value));
            } else {
                out.push_str(&value);
            }
        }
        Ok(out)
    }
}

struct RenderContext<'a> {
    params: &'a Params,
    images: &'a Path,
    output: &'a Path,
    scratch: &'a Path,
    run_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    Images,
    Output,
    Scratch,
    RunIndex,
    Param(String),
}

fn parse_template(template: &str) -> Result<Vec<Segment>, RunnerError> {
    let mut segments = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        if start > 0 {
            segments.push(Segment::Literal(rest[..start].to_string()));
        }
        let end = rest[start..]
            .find('}')
            .map(|e| start + e)
            .ok_or_else(|| config_err(format!("unterminated placeholder in '{template}'")))?;
        let key = &rest[start + 1..end];
        segments.push(match key {
            "images" => Segment::Images,
            "output" => Segment::Output,
            "scratch" => Segment::Scratch,
            "run_index" => Segment::RunIndex,
            _ => match key.strip_prefix("param:") {
                Some(name) if !name.is_empty() => Segment::Param(name.to_string()),
                _ => return Err(config_err(format!("unknown placeholder {{{key}}}"))),
            },
        });
        rest = &rest[end + 1..];
    }
    if !rest.is_empty() {
        segments.push(Segment::Literal(rest.to_string()));
    }
    Ok(segments)
}

/// POSIX single-quote escaping.
fn shell_quote(value: &str) -> String {
    let safe = !value.is_empty()
        && value
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_./=:+,".contains(c));
    if safe {
        value.to_string()
    } else {
        format!("'{}'", value.replace('\'', r"'\''"))
    }
}

/// Terminal state of one pipeline execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunOutcome {
    Success { trajectory: Trajectory },
    Failed { reason: String },
    Timeout,
    Degenerate { pose_fraction: f64 },
}

impl RunOutcome {
    pub fn trajectory(&self) -> Option<&Trajectory> {
        match self {
            RunOutcome::Success { trajectory } => Some(trajectory),
            _ => None,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, RunOutcome::Success { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunOutcome::Success { .. } => "success",
            RunOutcome::Failed { .. } => "failed",
            RunOutcome::Timeout => "timeout",
            RunOutcome::Degenerate { .. } => "degenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub params: Params,
    pub image_dir: PathBuf,
    pub noisy: bool,
    pub run_index: u64,
    pub outcome: RunOutcome,
    /// Seconds.
    pub wall_time: f64,
    /// Scratch directory left on disk for inspection, if any.
    #[serde(default)]
    pub scratch_dir: Option<PathBuf>,
}

/// Classifies a produced trajectory against the image count.
pub fn classify_trajectory(
    trajectory: Result<Trajectory, TrajectoryError>,
    image_count: usize,
    min_pose_fraction: f64,
) -> RunOutcome {
    match trajectory {
        Err(e) => RunOutcome::Failed {
            reason: format!("unusable trajectory: {e}"),
        },
        Ok(trajectory) => {
            let pose_fraction = trajectory.len() as f64 / image_count.max(1) as f64;
            if pose_fraction < min_pose_fraction {
                RunOutcome::Degenerate { pose_fraction }
            } else {
                RunOutcome::Success { trajectory }
            }
        }
    }
}

/// Something that maps `(params, images, run_index)` to a [`RunRecord`].
pub trait Pipeline: Sync {
    /// Configuration checks that must pass before any run is launched.
    fn check(&self, params: &Params, image_dir: &Path) -> Result<(), RunnerError>;

    fn run(&self, params: &Params, image_dir: &Path, run_index: u64) -> Result<RunRecord, RunnerError>;
}

/// Number of images in `image_dir`; errors when the directory is missing or
/// holds no images.
pub fn count_images(image_dir: &Path) -> Result<usize, RunnerError> {
    let images = list_images(image_dir).map_err(|e| {
        config_err(format!("image directory {}: {e}", image_dir.display()))
    })?;
    if images.is_empty() {
        return Err(config_err(format!(
            "image directory {} contains no images",
            image_dir.display()
        )));
    }
    Ok(images.len())
}

impl Pipeline for PipelineAdapter {
    fn check(&self, params: &Params, image_dir: &Path) -> Result<(), RunnerError> {
        self.validate()?;
        for name in self.required_params() {
            if !params.contains_key(&name) {
                return Err(config_err(format!("placeholder {{param:{name}}} has no binding")));
            }
        }
        count_images(image_dir).map(|_| ())
    }

    fn run(&self, params: &Params, image_dir: &Path, run_index: u64) -> Result<RunRecord, RunnerError> {
        run_pipeline(self, params, image_dir, run_index)
    }
}

fn tail(text: &str) -> &str {
    let trimmed = text.trim_end();
    let mut start = trimmed.len().saturating_sub(STDERR_TAIL);
    while !trimmed.is_char_boundary(start) {
        start += 1;
    }
    &trimmed[start..]
}

fn describe_status(status: ExitStatus) -> String {
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(signal) = status.signal() {
            return format!("terminated by signal {signal}");
        }
    }
    match status.code() {
        Some(code) => format!("exit status {code}"),
        None => "unknown termination".into(),
    }
}

#[cfg(unix)]
fn kill_group(child: &std::process::Child) {
    // The child leads its own process group, so this also reaches grandchildren.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
}

#[cfg(not(unix))]
fn kill_group(_child: &std::process::Child) {}

/// Runs the adapter once on `image_dir`.
///
/// The command runs with the scratch directory as its working directory.
/// Scratch is removed after a successful run unless the adapter asks to keep
/// it, and kept after any other outcome.
pub fn run_pipeline(
    adapter: &PipelineAdapter,
    params: &Params,
    image_dir: &Path,
    run_index: u64,
) -> Result<RunRecord, RunnerError> {
    adapter.check(params, image_dir)?;
    let image_count = count_images(image_dir)?;
    let noisy = NoiseManifest::read(image_dir).is_some();

    let prefix = format!("gtf-run-{run_index}-");
    let mut builder = tempfile::Builder::new();
    builder.prefix(&prefix);
    let scratch = match &adapter.workdir {
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| config_err(format!("workdir {}: {e}", dir.display())))?;
            builder.tempdir_in(dir)
        }
        None => builder.tempdir(),
    }
    .map_err(|e| config_err(format!("cannot create scratch directory: {e}")))?;
    let scratch_path = scratch.path().to_path_buf();
    let image_dir_abs = fs::canonicalize(image_dir).unwrap_or_else(|_| image_dir.to_path_buf());
    let output = scratch_path.join("trajectory.txt");
    let ctx = RenderContext {
        params,
        images: &image_dir_abs,
        output: &output,
        scratch: &scratch_path,
        run_index,
    };
    let command_line = adapter.render(&adapter.command_template, &ctx, true)?;
    let trajectory_path = PathBuf::from(adapter.render(&adapter.trajectory_path_template, &ctx, false)?);
    let trajectory_path = if trajectory_path.is_relative() {
        scratch_path.join(trajectory_path)
    } else {
        trajectory_path
    };

    let started = Instant::now();
    let outcome = execute(adapter, &command_line, &scratch_path, &trajectory_path, image_count);
    let wall_time = started.elapsed().as_secs_f64();

    let keep = !outcome.is_success() || adapter.keep_scratch_on_success;
    let scratch_dir = if keep {
        Some(scratch.keep())
    } else {
        drop(scratch);
        None
    };
    Ok(RunRecord {
        params: params.clone(),
        image_dir: image_dir.to_path_buf(),
        noisy,
        run_index,
        outcome,
        wall_time,
        scratch_dir,
    })
}

fn execute(
    adapter: &PipelineAdapter,
    command_line: &str,
    scratch: &Path,
    trajectory_path: &Path,
    image_count: usize,
) -> RunOutcome {
    let stdout_path = scratch.join("stdout.log");
    let stderr_path = scratch.join("stderr.log");
    let (stdout, stderr) = match (File::create(&stdout_path), File::create(&stderr_path)) {
        (Ok(o), Ok(e)) => (o, e),
        _ => {
            return RunOutcome::Failed {
                reason: "cannot create log files in scratch directory".into(),
            }
        }
    };
    let mut command = Command::new("/bin/sh");
    command
        .arg("-c")
        .arg(command_line)
        .current_dir(scratch)
        .env_clear()
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(stderr);
    for key in &adapter.env_allow {
        if let Ok(value) = std::env::var(key) {
            command.env(key, value);
        }
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }
    let mut child = match command.spawn() {
        Ok(child) => child,
        Err(e) => {
            return RunOutcome::Failed {
                reason: format!("spawn failed: {e}"),
            }
        }
    };
    let deadline = Instant::now() + Duration::from_secs_f64(adapter.timeout);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                kill_group(&child);
                let _ = child.kill();
                let _ = child.wait();
                return RunOutcome::Timeout;
            }
            Ok(None) => std::thread::sleep(POLL_INTERVAL),
            Err(e) => {
                kill_group(&child);
                let _ = child.kill();
                let _ = child.wait();
                return RunOutcome::Failed {
                    reason: format!("wait failed: {e}"),
                };
            }
        }
    };
    if !status.success() {
        let stderr_text = fs::read_to_string(&stderr_path).unwrap_or_default();
        let detail = tail(&stderr_text);
        let mut reason = describe_status(status);
        if !detail.is_empty() {
            reason.push_str(": ");
            reason.push_str(detail);
        }
        return RunOutcome::Failed { reason };
    }
    if !trajectory_path.exists() {
        return RunOutcome::Failed {
            reason: format!("no trajectory at {}", trajectory_path.display()),
        };
    }
    classify_trajectory(
        Trajectory::read(trajectory_path),
        image_count,
        adapter.min_pose_fraction,
    )
}

/// One entry of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRequest {
    pub params: Params,
    pub image_dir: PathBuf,
    pub run_index: u64,
}

/// Runs every request with at most `parallelism` concurrent executions and
/// returns records in request order. All requests are configuration-checked
/// before anything is launched.
pub fn run_batch(
    pipeline: &dyn Pipeline,
    requests: &[RunRequest],
    parallelism: usize,
) -> Result<Vec<RunRecord>, RunnerError> {
    if parallelism == 0 {
        return Err(config_err("parallelism must be at least 1"));
    }
    for req in requests {
        pipeline.check(&req.params, &req.image_dir)?;
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunRecord, RunnerError>>>> =
        Mutex::new(vec![None; requests.len()]);
    let workers = parallelism.min(requests.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some(req) = requests.get(idx) else { break };
                let result = pipeline.run(&req.params, &req.image_dir, req.run_index);
                slots.lock().expect("slot lock")[idx] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .map(|slot| slot.expect("every request executed"))
        .collect()
}

/// `run_batch` for the same parameters over several image directories, with
/// run indices `0..n`.
pub fn run_batch_dirs(
    pipeline: &dyn Pipeline,
    params: &Params,
    image_dirs: &[PathBuf],
    parallelism: usize,
) -> Result<Vec<RunRecord>, RunnerError> {
    let requests: Vec<RunRequest> = image_dirs
        .iter()
        .enumerate()
        .map(|(i, dir)| RunRequest {
            params: params.clone(),
            image_dir: dir.clone(),
            run_index: i as u64,
        })
        .collect();
    run_batch(pipeline, &requests, parallelism)
}
