//! Batch commands behind the `capmatch` binary.
//!
//! Every command reads a [`RunConfig`], writes its artifacts into the output
//! directory and finishes with a `run.json` log (written on failure too).
//! Artifacts embed the config digest and seed; re-running a config
//! reproduces them byte for byte.

mod config;
mod evaluate;
mod label;
mod summarize;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::RunConfig;

use crate::error::{Error, Result};
use crate::io::file_digest;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RUN_LOG: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    Success,
    /// Finished, but some records were rejected or a check failed.
    Partial,
    Fatal,
}

impl Exit {
    pub fn code(self) -> i32 {
        match self {
            Exit::Success => 0,
            Exit::Partial => 1,
            Exit::Fatal => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifestLog {
    pub tool_version: String,
    pub command: String,
    pub config: RunConfig,
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_time_secs: f64,
    pub record_errors: usize,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
    pub exit_code: i32,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit: Exit,
    pub log: RunManifestLog,
}

/// Fields every artifact document carries.
#[derive(Debug, Clone, Serialize)]
pub(crate) struct Provenance {
    pub config_digest: String,
    pub seed: u64,
}

pub(crate) struct RunContext {
    pub config: RunConfig,
    pub digest: String,
    out: PathBuf,
    out_ready: bool,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
    pub record_errors: usize,
    failed_check: bool,
}

/// Record-level error messages kept in the log; the rest are only counted.
const MAX_LOGGED_ERRORS: usize = 1000;

impl RunContext {
    fn new(config: RunConfig) -> Self {
        RunContext {
            digest: config.digest(),
            out: config.output_dir(),
            config,
            out_ready: false,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            warnings: Vec::new(),
            errors: Vec::new(),
            record_errors: 0,
            failed_check: false,
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_digest: self.digest.clone(),
            seed: self.config.seed(),
        }
    }

    /// Checks that a required input exists and registers it for digesting.
    pub fn require(&mut self, path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
        let path = path.ok_or_else(|| Error::InvalidArgument(format!("no {what} given")))?;
        self.input(path)?;
        Ok(path.clone())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            ));
        }
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
        Ok(())
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn record_error(&mut self, error: &Error) {
        self.record_errors += 1;
        if self.errors.len() < MAX_LOGGED_ERRORS {
            self.errors.push(error.to_string());
        }
    }

    pub fn fail_check(&mut self, message: impl Into<String>) {
        self.failed_check = true;
        self.warn(message);
    }

    fn ensure_out(&mut self) -> Result<()> {
        if !self.out_ready {
            fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
            self.out_ready = true;
        }
        Ok(())
    }

    pub fn artifact_path(&mut self, name: &str) -> Result<PathBuf> {
        self.ensure_out()?;
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.artifacts.push(path.clone());
        Ok(path)
    }

    pub fn create(&mut self, name: &str) -> Result<(PathBuf, BufWriter<fs::File>)> {
        let path = self.artifact_path(name)?;
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok((path, BufWriter::with_capacity(1 << 20, file)))
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.artifact_path(name)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn discard_artifacts(&mut self) {
        for path in self.artifacts.drain(..) {
            let _ = fs::remove_file(path);
        }
    }
}

pub(crate) fn finish<W: Write>(mut w: BufWriter<W>, path_hint: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path_hint, e))
}

/// Runs the command named in `config.command`.
pub fn execute(config: RunConfig) -> RunOutcome {
    let started = Instant::now();
    let command = config.command.clone().unwrap_or_default();
    let mut ctx = RunContext::new(config);
    let result = match command.as_str() {
        "label" => label::cmd_label(&mut ctx),
        "audit" => label::cmd_audit(&mut ctx),
        "balance" => label::cmd_balance(&mut ctx),
        "eval" => evaluate::cmd_eval(&mut ctx),
        "aggregate" => summarize::cmd_aggregate(&mut ctx),
        "check" => summarize::cmd_check(&mut ctx),
        other => Err(Error::InvalidArgument(format!(
            "unknown command {other:?} (label, audit, balance, eval, aggregate, check)"
        ))),
    };
    let exit = match &result {
        Err(e) => {
            log::error!("{e}");
            ctx.errors.push(format!("fatal: {e}"));
            ctx.discard_artifacts();
            Exit::Fatal
        }
        Ok(()) if ctx.record_errors > 0 || ctx.failed_check => Exit::Partial,
        Ok(()) => Exit::Success,
    };
    let digest_all = |paths: &[PathBuf]| -> Vec<FileDigest> {
        paths
            .iter()
            .filter_map(|p| {
                file_digest(p).ok().map(|sha256| FileDigest {
                    path: p.clone(),
                    sha256,
                })
            })
            .collect()
    };
    let log = RunManifestLog {
        tool_version: TOOL_VERSION.to_string(),
        command,
        config_digest: ctx.digest.clone(),
        seed: ctx.config.seed(),
        inputs: digest_all(&ctx.inputs),
        outputs: digest_all(&ctx.artifacts),
        wall_time_secs: started.elapsed().as_secs_f64(),
        record_errors: ctx.record_errors,
        warnings: ctx.warnings.clone(),
        errors: ctx.errors.clone(),
        exit_code: exit.code(),
        config: ctx.config.clone(),
    };
    if ctx.ensure_out().is_ok() {
        let path = ctx.out.join(RUN_LOG);
        if let Ok(bytes) = serde_json::to_vec_pretty(&log) {
            if let Err(e) = fs::write(&path, bytes) {
                log::error!("{}: {e}", path.display());
            }
        }
    }
    RunOutcome { exit, log }
}
