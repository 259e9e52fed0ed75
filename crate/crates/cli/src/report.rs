//! The `report.json` envelope shared by every command.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ctquant_core::scalar::round_sig;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::config::LoadedConfig;

pub const SCHEMA_VERSION: &str = "1";
pub const SIGNIFICANT_DIGITS: u32 = 6;

/// Process exit status. Each failure path maps to exactly one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    Ok = 0,
    Usage = 1,
    Rejected = 2,
    PipelineError = 3,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_source: String,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Skipped,
    Failed,
    NotRun,
}

#[derive(Debug, Clone, Serialize)]
pub struct Step {
    pub step: String,
    pub status: StepStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct Qc {
    pub status: Exit,
    pub exit_code: i32,
    pub reason: Option<String>,
    pub failed_step: Option<String>,
    pub message: Option<String>,
    pub filter: Option<Value>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub manifest: RunManifest,
    pub inputs: Value,
    pub pipeline: Vec<Step>,
    pub outputs: Value,
    pub qc: Qc,
    pub verdicts: Value,
}

/// What a command hands back to the dispatcher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub exit: Exit,
    pub reason: Option<String>,
}

impl Report {
    pub fn new(command: &str, config: &LoadedConfig, seed: Option<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            manifest: RunManifest {
                command: command.to_string(),
                config_source: config.source.clone(),
                config: serde_json::to_value(&config.config).expect("config serialises"),
                inputs: Vec::new(),
                seed,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                timestamp: timestamp(),
            },
            inputs: Value::Null,
            pipeline: Vec::new(),
            outputs: Value::Null,
            qc: Qc {
                status: Exit::Ok,
                exit_code: 0,
                reason: None,
                failed_step: None,
                message: None,
                filter: None,
                notes: Vec::new(),
            },
            verdicts: Value::Object(Default::default()),
        }
    }

    /// Records an input with its content digest; unreadable inputs get none.
    pub fn add_input(&mut self, role: &str, path: &Path) {
        self.manifest.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: digest_path(path).ok(),
        });
    }

    pub fn step(&mut self, name: &str, status: StepStatus) {
        self.pipeline.push(Step {
            step: name.to_string(),
            status,
        });
    }

    /// Marks `step` failed, the remaining `pending` steps not run, and
    /// sets the exit status.
    pub fn fail(&mut self, exit: Exit, step: &str, reason: &str, message: String, pending: &[&str]) {
        self.step(step, StepStatus::Failed);
        for p in pending {
            self.step(p, StepStatus::NotRun);
        }
        self.qc.status = exit;
        self.qc.exit_code = exit.code();
        self.qc.reason = Some(reason.to_string());
        self.qc.failed_step = Some(step.to_string());
        self.qc.message = Some(message);
    }

    pub fn outcome(&self) -> Outcome {
        Outcome {
            exit: self.qc.status,
            reason: self.qc.reason.clone(),
        }
    }

    /// Writes `report.json` and logs failures to stderr.
    pub fn finish(&self, out: &Path) -> Outcome {
        if let (Some(step), Some(msg)) = (&self.qc.failed_step, &self.qc.message) {
            eprintln!("ctquant {}: {step} failed: {msg}", self.manifest.command);
        }
        match write_json(&out.join("report.json"), self) {
            Ok(()) => self.outcome(),
            Err(e) => {
                eprintln!("ctquant {}: cannot write report: {e:#}", self.manifest.command);
                Outcome {
                    exit: Exit::PipelineError,
                    reason: Some("IoError".into()),
                }
            }
        }
    }
}

/// RFC 3339 UTC time, pinned by `SOURCE_DATE_EPOCH` when set.
fn timestamp() -> String {
    let t = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|s| OffsetDateTime::from_unix_timestamp(s).ok())
        .unwrap_or_else(OffsetDateTime::now_utc);
    t.format(&Rfc3339).unwrap_or_default()
}

/// SHA-256 of a file, or of the sorted `name  digest` listing of a directory.
pub fn digest_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        let mut h = Sha256::new();
        for p in entries {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            h.update(format!("{name}  {}\n", digest_path(&p)?));
        }
        return Ok(hex(&h.finalize()));
    }
    let mut f = fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Rounds every non-integer number to six significant digits.
pub fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or_default();
            if let Some(r) = serde_json::Number::from_f64(round_sig(x, SIGNIFICANT_DIGITS)) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_numbers),
        Value::Object(o) => o.values_mut().for_each(round_numbers),
        _ => {}
    }
}

pub fn to_rounded_value<S: Serialize>(value: &S) -> Value {
    let mut v = serde_json::to_value(value).expect("value serialises");
    round_numbers(&mut v);
    v
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let v = to_rounded_value(value);
    let text = serde_json::to_string_pretty(&v)? + "\n";
    fs::write(path, text).with_context(|| format!("write {}", path.display()))
}
