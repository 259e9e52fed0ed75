//! `batch`: independent aaq/bmd jobs run concurrently.

use std::fs;
use std::path::Path;

use clap::Parser;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{BatchArgs, Cli, Command};
use crate::config::{self, LoadedConfig};
use crate::imaging::{cmd_aaq, cmd_bmd};
use crate::report::{write_json, Exit, Outcome};

#[derive(Debug, Clone, Serialize)]
pub struct JobResult {
    pub name: String,
    pub command: String,
    pub exit_code: i32,
    pub reason: Option<String>,
}

struct Job {
    name: String,
    command: String,
    argv: Vec<String>,
}

fn parse_list(text: &str) -> Result<Vec<Job>, String> {
    let mut jobs: Vec<Job> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace().map(String::from);
        let (Some(name), Some(command)) = (parts.next(), parts.next()) else {
            return Err(format!("line {}: expected NAME aaq|bmd ARGS", n + 1));
        };
        if command != "aaq" && command != "bmd" {
            return Err(format!("line {}: unsupported command {command:?}", n + 1));
        }
        if name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(format!("line {}: job name {name:?} must be a plain file name", n + 1));
        }
        if jobs.iter().any(|j| j.name == name) {
            return Err(format!("line {}: duplicate job name {name:?}", n + 1));
        }
        jobs.push(Job {
            name,
            command,
            argv: parts.collect(),
        });
    }
    Ok(jobs)
}

fn run_job(job: &Job, out: &Path, inherited: &LoadedConfig) -> JobResult {
    let dir = out.join(&job.name);
    let mut argv = vec!["ctquant".to_string(), job.command.clone()];
    argv.extend(job.argv.iter().cloned());
    argv.push("--out".into());
    argv.push(dir.display().to_string());
    let result = |o: Outcome| JobResult {
        name: job.name.clone(),
        command: job.command.clone(),
        exit_code: o.exit.code(),
        reason: o.reason,
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("ctquant batch: job {}: {e}", job.name);
            return result(Outcome {
                exit: Exit::Usage,
                reason: Some("Usage".into()),
            });
        }
    };
    let cfg = match &cli.config {
        None => inherited.clone(),
        Some(p) => match config::load(Some(p)) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("ctquant batch: job {}: {e:#}", job.name);
                return result(Outcome {
                    exit: Exit::Usage,
                    reason: Some("InvalidConfig".into()),
                });
            }
        },
    };
    result(match &cli.command {
        Command::Aaq(a) => cmd_aaq(a, &cfg),
        Command::Bmd(b) => cmd_bmd(b, &cfg),
        _ => unreachable!("list parser admits only aaq and bmd"),
    })
}

/// Exit status is the most severe job status.
pub fn cmd_batch(args: &BatchArgs, cfg: &LoadedConfig) -> Outcome {
    let jobs = match fs::read_to_string(&args.list)
        .map_err(|e| format!("{}: {e}", args.list.display()))
        .and_then(|t| parse_list(&t))
    {
        Ok(j) => j,
        Err(e) => {
            eprintln!("ctquant batch: {e}");
            return Outcome {
                exit: Exit::Usage,
                reason: Some("Usage".into()),
            };
        }
    };
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("ctquant batch: cannot create {}: {e}", args.out.display());
        return Outcome {
            exit: Exit::PipelineError,
            reason: Some("IoError".into()),
        };
    }
    let results: Vec<JobResult> = jobs.par_iter().map(|j| run_job(j, &args.out, cfg)).collect();
    if let Err(e) = write_json(&args.out.join("batch_summary.json"), &results) {
        eprintln!("ctquant batch: {e:#}");
        return Outcome {
            exit: Exit::PipelineError,
            reason: Some("IoError".into()),
        };
    }
    let worst = results.iter().map(|r| r.exit_code).max().unwrap_or(0);
    let exit = match worst {
        0 => Exit::Ok,
        1 => Exit::Usage,
        2 => Exit::Rejected,
        _ => Exit::PipelineError,
    };
    Outcome { exit, reason: None }
}
