//! Command-line front end: `aaq`, `bmd`, `eval`, `phantom` and `batch`.
//!
//! Every pipeline command writes `report.json` (schema version "1") into its
//! output directory and exits 0 on success, 1 on usage or config errors,
//! 2 when the series filter rejects the input and 3 on a pipeline error.

pub mod args;
pub mod batch;
pub mod config;
pub mod eval;
pub mod imaging;
pub mod phantom;
pub mod report;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command, PhantomKind};
pub use report::{Exit, Outcome};

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Exit::Ok.code(),
                _ => Exit::Usage.code(),
            };
        }
    };
    let cfg = match config::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("ctquant: {e:#}");
            return Exit::Usage.code();
        }
    };
    let outcome = match &cli.command {
        Command::Aaq(a) => imaging::cmd_aaq(a, &cfg),
        Command::Bmd(b) => imaging::cmd_bmd(b, &cfg),
        Command::Eval(e) => eval::cmd_eval(e, &cfg),
        Command::Phantom { kind } => match kind {
            PhantomKind::Cylinder(c) => phantom::cmd_cylinder(c),
            PhantomKind::Bmd(b) => phantom::cmd_bmd_phantom(b, &cfg),
        },
        Command::Batch(b) => batch::cmd_batch(b, &cfg),
    };
    outcome.exit.code()
}
