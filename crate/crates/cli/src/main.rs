//! `plp` command-line harness.
//!
//! Exit codes: 0 success, 2 usage or validation failure (including missing
//! input files), 3 compatibility failure (incompatible or tampered frozen
//! subspaces), 4 other I/O failure. Verbosity comes from `PLP_LOG_LEVEL`
//! (`quiet`, `info`, `debug`; default `info`).

mod commands;

use std::io::ErrorKind;
use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::Parser;
use log::{Level, LevelFilter, Metadata, Record};

use plp_core::Error;

struct EnvLogger {
    level: LevelFilter,
}

impl log::Log for EnvLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if self.enabled(record.metadata()) {
            let prefix = match record.level() {
                Level::Error => "error",
                Level::Warn => "warning",
                Level::Info => "info",
                Level::Debug | Level::Trace => "debug",
            };
            eprintln!("{prefix}: {}", record.args());
        }
    }

    fn flush(&self) {}
}

fn init_logger() {
    let level = match std::env::var("PLP_LOG_LEVEL").as_deref() {
        Ok("quiet") => LevelFilter::Error,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Info,
    };
    let _ = log::set_boxed_logger(Box::new(EnvLogger { level }));
    log::set_max_level(level);
}

/// Stable mapping from library errors to the exit-code contract.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::FrozenMismatch(_) | Error::FrozenTamper(_) => 3,
        // A missing input file is a usage problem; everything else on the
        // I/O path is a genuine I/O failure.
        Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => 2,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    init_logger();
    let cli = match commands::Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
