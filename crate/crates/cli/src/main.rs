//! `psa`: dataset generation, training, PSA, sparse PSA, pairwise tables and
//! rendering from the command line.
//!
//! Exit status: 0 on success, 1 when inputs fail validation, 2 on I/O errors.

mod args;
mod commands;
mod manifest;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use psa_core::PsaError;

use args::{Cli, Command, RunConfig};
use manifest::Manifest;

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| std::env::var_os("PSA_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("psa-out"))
}

fn execute(config: RunConfig, out: PathBuf) -> Result<(), PsaError> {
    fs::create_dir_all(&out).map_err(|e| PsaError::Io {
        path: out.clone(),
        source: e,
    })?;
    log::info!(
        "resolved config: {}",
        serde_json::to_string(&config).expect("plain data serializes")
    );
    let threads = config.threads.max(1);
    let command = config.command.clone();
    let mut m = Manifest::new(command.name(), config, &out);
    match &command {
        Command::Gen(a) => commands::gen(a, &mut m)?,
        Command::Ingest(a) => commands::ingest(a, &mut m)?,
        Command::Train(a) => commands::train(a, &mut m)?,
        Command::Psa(a) => commands::psa_cmd(a, threads, &mut m)?,
        Command::Sparse(a) => commands::sparse_cmd(a, threads, &mut m)?,
        Command::Pairwise(a) => commands::pairwise(a, threads, &mut m)?,
        Command::Render(a) => commands::render(a, &mut m)?,
        Command::Replay(_) => unreachable!("replay is resolved before execution"),
    }
    m.finish()
}

fn run(cli: Cli) -> Result<(), PsaError> {
    let out = out_dir(&cli);
    let config = match cli.command {
        Command::Replay(r) => {
            let text = fs::read_to_string(&r.config).map_err(|e| PsaError::Io {
                path: r.config.clone(),
                source: e,
            })?;
            let mut config: RunConfig = serde_json::from_str(&text)
                .map_err(|e| PsaError::Format(format!("{}: {e}", r.config.display())))?;
            if cli.threads != 1 {
                config.threads = cli.threads;
            }
            config
        }
        command => RunConfig {
            threads: cli.threads,
            command,
        },
    };
    execute(config, out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
