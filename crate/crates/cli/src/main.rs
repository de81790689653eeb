mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use dasksvd::Error;

use args::{Cli, Command, Invocation};

/// 2 config error, 3 data error, 4 numerical divergence.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Spec(_) | Error::BinaryOnly(_) => 2,
                Error::Divergence { .. } => 4,
                _ => 3,
            };
        }
    }
    3
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::run(Invocation::Synth(a), None),
        Command::Prepare(a) => commands::run(Invocation::Prepare(a), None),
        Command::Learn(a) => commands::run(Invocation::Learn(a), None),
        Command::Train(a) => commands::run(Invocation::Train(a), None),
        Command::Classify(a) => commands::run(Invocation::Classify(a), None),
        Command::Screen(a) => commands::run(Invocation::Screen(a), None),
        Command::Replay(a) => commands::replay(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
