use std::fmt;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

mod args;
mod commands;
mod manifest;

use args::{Cli, Command};
use manifest::RunManifest;

/// Bad or conflicting command-line input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn dispatch(cmd: &Command, argv: &[String]) -> Result<()> {
    match cmd {
        Command::Synth(a) => commands::synth(a, argv),
        Command::Train(a) => commands::train(a, argv),
        Command::Score(a) => commands::score(a, argv),
        Command::Eval(a) => commands::eval(a, argv),
        Command::Explain(a) => commands::explain(a, argv),
    }
}

fn parse(argv: &[String]) -> std::result::Result<Cli, clap::Error> {
    Cli::try_parse_from(std::iter::once("devscore".to_string()).chain(argv.iter().cloned()))
}

fn run(argv: Vec<String>) -> Result<()> {
    let cli = match parse(&argv) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => return Err(UsageError(e.to_string()).into()),
        Err(e) => {
            // help and version
            print!("{e}");
            return Ok(());
        }
    };
    match (cli.manifest, cli.command) {
        (Some(path), _) => {
            let m = RunManifest::read(&path)?;
            let replay = parse(&m.argv).map_err(|e| UsageError(e.to_string()))?;
            let cmd = replay
                .command
                .ok_or_else(|| UsageError(format!("manifest {} has no command", path.display())))?;
            dispatch(&cmd, &m.argv)
        }
        (None, Some(cmd)) => dispatch(&cmd, &argv),
        (None, None) => Err(UsageError("a subcommand or --manifest is required (see --help)".into()).into()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(devscore::Error::Diverged { .. }) = cause.downcast_ref::<devscore::Error>() {
            return EXIT_DIVERGED;
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    match run(std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
