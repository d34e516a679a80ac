mod opts;
mod run;

use std::process::ExitCode;

use clap::Parser;

use mpsgnn::io::read_text;
use mpsgnn::{par, Error, Result};
use opts::{Cli, Command, ConfigFile, SEED_ENV};
use run::Context;

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::usage(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => ConfigFile::parse(&read_text(path)?)?,
        None => ConfigFile::default(),
    };
    let seed = match cli.seed.or(config.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let threads = cli.threads.or(config.threads);
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::usage("--threads must be positive"));
        }
        par::init_threads(t);
    }
    let ctx = Context { seed, threads };
    match cli.command {
        Command::Generate(a) => run::generate_cmd(&ctx, &a.or(config.generate)),
        Command::Ingest(a) => run::ingest_cmd(&ctx, &a.or(config.ingest)),
        Command::Learn(a) => run::learn_cmd(&ctx, &a.or(config.learn)),
        Command::Train(a) => run::train_cmd(&ctx, &a.or(config.train)),
        Command::Evaluate(a) => run::evaluate_cmd(&ctx, &a.or(config.evaluate)),
        Command::Oracle(a) => run::oracle_cmd(&ctx, &a.or(config.oracle)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let name = cli.command.name();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mpsgnn {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
