//! Command-line pipeline: each subcommand is one stage, and stages talk only
//! through manifests and files on disk.

pub mod args;
pub mod audit;
pub mod backends;
pub mod config;
pub mod error;
pub mod stages;

use std::ffi::OsString;

use clap::Parser;

use args::{Cli, Command};
use config::PipelineConfig;
use error::CliResult;
use stages::Context;

fn configure(cli: &Cli, env: Vec<(String, String)>) -> CliResult<PipelineConfig> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    config.apply_env(env)?;
    if let Some(mode) = cli.backend {
        config.backends.mode = mode;
    }
    if let Some(dir) = &cli.fixtures {
        config.backends.fixtures = Some(dir.clone());
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(cli: Cli, env: Vec<(String, String)>) -> CliResult<()> {
    let config = configure(&cli, env)?;
    let ctx = Context::new(config, cli.workers)?;
    match &cli.command {
        Command::Curate(a) => stages::curate::run(&ctx, a),
        Command::Filter(a) => stages::filter::run(&ctx, a),
        Command::ScoreCuration(a) => stages::curation::run(&ctx, a),
        Command::Ground(a) => stages::ground::run(&ctx, a),
        Command::Generate(a) => stages::generate::run(&ctx, a),
        Command::Evaluate(a) => stages::evaluate::run(&ctx, a),
        Command::FinetunePrep(a) => stages::finetune::run(&ctx, a),
    }
}

/// Parses `args`, runs one stage and returns the process exit status:
/// 0 ok, 2 configuration, 3 input, 4 backend, 5 internal.
pub fn run<I, T>(args: I, env: impl IntoIterator<Item = (String, String)>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stage = cli.command.name();
    match dispatch(cli, env.into_iter().collect()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stepframe {stage}: {e}");
            e.exit_code()
        }
    }
}
