use std::process::ExitCode;

use clap::Parser;
use flowmine_cli::args::Cli;
use flowmine_cli::commands::{run, Context};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let ctx = Context {
        seed: cli.seed,
        manifest_dir: cli.manifest_dir,
    };
    match run(&ctx, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}
