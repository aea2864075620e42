use std::io;
use std::process::ExitCode;

use clap::Parser;
use edgeknow::experiment::{main_with, Cli, SEED_ENV};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_seed = std::env::var(SEED_ENV).ok();
    let code = main_with(cli, env_seed.as_deref(), &mut io::stdout(), &mut io::stderr());
    ExitCode::from(code as u8)
}
