use std::process;

use clap::Parser;
use evsens_cli::Cli;
use log::LevelFilter;

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Err(e) = evsens_cli::run(cli) {
        eprintln!("error: {e}");
        process::exit(e.exit_code());
    }
}
