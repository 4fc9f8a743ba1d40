use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::Parser;
use signal_hook::consts::{SIGINT, SIGTERM};
use splatstream_cli::args::Cli;
use splatstream_cli::cmd;

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [SIGTERM, SIGINT] {
        if let Err(e) = signal_hook::flag::register(sig, Arc::clone(&stop)) {
            log::warn!("cannot install handler for signal {sig}: {e}");
        }
    }
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = cmd::run(&cli, &stop, &mut stdout) {
        eprintln!("{}", e.line());
        std::process::exit(e.exit_code());
    }
}
