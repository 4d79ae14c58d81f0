use std::process::ExitCode;

use clap::Parser;
use facegeom_cli::args::Cli;
use facegeom_cli::{run, thread_count, THREADS_ENV};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = thread_count(std::env::var(THREADS_ENV).ok().as_deref()).and_then(|threads| {
        if threads > 0 {
            // Only fails if a global pool already exists.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
        run(&cli)
    });
    match result {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
