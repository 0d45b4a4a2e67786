use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subvar::{config, run, THREADS_ENV};

#[derive(Parser)]
#[command(name = "subvar", version, about = "Variational experiments for vector-field families")]
struct Cli {
    /// Worker threads for parameter sweeps (0 = all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV, JSON report and manifest.
    Run {
        config: PathBuf,
        /// Output directory (overrides `[output] dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the step table of a run manifest.
    Summarize { manifest: PathBuf },
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        subvar_core::set_thread_limit(t);
    }
    match cli.command {
        Command::Run { config, out } => {
            if cli.verbose {
                eprintln!("running {}", config.display());
            }
            match run::run_file(&config, out.as_deref()) {
                Ok(m) => {
                    if cli.verbose {
                        eprintln!("status {}", m.status);
                    }
                    print!("{}", run::summarize(&m));
                    if m.status == "checks-failed" {
                        eprintln!("error: some checks failed");
                        return ExitCode::from(1);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
        Command::Summarize { manifest } => match run::load_manifest(&manifest) {
            Ok(m) => {
                print!("{}", run::summarize(&m));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
        Command::Validate { config } => match config::parse_config(&config) {
            Ok(cfg) => {
                println!("ok: {} experiment", cfg.kind.name());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("invalid configuration:\n{e}");
                ExitCode::from(2)
            }
        },
    }
}
