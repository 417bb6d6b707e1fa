use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use dsc_cli::commands::{cmd_compact, cmd_eval, cmd_prune, cmd_train, Outcome};
use dsc_cli::config::RunConfig;
use dsc_cli::exit_code;
use dsc_cli::report::cmd_report;
use dsc_core::exec::configure_threads;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Train,
    Prune,
    Compact,
    Eval,
    Report,
}

/// Train, prune with annealed direct sparsity control, compact, evaluate
/// and report.
#[derive(Debug, Parser)]
#[command(name = "dsc", version)]
struct Args {
    command: Command,
    /// JSON run config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides both the initialization and shuffle seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// 1 runs the single-threaded reference mode.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let run = || -> dsc_core::Result<Outcome> {
        let mut cfg = RunConfig::load(&args.config)?;
        cfg.apply_overrides(args.seed, args.threads, args.out.clone());
        configure_threads(cfg.threads);
        let ck = args.checkpoint.as_deref();
        match args.command {
            Command::Train => cmd_train(&cfg, ck),
            Command::Prune => cmd_prune(&cfg, ck),
            Command::Compact => cmd_compact(&cfg, ck),
            Command::Eval => cmd_eval(&cfg, ck),
            Command::Report => cmd_report(&cfg.out_dir).map(|_| Outcome::Ok),
        }
    };
    match run() {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Missed(why)) => {
            eprintln!("dsc: {why}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("dsc: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
