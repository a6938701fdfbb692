use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use splice_mfcn_cli::{init_threads, resolve_config, run, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Gen,
    Train,
    Infer,
    Eval,
    Perturb,
    Gradcheck,
}

/// Image splicing localization with single- and multi-task FCNs.
#[derive(Debug, Parser)]
#[command(name = "splice-mfcn", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// key = value run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config `out`)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments");
            eprintln!("{}", splice_mfcn_cli::CliError::config(first).to_line());
            return ExitCode::from(2);
        }
    };
    let command = match args.command {
        Cmd::Gen => Command::Gen,
        Cmd::Train => Command::Train,
        Cmd::Infer => Command::Infer,
        Cmd::Eval => Command::Eval,
        Cmd::Perturb => Command::Perturb,
        Cmd::Gradcheck => Command::Gradcheck,
    };
    let result = init_threads()
        .and_then(|_| resolve_config(args.config.as_deref(), args.seed, args.out))
        .and_then(|cfg| run(command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
