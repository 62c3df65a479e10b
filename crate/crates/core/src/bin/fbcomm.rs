use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fbcomm::cli::{self, ExperimentSpec, Mode, Overrides};
use fbcomm::RegimeKind;

/// Linear encoder/decoder filters over a Gaussian channel with feedback.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run(RunArgs),
    /// Join prediction, Monte Carlo and oracle columns; evaluate the N_f sweep.
    Compare(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_parser = parse_regime)]
    regime: Option<RegimeKind>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_regime(s: &str) -> Result<RegimeKind, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, compare) = match cli.command {
        Command::Run(args) => (args, false),
        Command::Compare(args) => (args, true),
    };
    let overrides = Overrides {
        mode: args.mode,
        regime: args.regime,
        trials: args.trials,
        seed: args.seed,
        output: args.out,
    };
    let result = ExperimentSpec::load(&args.config, &overrides).and_then(|spec| {
        if compare {
            cli::compare(&spec)
        } else {
            cli::run(&spec)
        }
    });
    match result {
        Ok(outcome) => {
            println!("{}", outcome.message);
            for path in &outcome.artifacts {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
