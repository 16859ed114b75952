use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svote_cli::{compare, parse_config, run_experiment, CliError};

#[derive(Parser)]
#[command(
    name = "svote",
    version,
    about = "Decentralized federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory. Defaults to output.dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare completed runs against the first one.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, out, seed } => {
            let mut cfg = parse_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = out.or_else(|| cfg.output_dir.clone()).ok_or_else(|| {
                CliError::Validation("no output directory: pass --out or set output.dir".into())
            })?;
            let s = run_experiment(&cfg, &out)?;
            println!(
                "{} seed {}: final F1 {:.4} ± {:.4}, {} bytes sent, {:.4e} kWh",
                s.method, s.seed, s.final_f1.mean, s.final_f1.std, s.bytes.sent, s.energy_kwh.total
            );
            if let Some(r) = &s.fedavg_reference {
                println!(
                    "fedavg on same shards: {} bytes sent, F1 {:.4}; reduction {:.1}%",
                    r.bytes_sent, r.final_f1_mean, r.byte_reduction_pct
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Compare { dirs } => print!("{}", compare(&dirs)?),
        Command::Validate { config } => {
            parse_config(&config)?;
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
