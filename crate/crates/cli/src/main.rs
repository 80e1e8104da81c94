use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lora_phy_cli::commands::{self, Overrides};
use lora_phy_cli::CliError;

#[derive(Parser, Debug)]
#[command(name = "lora-phy", version, about = "LoRa PHY modem experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one frame to a cf32 file
    Tx(Common),
    /// Synchronize and decode the first frame of a cf32 file
    Rx {
        #[command(flatten)]
        common: Common,
        /// Input cf32 file; its sidecar is `<input>.toml`
        input: PathBuf,
    },
    /// BER/SER sweep to CSV
    Ber(Common),
    /// Estimator error statistics to CSV
    SyncBench(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Use the injected offsets instead of the synchronizer
    #[arg(long)]
    genie: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            threads: self.threads,
            genie: self.genie,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Tx(c) => {
            let exp = commands::load_experiment(&c.config, &c.overrides())?;
            let out = commands::require_out(c.out)?;
            let n = commands::cmd_tx(&exp, &out)?;
            eprintln!("wrote {n} samples to {}", out.display());
            Ok(())
        }
        Command::Rx { common, input } => {
            let exp = commands::load_experiment(&common.config, &common.overrides())?;
            let report = commands::cmd_rx(&exp, &input)?;
            print!("{}", report.to_toml());
            if report.is_ok() {
                Ok(())
            } else {
                Err(CliError::Decode(report.status))
            }
        }
        Command::Ber(c) => {
            let exp = commands::load_experiment(&c.config, &c.overrides())?;
            commands::cmd_ber(&exp, c.out.as_deref()).map(drop)
        }
        Command::SyncBench(c) => {
            let exp = commands::load_experiment(&c.config, &c.overrides())?;
            commands::cmd_sync_bench(&exp, c.out.as_deref()).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lora-phy: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
