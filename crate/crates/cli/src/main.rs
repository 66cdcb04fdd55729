use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdgl::data::SyntheticSpec;
use sdgl::emf::EmfParams;
use sdgl_cli::run::cmd_run;
use sdgl_cli::synth::cmd_synth;
use sdgl_cli::table::cmd_table;
use sdgl_cli::{CliError, ExperimentConfig};

/// Battery capacity prediction experiments.
///
/// Exit codes: 0 success, 1 usage or config error, 2 training failure.
/// SDGL_OUTPUT_DIR overrides the output directory of `run`.
#[derive(Parser)]
#[command(name = "sdgl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured methods and write reports, checkpoints and plots.
    Run {
        /// Key-value config file.
        config: PathBuf,
    },
    /// Write a synthetic cell in the cell CSV schema.
    Synth(SynthArgs),
    /// Merge summary CSVs under a directory into a methods × cells table.
    Table { dir: PathBuf },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 168)]
    cycles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    theta1: f64,
    #[arg(long, default_value_t = -0.15, allow_hyphen_values = true)]
    theta2: f64,
    #[arg(long, default_value_t = 0.012, allow_hyphen_values = true)]
    theta3: f64,
    /// Amplitude in Ah of the period-40 sinusoidal residual.
    #[arg(long, default_value_t = 0.02)]
    residual_amplitude: f64,
    /// Standard deviation in Ah of the capacity noise.
    #[arg(long, default_value_t = 0.01)]
    noise_std: f64,
    /// Raw samples per channel per cycle.
    #[arg(long, default_value_t = 120)]
    samples_per_cycle: usize,
    /// Output CSV path.
    #[arg(long, short)]
    out: PathBuf,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = cmd_run(&config, &|line| eprintln!("{line}"))?;
            println!("wrote {} files under {}", outcome.artifacts.len(), config.output_dir.display());
        }
        Command::Synth(a) => {
            let spec = SyntheticSpec {
                seed: a.seed,
                n_cycles: a.cycles,
                n_train: a.cycles.saturating_sub(1).max(1),
                theta: EmfParams::new(a.theta1, a.theta2, a.theta3),
                residual_amplitude: a.residual_amplitude,
                noise_std: a.noise_std,
                samples_per_cycle: a.samples_per_cycle,
            };
            let path = cmd_synth(&spec, &a.out)?;
            println!("wrote {}", path.display());
        }
        Command::Table { dir } => {
            let (table, path) = cmd_table(&dir)?;
            print!("{}", table.to_text());
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
