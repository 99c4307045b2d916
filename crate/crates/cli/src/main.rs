use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fracflow_cli::{cmd_check, cmd_run, cmd_sweep, load, CliError, Model, RunOptions, SweepOptions};

#[derive(Parser)]
#[command(name = "fracflow", version, about = "Unsaturated flow through a porous medium with one fracture")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    /// Fracture of positive width.
    Epsilon,
    /// Interface model selected by the scaling exponents.
    Effective,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one model and write snapshots, step log and manifest.
    Run {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "epsilon")]
        model: ModelArg,
        /// Fracture width (overrides the configuration).
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value = "output")]
        output_dir: PathBuf,
        /// Comma-separated snapshot times (overrides the configuration).
        #[arg(long, value_delimiter = ',')]
        snapshot_times: Option<Vec<f64>>,
    },
    /// Compare the epsilon-model over the configured widths with the effective model.
    Sweep {
        config: PathBuf,
        /// Concurrent member runs (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "output")]
        output_dir: PathBuf,
    },
    /// Run the invariant suite on a configuration.
    Check { config: PathBuf },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            model,
            epsilon,
            output_dir,
            snapshot_times,
        } => {
            let input = load(&config)?;
            let model = match model {
                ModelArg::Epsilon => Model::Epsilon,
                ModelArg::Effective => Model::Effective,
            };
            let m = cmd_run(
                &input,
                &RunOptions {
                    model,
                    epsilon,
                    output_dir: output_dir.clone(),
                    snapshot_times,
                },
            )?;
            println!(
                "{} steps written to {} ({} files, {:.1} s)",
                m.steps,
                output_dir.display(),
                m.outputs.len() + 1,
                m.elapsed_seconds
            );
        }
        Command::Sweep {
            config,
            jobs,
            output_dir,
        } => {
            let input = load(&config)?;
            let result = cmd_sweep(&input, &SweepOptions { jobs, output_dir: output_dir.clone() });
            // the table is written even when members fail
            if let Ok(table) = std::fs::read_to_string(output_dir.join("convergence.csv")) {
                print!("{table}");
            }
            result?;
        }
        Command::Check { config } => {
            let input = load(&config)?;
            let results = cmd_check(&input)?;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(CliError::CheckFailures(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
