//! `mechlab`: command-line laboratory for the two-stage assignment mechanism.
//!
//! Every command is deterministic: identical inputs and seeds produce
//! byte-identical outputs, regardless of `MECHLAB_THREADS`. Errors are
//! emitted as machine-readable JSON on stderr with a nonzero exit code.

mod commands;
mod jout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mechlab_core::scenario::{load_scenario, ArithmeticMode, Scenario};

use commands::{CliError, CommandOutput};

#[derive(Parser)]
#[command(name = "mechlab")]
#[command(
    about = "Assignment mechanism laboratory: efficient matchings, VCG transfers, calibrated scoring rewards, game simulation, and replica experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario against the model assumptions.
    Validate {
        scenario: PathBuf,
        /// Force exact rational arithmetic.
        #[arg(long)]
        rational: bool,
    },
    /// Solve the assignment problem at a posterior (or at the posterior
    /// induced by a signal profile) under truthful expectations.
    Solve {
        scenario: PathBuf,
        /// Comma-separated posterior over states, e.g. `0.5,0.5` or `1/2,1/2`.
        #[arg(long)]
        pi: Option<String>,
        /// Comma-separated signal labels, one per buyer, e.g. `x1,x2`.
        #[arg(long)]
        signals: Option<String>,
        #[arg(long)]
        rational: bool,
        /// Directory to write the artifact into (also printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Settle stage 2 from a reports file at a posted posterior.
    Vcg {
        scenario: PathBuf,
        #[arg(long)]
        pi: String,
        /// JSON file with one stage-2 report per buyer.
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        rational: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate the stage-1 reward scale.
    Calibrate {
        scenario: PathBuf,
        /// Safety margin on the certified scale (default from the scenario
        /// options, 0.01 otherwise).
        #[arg(long)]
        margin: Option<String>,
        #[arg(long)]
        rational: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Play both stages once for a strategy profile and signal realization.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        strategies: PathBuf,
        #[arg(long)]
        signals: String,
        /// Reward scale; defaults to the calibrated value.
        #[arg(long)]
        delta: Option<String>,
        #[arg(long)]
        rational: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the stage-1 honesty and stage-2 dominance harnesses.
    Verify {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        rational: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replica-economy experiment: CSV of nu, reward bounds, IC margins, and
    /// deficits over a range of market sizes.
    Replica {
        family: PathBuf,
        /// Inclusive market-size range, e.g. `2:10`.
        #[arg(long, value_name = "A:B")]
        n_range: String,
        /// Reward exponent; defaults to the family file's `k`.
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Estimate the heavy sums from this many samples instead of exact
        /// count-space enumeration.
        #[arg(long)]
        monte_carlo: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: validation, calibration, both harnesses, and a budget
    /// summary over truthful runs.
    Report {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        rational: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior partitions and second-stage belief tables for one buyer.
    Inspect {
        scenario: PathBuf,
        /// Buyer index, 1-based.
        #[arg(long)]
        buyer: usize,
        /// Restrict to one reported signal label.
        #[arg(long)]
        signal: Option<String>,
        #[arg(long)]
        rational: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn use_rational(flag: bool, scenario: &Scenario) -> bool {
    flag || scenario.options.arithmetic == ArithmeticMode::Rational
}

fn dispatch(command: &Command) -> Result<(CommandOutput, Option<PathBuf>), CliError> {
    match command {
        Command::Validate { scenario, rational } => {
            let sc = load_scenario(scenario)?;
            let out = if use_rational(*rational, &sc) {
                commands::validate::<num_rational::BigRational>(&sc)?
            } else {
                commands::validate::<f64>(&sc)?
            };
            Ok((out, None))
        }
        Command::Solve {
            scenario,
            pi,
            signals,
            rational,
            out,
        } => {
            let sc = load_scenario(scenario)?;
            let result = if use_rational(*rational, &sc) {
                commands::solve::<num_rational::BigRational>(
                    &sc,
                    pi.as_deref(),
                    signals.as_deref(),
                )?
            } else {
                commands::solve::<f64>(&sc, pi.as_deref(), signals.as_deref())?
            };
            Ok((result, out.clone()))
        }
        Command::Vcg {
            scenario,
            pi,
            reports,
            rational,
            out,
        } => {
            let sc = load_scenario(scenario)?;
            let result = if use_rational(*rational, &sc) {
                commands::vcg::<num_rational::BigRational>(&sc, pi, reports)?
            } else {
                commands::vcg::<f64>(&sc, pi, reports)?
            };
            Ok((result, out.clone()))
        }
        Command::Calibrate {
            scenario,
            margin,
            rational,
            out,
        } => {
            let sc = load_scenario(scenario)?;
            let result = if use_rational(*rational, &sc) {
                commands::calibrate::<num_rational::BigRational>(&sc, margin.as_deref())?
            } else {
                commands::calibrate::<f64>(&sc, margin.as_deref())?
            };
            Ok((result, out.clone()))
        }
        Command::Simulate {
            scenario,
            strategies,
            signals,
            delta,
            rational,
            out,
        } => {
            let sc = load_scenario(scenario)?;
            let result = if use_rational(*rational, &sc) {
                commands::simulate::<num_rational::BigRational>(
                    &sc,
                    strategies,
                    signals,
                    delta.as_deref(),
                )?
            } else {
                commands::simulate::<f64>(&sc, strategies, signals, delta.as_deref())?
            };
            Ok((result, out.clone()))
        }
        Command::Verify {
            scenario,
            seed,
            rational,
            out,
        } => {
            let sc = load_scenario(scenario)?;
            let result = if use_rational(*rational, &sc) {
                commands::verify::<num_rational::BigRational>(&sc, *seed)?
            } else {
                commands::verify::<f64>(&sc, *seed)?
            };
            Ok((result, out.clone()))
        }
        Command::Replica {
            family,
            n_range,
            k,
            seed,
            monte_carlo,
            out,
        } => {
            let result = commands::replica(family, n_range, *k, *seed, *monte_carlo)?;
            Ok((result, out.clone()))
        }
        Command::Report {
            scenario,
            seed,
            rational,
            out,
        } => {
            let sc = load_scenario(scenario)?;
            let result = if use_rational(*rational, &sc) {
                commands::report::<num_rational::BigRational>(&sc, *seed)?
            } else {
                commands::report::<f64>(&sc, *seed)?
            };
            Ok((result, out.clone()))
        }
        Command::Inspect {
            scenario,
            buyer,
            signal,
            rational,
            out,
        } => {
            let sc = load_scenario(scenario)?;
            let result = if use_rational(*rational, &sc) {
                commands::inspect::<num_rational::BigRational>(&sc, *buyer, signal.as_deref())?
            } else {
                commands::inspect::<f64>(&sc, *buyer, signal.as_deref())?
            };
            Ok((result, out.clone()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok((output, out_dir)) => {
            if let Some(dir) = out_dir {
                if let Err(e) = std::fs::create_dir_all(&dir)
                    .and_then(|_| std::fs::write(dir.join(output.artifact), output.text.as_bytes()))
                {
                    eprint!(
                        "{}",
                        CliError::Usage(format!("cannot write artifact to {}: {e}", dir.display()))
                            .to_stderr_json()
                    );
                    return ExitCode::from(1);
                }
            }
            print!("{}", output.text);
            ExitCode::from(output.exit_code as u8)
        }
        Err(error) => {
            eprint!("{}", error.to_stderr_json());
            ExitCode::from(1)
        }
    }
}
