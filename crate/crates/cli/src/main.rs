//! Command-line front end: trade-off curves, prox evaluation, simulations,
//! lower-bound sweeps, instance search and the worked constant-prior example.

mod commands;
mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::Format;

/// Exit status for invalid input.
const EXIT_INPUT: u8 = 2;
/// Exit status for numerical failures.
const EXIT_NUMERIC: u8 = 3;
/// Exit status when the worked example misses its reference values.
const EXIT_GATE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "slope-tradeoff", version, about = "SLOPE TPP-FDP trade-off toolkit")]
struct Cli {
    /// Output format; defaults to json for example-d3 and csv otherwise.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write output to this file instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for parallel grid searches and trials.
    #[arg(long, global = true, env = "SLOPE_TRADEOFF_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct ShapeArgs {
    /// Sampling ratio n/p.
    #[arg(long)]
    delta: f64,
    /// Fraction of nonzero coefficients.
    #[arg(long)]
    eps: f64,
    /// Noise variance.
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
}

#[derive(Debug, Args, Clone)]
struct GridArgs {
    /// Use the coarse lower-bound grid (dz 0.05, 20 atom values).
    #[arg(long)]
    coarse: bool,
    /// Penalty grid spacing.
    #[arg(long)]
    dz: Option<f64>,
    /// Extent of the penalty grid beyond the threshold and the largest atom.
    #[arg(long)]
    z_span: Option<f64>,
    /// Number of log-spaced atom values.
    #[arg(long)]
    t_points: Option<usize>,
    /// Largest finite atom value.
    #[arg(long)]
    t_max: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Upper curve, lower curve and Lasso curve on a TPP grid.
    Curves {
        #[command(flatten)]
        shape: ShapeArgs,
        /// Number of grid intervals on [0, 1].
        #[arg(long, default_value_t = 50)]
        points: usize,
        /// Skip the (slow) lower curve.
        #[arg(long)]
        no_lower: bool,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Sorted-ℓ1 proximal operator.
    Prox {
        /// Input vector, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        v: Vec<f64>,
        /// Nonincreasing nonnegative penalty, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        theta: Vec<f64>,
    },
    /// Monte Carlo TPP/FDP sweep from a preset or a JSON config.
    Simulate {
        /// fig1-left, fig1-right or fig3.
        #[arg(long, required_unless_present = "config", conflicts_with = "config")]
        preset: Option<String>,
        /// JSON sweep configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print per-penalty averages instead of per-trial rows.
        #[arg(long)]
        summary: bool,
    },
    /// Lower trade-off curve: threshold and FDP bound on a TPP grid.
    LowerBound {
        #[command(flatten)]
        shape: ShapeArgs,
        /// Number of grid intervals on [0, 1]; ignored with --u.
        #[arg(long, default_value_t = 50)]
        points: usize,
        /// Explicit TPP values, comma separated.
        #[arg(long, value_delimiter = ',')]
        u: Vec<f64>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Two-level penalty dominating a Lasso penalty in TPP, FDP and MSE.
    InstanceSearch {
        /// Use the fig7 path instead of explicit parameters.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, required_unless_present = "preset")]
        delta: Option<f64>,
        #[arg(long, required_unless_present = "preset")]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        sigma2: f64,
        /// Nonzero value of the Bernoulli prior.
        #[arg(long, default_value_t = 1.0)]
        signal: f64,
        /// Prior as JSON, overriding --signal.
        #[arg(long)]
        prior_json: Option<String>,
        /// Original-scale Lasso penalties, comma separated.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        /// Normalized Lasso thresholds, comma separated.
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        /// Quantile count of the state-evolution discretization.
        #[arg(long, default_value_t = 20_000)]
        p: usize,
    },
    /// Constant-prior construction at the power limit, checked against
    /// reference values.
    #[command(name = "example-d3")]
    ExampleD3 {
        /// Print the report without failing on reference mismatches.
        #[arg(long)]
        report_only: bool,
        /// Evaluate the estimation error at this threshold instead.
        #[arg(long)]
        alpha: Option<f64>,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(commands::InputError("--workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let default_format = match cli.command {
        Command::ExampleD3 { .. } => Format::Json,
        _ => Format::Csv,
    };
    let format = cli.format.unwrap_or(default_format);
    let (table, ok) = commands::dispatch(cli.command)?;
    let mut out: Box<dyn Write> = match &cli.output {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    table.write(format, &mut out)?;
    out.flush()?;
    Ok(ok)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<slope_tradeoff::Error>() {
            return if e.is_input_error() { EXIT_INPUT } else { EXIT_NUMERIC };
        }
        if cause.is::<commands::InputError>() || cause.is::<serde_json::Error>() {
            return EXIT_INPUT;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: reference values not reproduced within tolerance");
            ExitCode::from(EXIT_GATE)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
