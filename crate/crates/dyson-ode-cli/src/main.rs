use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dyson_ode_cli::commands::{self, CliFailure, CommonOpts};
use dyson_ode_cli::DEFAULT_SEED;

/// Classical reference pipeline for the truncated-Dyson linear-system
/// approach to time-dependent linear ODEs: solve and verify against an
/// adaptive integrator, emit the block encoding, and report oracle-query
/// estimates.
#[derive(Parser)]
#[command(name = "dyson-ode", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the block system, solve it classically, and verify the final
    /// state against a high-accuracy reference.
    Solve(RunArgs),
    /// Emit the block system (and, with --dense, its materialisation and
    /// explicit inverse) as system.json.
    Encode(RunArgs),
    /// Report parameter selections and oracle-query estimates without
    /// solving.
    Estimate(RunArgs),
    /// Run a named self-verification suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Problem spec: a TOML file path or a builtin name.
    spec: String,
    /// Target accuracy for the final state (relative to max_t ||x(t)||).
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Override the number of coarse time steps (sets delta_t = T / r).
    #[arg(long)]
    r: Option<usize>,
    /// Override the truncation order K.
    #[arg(long)]
    k: Option<usize>,
    /// Override the quadrature points M per step.
    #[arg(long)]
    m: Option<usize>,
    /// With encode: also emit the dense matrix and its explicit inverse.
    #[arg(long)]
    dense: bool,
    /// Seed for sampled validation checks.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Proceed even when the stability check fails.
    #[arg(long)]
    allow_unstable: bool,
    /// Output directory for report.json and CSV side files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite name: inverse, mscaling, stability, bounds, oracle-equivalence.
    suite: String,
    /// Seed for randomised suites.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Output directory for bounds.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl RunArgs {
    fn opts(&self) -> CommonOpts {
        CommonOpts {
            epsilon: self.epsilon,
            r_override: self.r,
            k_override: self.k,
            m_override: self.m,
            dense: self.dense,
            seed: self.seed,
            allow_unstable: self.allow_unstable,
            out_dir: self.out.clone(),
        }
    }
}

fn configure_threads() {
    if let Ok(value) = std::env::var("DYSON_ODE_THREADS") {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // Ignore the error: build_global fails only if a pool
                // already exists, in which case the existing pool wins.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!(
                "warning: DYSON_ODE_THREADS={value} is not a positive integer; ignoring"
            ),
        }
    }
}

fn run() -> Result<(), CliFailure> {
    let cli = Cli::parse();
    configure_threads();
    match cli.command {
        Command::Solve(args) => {
            commands::cmd_solve(&args.spec, &args.opts())?;
        }
        Command::Encode(args) => {
            commands::cmd_encode(&args.spec, &args.opts())?;
        }
        Command::Estimate(args) => {
            commands::cmd_estimate(&args.spec, &args.opts())?;
        }
        Command::Verify(args) => {
            commands::cmd_verify(&args.suite, args.seed, &args.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code as u8)
        }
    }
}
