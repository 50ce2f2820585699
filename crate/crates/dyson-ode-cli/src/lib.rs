//! Library surface of the `dyson-ode` command-line tool. The binary is a
//! thin argument-parsing wrapper; everything testable lives here.

pub mod commands;
pub mod report;
pub mod spec_file;

/// Default RNG seed for sampled validation (λ spot checks, stability
/// sampling, verify suites).
pub const DEFAULT_SEED: u64 = 20_260_816;
