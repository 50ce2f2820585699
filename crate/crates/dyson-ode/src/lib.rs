//! Classical reference implementation, verifier, and quantum-resource
//! estimator for the Dyson-series linear-system approach to time-dependent
//! linear ODEs x'(t) = A(t) x(t) + b(t).
//!
//! The crate is organised around one pipeline:
//!
//! 1. [`problem`] — describe the instance: evaluators for `A(t)` and `b(t)`,
//!    the initial vector, the horizon `T`, and the oracle normalisations
//!    (λ-values) a block-encoded implementation would use.
//! 2. [`propagator`] — compute truncated, time-discretised Dyson propagators
//!    W̃_K and particular-solution vectors ṽ_K per time segment, plus
//!    independent oracles (brute-force enumeration, Taylor specialisation,
//!    step-doubling RK4 integration, fine-product ordered exponentials).
//! 3. [`encoding`] — assemble the block-bidiagonal linear system 𝒜𝒳 = ℬ,
//!    its closed-form inverse, and norm/condition-number bounds.
//! 4. [`solver`] — solve the system exactly by forward substitution and
//!    compute the success amplitudes a quantum run would obtain.
//! 5. [`analysis`] — evaluate every analytic error bound with explicit
//!    constants and measure empirical errors against the oracles.
//! 6. [`resources`] — select Δt, K, M from the error budget and evaluate the
//!    query/gate-count formulas (order estimates, constants set to 1).
//!
//! [`library`] ships a small set of built-in test problems used by the CLI
//! and the verification suites.

// Validation code writes `!(x > 0.0)` instead of `x <= 0.0` on purpose: the
// negated form also rejects NaN, which must be treated as invalid input.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod encoding;
pub mod error;
pub mod library;
pub mod linalg;
pub mod problem;
pub mod propagator;
pub mod resources;
pub mod solver;

pub use analysis::{BudgetReport, ErrorReport, StabilityReport};
pub use encoding::{BlockSystem, ConditionReport};
pub use error::{OdeError, Result};
pub use linalg::{CMatrix, CVector};
pub use problem::{MatrixFunction, OdeProblem, TimeGrid, TimeProfile, VectorFunction};
pub use propagator::TruncatedPropagator;
pub use resources::{CostInputs, LambdaLedger, ResourceEstimate};
pub use solver::{AmplitudeReport, SolutionHistory};
