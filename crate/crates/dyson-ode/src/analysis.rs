//! Error bounds with explicit constants, stability classification, and
//! empirical error measurement against the classical oracles.
//!
//! Every bound here is an explicit closed form (no asymptotic notation), so
//! each one can be asserted against measured errors. The truncation bounds
//! follow the factorial tail of the Dyson series; the discretization bounds
//! follow the left-endpoint Riemann-sum analysis with the per-order simplex
//! volumes summed in closed form.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{OdeError, Result};
use crate::linalg::{spectral_norm, vector_is_finite, CMatrix, CVector};
use crate::problem::{MatrixFunction, OdeProblem, TimeGrid};
use crate::propagator::{discretized_dyson, ordered_exponential, reference_solution, rk4_integrate};

/// Relative slack accepted on the λ_A·Δt ≤ 1 precondition.
const STEP_SLACK: f64 = 1e-9;
/// Stability threshold on the maximum logarithmic norm.
pub const STABILITY_THRESHOLD: f64 = 1e-10;
/// Fixed seed for the randomized per-segment stability samples, so reports
/// are reproducible run to run.
const STABILITY_SEED: u64 = 0x057A_B111;
/// Cap on strided fine-grid stability samples.
const STABILITY_SAMPLE_CAP: usize = 4096;
/// Random stability samples per sampled segment.
const STABILITY_RANDOM_PER_SEGMENT: usize = 7;
/// Segments actually measured by the empirical error helpers (strided).
pub const EMPIRICAL_SEGMENT_CAP: usize = 8;
/// Reference-integrator tolerance used for empirical errors.
pub const RK_REFERENCE_TOL: f64 = 1e-12;

fn check_step(a_max: f64, delta_t: f64) -> Result<()> {
    if !(a_max >= 0.0 && delta_t > 0.0 && a_max.is_finite() && delta_t.is_finite()) {
        return Err(OdeError::InvalidParameter(format!(
            "need a_max ≥ 0 and Δt > 0, got a_max = {a_max}, Δt = {delta_t}"
        )));
    }
    if a_max * delta_t > 1.0 + STEP_SLACK {
        return Err(OdeError::Precondition(format!(
            "a_max·Δt = {} exceeds 1; the factorial tail bounds require a_max·Δt ≤ 1",
            a_max * delta_t
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Logarithmic norm and stability.
// ---------------------------------------------------------------------------

/// μ(A) = maximum eigenvalue of the Hermitian part (A + A†)/2.
pub fn logarithmic_norm(a_matrix: &CMatrix) -> Result<f64> {
    crate::linalg::hermitian_part_max_eig(a_matrix)
}

/// Stability classification over a time grid.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    /// Maximum sampled logarithmic norm over [0, T].
    pub max_log_norm: f64,
    /// max_log_norm ≤ 1e-10.
    pub stable: bool,
    /// Number of time samples inspected.
    pub samples: usize,
    /// When stable: max spectral norm of the exact segment propagator over
    /// the sampled segments (must not exceed 1 + 1e-8).
    pub max_propagator_norm: Option<f64>,
    /// True when the propagator-norm cross-check passed (or was not
    /// applicable because the problem is unstable).
    pub propagator_norm_consistent: bool,
}

/// Samples the logarithmic norm of A over the fine grid (strided to at most
/// 4096 points) plus 7 reproducibly random times per sampled segment, and —
/// when stable — cross-checks that the exact segment propagators have
/// spectral norm at most 1 + 1e-8, the non-expansion property the
/// nonpositive logarithmic norm guarantees.
pub fn stability_check(a: &MatrixFunction, grid: &TimeGrid) -> Result<StabilityReport> {
    let mut max_mu = f64::NEG_INFINITY;
    let mut samples = 0usize;
    if a.is_constant() {
        max_mu = logarithmic_norm(&a.evaluate(0.0))?;
        samples = 1;
    } else {
        let total_fine = grid.r.saturating_mul(grid.m);
        let stride = (total_fine / STABILITY_SAMPLE_CAP).max(1);
        let mut buf = CMatrix::zeros(a.dim(), a.dim());
        let mut idx = 0usize;
        while idx < total_fine {
            let t = idx as f64 * grid.delta_t_small;
            a.evaluate_into(t, &mut buf);
            max_mu = max_mu.max(logarithmic_norm(&buf)?);
            samples += 1;
            idx += stride;
        }
        // Randomized samples within (strided) segments, reproducibly seeded.
        let mut rng = ChaCha8Rng::seed_from_u64(STABILITY_SEED);
        let seg_stride = (grid.r / (STABILITY_SAMPLE_CAP / STABILITY_RANDOM_PER_SEGMENT).max(1))
            .max(1);
        let mut seg = 1usize;
        while seg <= grid.r {
            let t0 = grid.segment_start(seg);
            for _ in 0..STABILITY_RANDOM_PER_SEGMENT {
                let t = t0 + rng.random_range(0.0..grid.delta_t);
                a.evaluate_into(t, &mut buf);
                max_mu = max_mu.max(logarithmic_norm(&buf)?);
                samples += 1;
            }
            seg += seg_stride;
        }
    }
    let stable = max_mu <= STABILITY_THRESHOLD;
    let (max_propagator_norm, consistent) = if stable {
        let mut max_norm = 0.0f64;
        if a.is_constant() {
            let w = ordered_exponential(a, 0.0, grid.delta_t, 4)?;
            max_norm = spectral_norm(&w)?;
        } else {
            let stride = (grid.r / EMPIRICAL_SEGMENT_CAP).max(1);
            let mut seg = 1usize;
            while seg <= grid.r {
                let t0 = grid.segment_start(seg);
                let w = ordered_exponential(a, t0, t0 + grid.delta_t, 64)?;
                max_norm = max_norm.max(spectral_norm(&w)?);
                seg += stride;
            }
        }
        (Some(max_norm), max_norm <= 1.0 + 1e-8)
    } else {
        (None, true)
    };
    Ok(StabilityReport {
        max_log_norm: max_mu,
        stable,
        samples,
        max_propagator_norm,
        propagator_norm_consistent: consistent,
    })
}

// ---------------------------------------------------------------------------
// Truncation bounds (factorial tails, explicit constants).
// ---------------------------------------------------------------------------

/// Per-segment truncation bounds for order K over a step Δt:
/// * W term: (a_max·Δt)^{K+1}/(K+1)! · e^{a_max·Δt} · x_norm
/// * v term: b_max·Δt·(a_max·Δt)^K/(K+1)! · e^{a_max·Δt}
///
/// Both arise from bounding the dropped tail Σ_{k>K} by its first term times
/// the exponential series ratio. Requires a_max·Δt ≤ 1.
pub fn truncation_bound(
    a_max: f64,
    b_max: f64,
    delta_t: f64,
    k: usize,
    x_norm: f64,
) -> Result<(f64, f64)> {
    check_step(a_max, delta_t)?;
    if b_max < 0.0 || x_norm < 0.0 {
        return Err(OdeError::InvalidParameter(
            "b_max and x_norm must be nonnegative".into(),
        ));
    }
    let x = a_max * delta_t;
    // x^{K+1}/(K+1)! and x^K/(K+1)! by running products.
    let mut xk = 1.0f64; // x^K
    let mut fact = 1.0f64; // (K+1)!
    for kk in 0..k {
        xk *= x;
        fact *= (kk + 2) as f64;
    }
    let ex = x.exp();
    let bound_w = xk * x / fact * ex * x_norm;
    let bound_v = b_max * delta_t * xk / fact * ex;
    Ok((bound_w, bound_v))
}

// ---------------------------------------------------------------------------
// Discretization bounds (left-endpoint Riemann sums, explicit constants).
// ---------------------------------------------------------------------------

/// (e^x − 1)/x, continuous at 0 (value 1). Uses exp_m1 for accuracy at
/// small x.
fn expm1_over_x(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.exp_m1() / x
    }
}

/// g(x) = [1 − (1 − x)e^x]/x² = Σ_{n≥2} (n−1)x^{n−2}/n!, continuous at 0
/// (value 1/2). Summed as a series: on the admissible range x ≤ 1 it
/// converges factorially, and the series avoids the catastrophic
/// cancellation the closed form suffers for small x.
fn one_minus_shifted_exp_over_x2(x: f64) -> f64 {
    let mut sum = 0.5; // n = 2 term
    let mut term = 0.5;
    let mut n = 3usize;
    loop {
        // t_n/t_{n−1} = [(n−1)/(n−2)]·x/n for t_n = (n−1)x^{n−2}/n!.
        term *= x * (n as f64 - 1.0) / ((n as f64 - 2.0) * n as f64);
        sum += term;
        if term <= sum * 1e-17 || n > 64 {
            return sum;
        }
        n += 1;
    }
}

/// Discretization bound for W̃_K with M left-endpoint points per segment:
/// δt·Δt·a′_max·max(e^x − 1, e^x/2) with x = a_max·Δt and δt = Δt/M.
///
/// The first argument of the max is the closed form from the telescoping
/// derivation; the second is the term-by-term Riemann bound
/// Σ_k k·(δt/2)·a′·a^{k-1}·Δt^k/k! = (δt·Δt·a′/2)·e^x, which dominates for
/// x < ln 2 and keeps the returned value a genuine bound for every x ≤ 1.
pub fn discretization_bound_w(
    a_max: f64,
    a_prime_max: f64,
    delta_t: f64,
    m: usize,
) -> Result<f64> {
    check_step(a_max, delta_t)?;
    if a_prime_max < 0.0 {
        return Err(OdeError::InvalidParameter(
            "a_prime_max must be nonnegative".into(),
        ));
    }
    if m == 0 {
        return Err(OdeError::InvalidParameter("M must be at least 1".into()));
    }
    let x = a_max * delta_t;
    let dt_small = delta_t / m as f64;
    Ok(dt_small * delta_t * a_prime_max * (x.exp_m1()).max(x.exp() / 2.0))
}

/// Discretization bound for ṽ_K with M left-endpoint points per segment:
///   b_max·(δt/2)·a′_max·Δt²·g(x) + (δt/2)·b′_max·Δt·(e^x − 1)/x,
/// where g(x) = [1 − (1−x)e^x]/x², x = a_max·Δt, δt = Δt/M. The two terms
/// sum the per-order Riemann errors from the A-factor and b-factor
/// derivatives respectively; both limits at a_max → 0 are taken by series.
pub fn discretization_bound_v(
    a_max: f64,
    a_prime_max: f64,
    b_max: f64,
    b_prime_max: f64,
    delta_t: f64,
    m: usize,
) -> Result<f64> {
    check_step(a_max, delta_t)?;
    if a_prime_max < 0.0 || b_max < 0.0 || b_prime_max < 0.0 {
        return Err(OdeError::InvalidParameter(
            "derivative and norm bounds must be nonnegative".into(),
        ));
    }
    if m == 0 {
        return Err(OdeError::InvalidParameter("M must be at least 1".into()));
    }
    let x = a_max * delta_t;
    let dt_small = delta_t / m as f64;
    let term_a = b_max
        * (dt_small / 2.0)
        * a_prime_max
        * delta_t
        * delta_t
        * one_minus_shifted_exp_over_x2(x);
    let term_b = (dt_small / 2.0) * b_prime_max * delta_t * expm1_over_x(x);
    Ok(term_a + term_b)
}

// ---------------------------------------------------------------------------
// Error budget.
// ---------------------------------------------------------------------------

/// One budget line: an analytic bound against its per-segment target.
#[derive(Debug, Clone, Serialize)]
pub struct BudgetComponent {
    pub bound: f64,
    pub target: f64,
    pub pass: bool,
}

impl BudgetComponent {
    fn new(bound: f64, target: f64) -> Self {
        BudgetComponent {
            bound,
            target,
            pass: bound <= target,
        }
    }
}

/// The three-way ε split and the per-segment bound checks. The W components
/// are operator-norm bounds checked against ε/(3r); the v components are
/// vector bounds checked against ε·x_max/(3r); the remaining ε/3 is reserved
/// for the linear-system solve.
#[derive(Debug, Clone, Serialize)]
pub struct BudgetReport {
    pub epsilon: f64,
    pub x_max: f64,
    pub truncation_w: BudgetComponent,
    pub truncation_v: BudgetComponent,
    pub discretization_w: BudgetComponent,
    pub discretization_v: BudgetComponent,
    /// ε/3 reserved for the linear-system solve.
    pub solver_share: f64,
    pub pass: bool,
}

/// Splits ε equally across truncation, discretization, and the linear-system
/// solve, and checks each per-segment bound against its share.
pub fn error_budget(
    epsilon: f64,
    problem: &OdeProblem,
    grid: &TimeGrid,
    k: usize,
    m: usize,
    x_max: f64,
) -> Result<BudgetReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(OdeError::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(x_max > 0.0) {
        return Err(OdeError::InvalidParameter("x_max must be positive".into()));
    }
    let r = grid.r;
    let delta_t = grid.delta_t;
    let lambda_a = problem.lambda_a();
    let lambda_b = problem.lambda_b();
    let t = grid.horizon();
    let (tw, tv) = truncation_bound(lambda_a, lambda_b, delta_t, k, 1.0)?;
    let (a_prime, _) = problem.a.derivative_bound(0.0, t)?;
    let (b_prime, _) = problem.b.derivative_bound(0.0, t)?;
    let dw = discretization_bound_w(lambda_a, a_prime, delta_t, m)?;
    let dv = discretization_bound_v(lambda_a, a_prime, lambda_b, b_prime, delta_t, m)?;
    let target_w = epsilon / (3.0 * r as f64);
    let target_v = epsilon * x_max / (3.0 * r as f64);
    let truncation_w = BudgetComponent::new(tw, target_w);
    let truncation_v = BudgetComponent::new(tv, target_v);
    let discretization_w = BudgetComponent::new(dw, target_w);
    let discretization_v = BudgetComponent::new(dv, target_v);
    let pass = truncation_w.pass
        && truncation_v.pass
        && discretization_w.pass
        && discretization_v.pass;
    Ok(BudgetReport {
        epsilon,
        x_max,
        truncation_w,
        truncation_v,
        discretization_w,
        discretization_v,
        solver_share: epsilon / 3.0,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Distance metric.
// ---------------------------------------------------------------------------

/// Pure-state Bures–Wasserstein distance: align y by the global phase that
/// makes ⟨y, x⟩ real and nonnegative, then take ‖x − y‖. A zero overlap
/// degenerates to √(‖x‖² + ‖y‖²).
pub fn bures_wasserstein_pure(x: &CVector, y: &CVector) -> Result<f64> {
    if x.len() != y.len() {
        return Err(OdeError::DimensionMismatch(format!(
            "vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if !vector_is_finite(x) || !vector_is_finite(y) {
        return Err(OdeError::NonFinite("distance inputs".into()));
    }
    let overlap = y.dotc(x); // ⟨y, x⟩
    let mag = overlap.norm();
    if mag == 0.0 {
        return Ok((x.norm_squared() + y.norm_squared()).sqrt());
    }
    let phase = overlap / Complex64::from(mag);
    let aligned = y * phase;
    Ok((x - aligned).norm())
}

// ---------------------------------------------------------------------------
// Empirical errors and the combined report.
// ---------------------------------------------------------------------------

/// Measures per-segment propagator errors against the exact oracles on a
/// strided subset of at most [`EMPIRICAL_SEGMENT_CAP`] segments:
/// max ‖W̃_K − W_exact‖ (spectral) and max ‖ṽ_K − v_exact‖ (2-norm), with
/// W_exact from the ordered exponential and v_exact the zero-initial-state
/// reference solution of the segment.
pub fn empirical_propagator_errors(
    problem: &OdeProblem,
    grid: &TimeGrid,
    k: usize,
) -> Result<(f64, f64)> {
    let stride = (grid.r / EMPIRICAL_SEGMENT_CAP).max(1);
    let mut w_err = 0.0f64;
    let mut v_err = 0.0f64;
    let n = problem.dim();
    let b_zero = problem.b.is_zero();
    let mut seg = 1usize;
    loop {
        let t0 = grid.segment_start(seg);
        let t1 = t0 + grid.delta_t;
        let p = discretized_dyson(&problem.a, &problem.b, t0, grid.delta_t, grid.m, k)?;
        let w_exact = ordered_exponential(&problem.a, t0, t1, 64)?;
        w_err = w_err.max(spectral_norm(&(&p.w - &w_exact))?);
        if !b_zero {
            let v_exact = rk4_integrate(
                &problem.a,
                &problem.b,
                &CVector::zeros(n),
                t0,
                &[t1],
                RK_REFERENCE_TOL,
            )?
            .pop()
            .expect("one sample requested");
            v_err = v_err.max((&p.v - &v_exact).norm());
        }
        if seg == grid.r {
            break;
        }
        seg = (seg + stride).min(grid.r);
    }
    Ok((w_err, v_err))
}

/// Full analytic-plus-empirical error report for one solved configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    /// Per-segment truncation bound on the propagator block (operator norm).
    pub truncation_bound_w: f64,
    /// Per-segment truncation bound on the drive-response vector.
    pub truncation_bound_v: f64,
    /// Per-segment discretization bound on the propagator block.
    pub discretization_bound_w: f64,
    /// Per-segment discretization bound on the drive-response vector.
    pub discretization_bound_v: f64,
    /// Measured max ‖W̃_K − W_exact‖ over sampled segments.
    pub empirical_w_error: f64,
    /// Measured max ‖ṽ_K − v_exact‖ over sampled segments.
    pub empirical_v_error: f64,
    /// Measured ‖final_state − x_ref(T)‖.
    pub empirical_final_error: f64,
    /// Maximum sampled logarithmic norm.
    pub log_norm_max: f64,
    /// log_norm_max ≤ 1e-10.
    pub stable: bool,
    pub epsilon_budget: BudgetReport,
}

/// Builds the combined report: analytic bounds at (K, M = grid.m), measured
/// segment errors against the oracles, the final-state error against the
/// reference trajectory, and the stability classification.
pub fn error_report(
    problem: &OdeProblem,
    grid: &TimeGrid,
    k: usize,
    final_state: &CVector,
    epsilon: f64,
    x_max: f64,
) -> Result<ErrorReport> {
    let t = grid.horizon();
    let (tw, tv) = truncation_bound(problem.lambda_a(), problem.lambda_b(), grid.delta_t, k, 1.0)?;
    let (a_prime, _) = problem.a.derivative_bound(0.0, t)?;
    let (b_prime, _) = problem.b.derivative_bound(0.0, t)?;
    let dw = discretization_bound_w(problem.lambda_a(), a_prime, grid.delta_t, grid.m)?;
    let dv = discretization_bound_v(
        problem.lambda_a(),
        a_prime,
        problem.lambda_b(),
        b_prime,
        grid.delta_t,
        grid.m,
    )?;
    let (w_err, v_err) = empirical_propagator_errors(problem, grid, k)?;
    let x_ref = reference_solution(problem, t, RK_REFERENCE_TOL)?;
    let final_err = (final_state - &x_ref).norm();
    let stability = stability_check(&problem.a, grid)?;
    let budget = error_budget(epsilon, problem, grid, k, grid.m, x_max)?;
    let report = ErrorReport {
        truncation_bound_w: tw,
        truncation_bound_v: tv,
        discretization_bound_w: dw,
        discretization_bound_v: dv,
        empirical_w_error: w_err,
        empirical_v_error: v_err,
        empirical_final_error: final_err,
        log_norm_max: stability.max_log_norm,
        stable: stability.stable,
        epsilon_budget: budget,
    };
    for (name, value) in [
        ("truncation_bound_w", report.truncation_bound_w),
        ("truncation_bound_v", report.truncation_bound_v),
        ("discretization_bound_w", report.discretization_bound_w),
        ("discretization_bound_v", report.discretization_bound_v),
        ("empirical_w_error", report.empirical_w_error),
        ("empirical_v_error", report.empirical_v_error),
        ("empirical_final_error", report.empirical_final_error),
    ] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(OdeError::NonFinite(format!(
                "error-report field {name} is {value}"
            )));
        }
    }
    Ok(report)
}
