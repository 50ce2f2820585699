//! Truncated, time-discretised Dyson propagators and their oracles.
//!
//! The production path computes, for one time segment [t0, t0+Δt] sampled at
//! M left-endpoint times t_j = t0 + j·δt (δt = Δt/M), the pair
//!
//! * W̃_K = Σ_{k=0}^{K} (δt^k/k!) Σ_{j_1..j_k} 𝒯 A(t_{j_k})⋯A(t_{j_1})
//! * ṽ_K = Σ_{k=1}^{K} (δt^k/k!) Σ_{j_1..j_k} 𝒯 A⋯A·b(t_min)
//!
//! via the degree-≤K truncation of the ordered product
//! ∏_{j=M-1..0} exp(δt·Ã(t_j)) of augmented matrices
//! Ã = [[A, b],[0, 0]]: the top-left block is W̃_K and the top-right column
//! is ṽ_K, with equal-time multiplicity weights handled exactly by the
//! exponential expansion. Specialised fast paths cover constant A (vector
//! recurrences) and fully constant coefficients (Taylor partial sums);
//! all paths agree to floating-point accuracy and are cross-checked against
//! a brute-force enumeration oracle in the tests.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{OdeError, Result};
use crate::linalg::{matrix_is_finite, vector_is_finite, CMatrix, CVector, ONE, ZERO};
use crate::problem::{MatrixFunction, OdeProblem, TimeGrid, VectorFunction};

/// Steps per parallel chunk. Fixed (independent of thread count) so that
/// chunk boundaries — and therefore floating-point results — are identical
/// no matter how many workers execute them.
const CHUNK_STEPS: usize = 8192;

/// Enumeration caps for the brute-force oracle (cost grows as M^K).
pub const BRUTE_FORCE_K_CAP: usize = 4;
pub const BRUTE_FORCE_M_CAP: usize = 8;

/// Step cap for the reference integrator.
const RK4_STEP_CAP: usize = 1 << 22;

/// Fine-product cap for the ordered-exponential oracle.
const ORDERED_EXP_STEP_CAP: usize = 1 << 18;

/// A truncated Dyson propagator pair over one segment.
#[derive(Debug, Clone)]
pub struct TruncatedPropagator {
    /// W̃_K — the homogeneous propagator block.
    pub w: CMatrix,
    /// ṽ_K — the particular-solution (drive response) vector.
    pub v: CVector,
    /// Truncation order K.
    pub order: usize,
    /// Quadrature points per segment, M.
    pub m_points: usize,
    /// Segment start time.
    pub t0: f64,
    /// Segment width Δt.
    pub delta_t: f64,
    /// 1-based segment index when produced by [`segment_propagators`]; 0 for
    /// standalone computations.
    pub segment_index: usize,
}

fn check_inputs(
    a: &MatrixFunction,
    b: &VectorFunction,
    t0: f64,
    delta_t: f64,
    m: usize,
) -> Result<usize> {
    if a.dim() != b.dim() {
        return Err(OdeError::DimensionMismatch(format!(
            "A is {}-dimensional but b is {}-dimensional",
            a.dim(),
            b.dim()
        )));
    }
    if m == 0 {
        return Err(OdeError::InvalidParameter("M must be at least 1".into()));
    }
    if !(delta_t.is_finite() && delta_t > 0.0) {
        return Err(OdeError::InvalidParameter(format!(
            "segment width must be positive and finite, got {delta_t}"
        )));
    }
    if !t0.is_finite() {
        return Err(OdeError::InvalidParameter("segment start must be finite".into()));
    }
    Ok(a.dim())
}

/// Computes W̃_K and ṽ_K over [t0, t0+Δt] with M left-endpoint quadrature
/// points. Dispatches to the Taylor specialisation when both coefficients
/// are constant (the discrete sums are then exactly M-independent), to a
/// constant-A vector recurrence when only A is constant, and to the general
/// augmented-matrix truncated ordered product otherwise.
pub fn discretized_dyson(
    a: &MatrixFunction,
    b: &VectorFunction,
    t0: f64,
    delta_t: f64,
    m: usize,
    k: usize,
) -> Result<TruncatedPropagator> {
    let n = check_inputs(a, b, t0, delta_t, m)?;
    let (w, v) = match (a.constant_value(), b.constant_value()) {
        (Some(ac), Some(bc)) => {
            let p = taylor_propagator(ac, bc, delta_t, k)?;
            (p.w, p.v)
        }
        (Some(ac), None) => constant_a_path(ac, b, t0, delta_t, m, k)?,
        _ => generic_path(a, b, t0, delta_t, m, k)?,
    };
    if !matrix_is_finite(&w) || !vector_is_finite(&v) {
        return Err(OdeError::NonFinite(format!(
            "propagator over [{t0}, {}] produced non-finite entries",
            t0 + delta_t
        )));
    }
    debug_assert_eq!(w.nrows(), n);
    Ok(TruncatedPropagator {
        w,
        v,
        order: k,
        m_points: m,
        t0,
        delta_t,
        segment_index: 0,
    })
}

/// Exact Taylor partial sums for constant coefficients:
/// W_K = Σ_{k=0}^{K} (AΔt)^k/k! and v_K = Σ_{k=1}^{K} A^{k-1}Δt^k/k! · b.
pub fn taylor_propagator(
    a_const: &CMatrix,
    b_const: &CVector,
    delta_t: f64,
    k: usize,
) -> Result<TruncatedPropagator> {
    if !a_const.is_square() || a_const.nrows() != b_const.len() {
        return Err(OdeError::DimensionMismatch(format!(
            "A is {}x{} but b has length {}",
            a_const.nrows(),
            a_const.ncols(),
            b_const.len()
        )));
    }
    if !(delta_t.is_finite() && delta_t > 0.0) {
        return Err(OdeError::InvalidParameter(format!(
            "delta_t must be positive and finite, got {delta_t}"
        )));
    }
    if !matrix_is_finite(a_const) || !vector_is_finite(b_const) {
        return Err(OdeError::NonFinite("constant coefficients".into()));
    }
    let n = a_const.nrows();
    let mut w = CMatrix::identity(n, n);
    let mut v = CVector::zeros(n);
    if k >= 1 {
        // Running terms: wterm_k = (ΔtA)^k/k!, vterm_k = Δt^k A^{k-1}/k! · b.
        let mut wterm = CMatrix::identity(n, n);
        let mut vterm = b_const * Complex64::from(delta_t);
        let mut next_w = CMatrix::zeros(n, n);
        let mut next_v = CVector::zeros(n);
        v += &vterm;
        for kk in 1..=k {
            next_w.gemm(Complex64::from(delta_t / kk as f64), a_const, &wterm, ZERO);
            std::mem::swap(&mut wterm, &mut next_w);
            w += &wterm;
            if kk < k {
                next_v.gemv(Complex64::from(delta_t / (kk + 1) as f64), a_const, &vterm, ZERO);
                std::mem::swap(&mut vterm, &mut next_v);
                v += &vterm;
            }
        }
    }
    if !matrix_is_finite(&w) || !vector_is_finite(&v) {
        return Err(OdeError::NonFinite("Taylor partial sums".into()));
    }
    Ok(TruncatedPropagator {
        w,
        v,
        order: k,
        m_points: 1,
        t0: 0.0,
        delta_t,
        segment_index: 0,
    })
}

/// Chunk ranges [start, end) of at most [`CHUNK_STEPS`] steps covering 0..m.
fn chunk_ranges(m: usize) -> Vec<(usize, usize)> {
    (0..m)
        .step_by(CHUNK_STEPS)
        .map(|s| (s, (s + CHUNK_STEPS).min(m)))
        .collect()
}

// ---------------------------------------------------------------------------
// Constant-A fast path.
//
// With A constant, the degree-d (in δt) component of the drive response
// after processing a prefix of steps satisfies, when step j is appended on
// the left,
//   v[d] ← v[d] + Σ_{i=1}^{d-1} G_i v[d-i] + H_d b(t_j),
// where G_i = (δtA)^i/i! is the degree-i piece of each step's homogeneous
// factor and H_d = δt^d A^{d-1}/d! is the degree-d piece of the step's own
// drive column. Chunks combine by
//   v[d] ← v^B[d] + Σ_{i=0}^{d-1} P^B_i v^A[d-i],  P^B_i = (n_B δt A)^i/i!,
// because the truncated product of truncated exponentials of a fixed matrix
// equals the truncated exponential of the summed step (commuting factors).
// The final homogeneous block is exactly W̃_K = Σ_{k≤K} (ΔtA)^k/k!.
// ---------------------------------------------------------------------------

fn constant_a_path(
    ac: &CMatrix,
    b: &VectorFunction,
    t0: f64,
    delta_t: f64,
    m: usize,
    k: usize,
) -> Result<(CMatrix, CVector)> {
    let n = ac.nrows();
    if k == 0 {
        return Ok((CMatrix::identity(n, n), CVector::zeros(n)));
    }
    let dt = delta_t / m as f64;

    // G_i = (δtA)^i/i!, i = 0..=K.
    let mut g: Vec<CMatrix> = Vec::with_capacity(k + 1);
    g.push(CMatrix::identity(n, n));
    for i in 1..=k {
        let mut next = CMatrix::zeros(n, n);
        next.gemm(Complex64::from(dt / i as f64), ac, &g[i - 1], ZERO);
        g.push(next);
    }
    // H_d = δt^d A^{d-1}/d!, d = 1..=K (index 0 unused).
    let mut h: Vec<CMatrix> = Vec::with_capacity(k + 1);
    h.push(CMatrix::zeros(n, n));
    h.push(CMatrix::identity(n, n) * Complex64::from(dt));
    for d in 2..=k {
        let mut next = CMatrix::zeros(n, n);
        next.gemm(Complex64::from(dt / d as f64), ac, &h[d - 1], ZERO);
        h.push(next);
    }

    let ranges = chunk_ranges(m);
    let chunk_v: Vec<Vec<CVector>> = if ranges.len() > 1 {
        ranges
            .par_iter()
            .map(|&(s, e)| constant_a_chunk(&g, &h, b, t0, dt, s, e, k, n))
            .collect()
    } else {
        vec![constant_a_chunk(&g, &h, b, t0, dt, 0, m, k, n)]
    };

    // Sequential in-order merge: earlier chunks first, each new chunk is
    // later in time and multiplies from the left.
    let mut v: Vec<CVector> = (0..=k).map(|_| CVector::zeros(n)).collect();
    let mut pb: Vec<CMatrix> = (0..=k).map(|_| CMatrix::zeros(n, n)).collect();
    for (ci, vb) in chunk_v.iter().enumerate() {
        let (s, e) = ranges[ci];
        let len_b = (e - s) as f64;
        // P^B_i = (n_B δt A)^i / i!.
        pb[0] = CMatrix::identity(n, n);
        for i in 1..=k.saturating_sub(1) {
            let mut next = CMatrix::zeros(n, n);
            next.gemm(Complex64::from(len_b * dt / i as f64), ac, &pb[i - 1], ZERO);
            pb[i] = next;
        }
        for d in (1..=k).rev() {
            let (lo, hi) = v.split_at_mut(d);
            let target = &mut hi[0];
            // i = 0 term is the old v[d] already in place.
            for i in 1..=(d - 1) {
                target.gemv(ONE, &pb[i], &lo[d - i], ONE);
            }
            *target += &vb[d];
        }
    }

    let w = taylor_propagator(ac, &CVector::zeros(n), delta_t, k)?.w;
    let mut v_total = CVector::zeros(n);
    for vd in v.iter().skip(1) {
        v_total += vd;
    }
    Ok((w, v_total))
}

#[allow(clippy::too_many_arguments)]
fn constant_a_chunk(
    g: &[CMatrix],
    h: &[CMatrix],
    b: &VectorFunction,
    t0: f64,
    dt: f64,
    start: usize,
    end: usize,
    k: usize,
    n: usize,
) -> Vec<CVector> {
    let mut v: Vec<CVector> = (0..=k).map(|_| CVector::zeros(n)).collect();
    let mut b_eval = CVector::zeros(n);
    for j in start..end {
        let t = t0 + j as f64 * dt;
        b.evaluate_into(t, &mut b_eval);
        for d in (1..=k).rev() {
            let (lo, hi) = v.split_at_mut(d);
            let target = &mut hi[0];
            for i in 1..=(d - 1) {
                target.gemv(ONE, &g[i], &lo[d - i], ONE);
            }
            target.gemv(ONE, &h[d], &b_eval, ONE);
        }
    }
    v
}

// ---------------------------------------------------------------------------
// General path: graded truncated ordered product of augmented exponentials.
// ---------------------------------------------------------------------------

/// Graded state: c[d] is the total-degree-d (in δt) coefficient matrix of
/// the truncated ordered product processed so far; c[0] stays the identity.
fn identity_graded(na: usize, k: usize) -> Vec<CMatrix> {
    let mut c = Vec::with_capacity(k + 1);
    c.push(CMatrix::identity(na, na));
    for _ in 0..k {
        c.push(CMatrix::zeros(na, na));
    }
    c
}

/// Processes steps j ∈ [start, end): for each step builds the graded factor
/// B_i = (δt Ã(t_j))^i / i! and updates c[d] ← Σ_{i=0}^{d} B_i c[d-i].
fn generic_graded_chunk(
    a: &MatrixFunction,
    b: &VectorFunction,
    t0: f64,
    dt: f64,
    start: usize,
    end: usize,
    k: usize,
) -> Vec<CMatrix> {
    let n = a.dim();
    let na = n + 1;
    let mut c = identity_graded(na, k);
    if k == 0 {
        return c;
    }
    let mut a_eval = CMatrix::zeros(n, n);
    let mut b_eval = CVector::zeros(n);
    let mut atilde = CMatrix::zeros(na, na);
    let mut bpow: Vec<CMatrix> = (0..=k).map(|_| CMatrix::zeros(na, na)).collect();
    for j in start..end {
        let t = t0 + j as f64 * dt;
        a.evaluate_into(t, &mut a_eval);
        b.evaluate_into(t, &mut b_eval);
        for col in 0..n {
            for row in 0..n {
                atilde[(row, col)] = a_eval[(row, col)];
            }
        }
        for row in 0..n {
            atilde[(row, n)] = b_eval[row];
        }
        // Bottom row of Ã is identically zero, so every B_i (i ≥ 1) has an
        // exactly zero bottom row and the product keeps (0,…,0,1) exactly.
        bpow[1].copy_from(&atilde);
        bpow[1] *= Complex64::from(dt);
        for i in 2..=k {
            let (lo, hi) = bpow.split_at_mut(i);
            hi[0].gemm(Complex64::from(dt / i as f64), &atilde, &lo[i - 1], ZERO);
        }
        for d in (1..=k).rev() {
            let (lo, hi) = c.split_at_mut(d);
            let target = &mut hi[0];
            for i in 1..=d {
                target.gemm(ONE, &bpow[i], &lo[d - i], ONE);
            }
        }
    }
    c
}

/// total ← chunk ∘ total (chunk is later in time, multiplies from the left):
/// out[d] = Σ_{i=0}^{d} chunk[i]·total[d-i], with chunk[0] = I.
fn merge_graded(total: &mut Vec<CMatrix>, chunk: &[CMatrix]) {
    let k = total.len() - 1;
    let na = total[0].nrows();
    let mut out: Vec<CMatrix> = Vec::with_capacity(k + 1);
    for d in 0..=k {
        let mut acc = CMatrix::zeros(na, na);
        acc.copy_from(&total[d]);
        for i in 1..=d {
            acc.gemm(ONE, &chunk[i], &total[d - i], ONE);
        }
        out.push(acc);
    }
    *total = out;
}

/// Full graded product over all M steps, summed over degrees. Returns the
/// (N+1)×(N+1) truncated ordered product (used directly by tests to check
/// the augmented-block structure).
fn augmented_truncated_product(
    a: &MatrixFunction,
    b: &VectorFunction,
    t0: f64,
    delta_t: f64,
    m: usize,
    k: usize,
) -> CMatrix {
    let na = a.dim() + 1;
    let dt = delta_t / m as f64;
    let ranges = chunk_ranges(m);
    let graded: Vec<Vec<CMatrix>> = if ranges.len() > 1 {
        ranges
            .par_iter()
            .map(|&(s, e)| generic_graded_chunk(a, b, t0, dt, s, e, k))
            .collect()
    } else {
        vec![generic_graded_chunk(a, b, t0, dt, 0, m, k)]
    };
    let mut total = identity_graded(na, k);
    for chunk in &graded {
        merge_graded(&mut total, chunk);
    }
    let mut s = CMatrix::zeros(na, na);
    for d in total.iter() {
        s += d;
    }
    s
}

fn generic_path(
    a: &MatrixFunction,
    b: &VectorFunction,
    t0: f64,
    delta_t: f64,
    m: usize,
    k: usize,
) -> Result<(CMatrix, CVector)> {
    let n = a.dim();
    let s = augmented_truncated_product(a, b, t0, delta_t, m, k);
    let w = s.view((0, 0), (n, n)).into_owned();
    let mut v = CVector::zeros(n);
    for row in 0..n {
        v[row] = s[(row, n)];
    }
    Ok((w, v))
}

// ---------------------------------------------------------------------------
// Brute-force oracle.
// ---------------------------------------------------------------------------

/// Evaluates the discretised sums by explicit enumeration of all M^k index
/// tuples per order k ≤ K: each tuple is sorted ascending (time ordering),
/// the W term multiplies A factors latest-leftmost, and the v term applies
/// the k-1 latest A factors to b at the earliest time. Enumerating unsorted
/// tuples with weight δt^k/k! reproduces the symmetrised sum's equal-time
/// multiplicity weights 1/∏(m_i!) exactly. Test oracle only.
pub fn brute_force_dyson(
    a: &MatrixFunction,
    b: &VectorFunction,
    t0: f64,
    delta_t: f64,
    m: usize,
    k: usize,
) -> Result<TruncatedPropagator> {
    let n = check_inputs(a, b, t0, delta_t, m)?;
    if k > BRUTE_FORCE_K_CAP || m > BRUTE_FORCE_M_CAP {
        return Err(OdeError::EnumerationLimit(format!(
            "brute force caps are K ≤ {BRUTE_FORCE_K_CAP}, M ≤ {BRUTE_FORCE_M_CAP}; got K = {k}, M = {m}"
        )));
    }
    let dt = delta_t / m as f64;
    let a_samples: Vec<CMatrix> = (0..m).map(|j| a.evaluate(t0 + j as f64 * dt)).collect();
    let b_samples: Vec<CVector> = (0..m).map(|j| b.evaluate(t0 + j as f64 * dt)).collect();

    let mut w = CMatrix::identity(n, n);
    let mut v = CVector::zeros(n);
    for kk in 1..=k {
        let factorial: f64 = (1..=kk).map(|x| x as f64).product();
        let weight = Complex64::from(dt.powi(kk as i32) / factorial);
        let mut tuple = vec![0usize; kk];
        let mut sorted = vec![0usize; kk];
        loop {
            sorted.copy_from_slice(&tuple);
            sorted.sort_unstable();
            let mut acc_w: CMatrix = a_samples[sorted[0]].clone();
            for &idx in &sorted[1..] {
                acc_w = &a_samples[idx] * acc_w;
            }
            w += &(acc_w * weight);
            let mut acc_v: CVector = b_samples[sorted[0]].clone();
            for &idx in &sorted[1..] {
                acc_v = &a_samples[idx] * acc_v;
            }
            v += &(acc_v * weight);

            let mut pos = 0usize;
            loop {
                tuple[pos] += 1;
                if tuple[pos] < m {
                    break;
                }
                tuple[pos] = 0;
                pos += 1;
                if pos == kk {
                    break;
                }
            }
            if pos == kk {
                break;
            }
        }
    }
    Ok(TruncatedPropagator {
        w,
        v,
        order: k,
        m_points: m,
        t0,
        delta_t,
        segment_index: 0,
    })
}

// ---------------------------------------------------------------------------
// Ordered exponential (exact-W oracle).
// ---------------------------------------------------------------------------

/// Exact time-ordered exponential W(t1, t0), approximated by a fine product
/// of midpoint exponentials with the subdivision doubled until successive
/// refinements differ by < 1e-10 in Frobenius norm (latest factor leftmost).
/// Constant A short-circuits to the scaling-and-squaring exponential.
pub fn ordered_exponential(
    a: &MatrixFunction,
    t0: f64,
    t1: f64,
    fine_steps: usize,
) -> Result<CMatrix> {
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(OdeError::InvalidParameter(format!(
            "need finite t1 ≥ t0, got [{t0}, {t1}]"
        )));
    }
    let nn = a.dim();
    if t1 == t0 {
        return Ok(CMatrix::identity(nn, nn));
    }
    if let Some(ac) = a.constant_value() {
        return Ok((ac * Complex64::from(t1 - t0)).exp());
    }
    let mut steps = fine_steps.max(4);
    let mut prev = midpoint_product(a, t0, t1, steps);
    loop {
        steps *= 2;
        if steps > ORDERED_EXP_STEP_CAP {
            return Err(OdeError::NonConvergence(format!(
                "ordered exponential did not settle below 1e-10 by {ORDERED_EXP_STEP_CAP} fine steps"
            )));
        }
        let cur = midpoint_product(a, t0, t1, steps);
        if (&cur - &prev).norm() < 1e-10 {
            if !matrix_is_finite(&cur) {
                return Err(OdeError::NonFinite("ordered exponential".into()));
            }
            return Ok(cur);
        }
        prev = cur;
    }
}

fn midpoint_product(a: &MatrixFunction, t0: f64, t1: f64, steps: usize) -> CMatrix {
    let n = a.dim();
    let h = (t1 - t0) / steps as f64;
    let mut p = CMatrix::identity(n, n);
    let mut a_eval = CMatrix::zeros(n, n);
    for i in 0..steps {
        let t_mid = t0 + (i as f64 + 0.5) * h;
        a.evaluate_into(t_mid, &mut a_eval);
        p = (&a_eval * Complex64::from(h)).exp() * p;
    }
    p
}

// ---------------------------------------------------------------------------
// Reference integrator (classical ground-truth oracle).
// ---------------------------------------------------------------------------

/// Integrates ẋ = A(t)x + b(t) from (t_start, x_init) and returns the state
/// at each requested time, by classical RK4 with the global step count
/// doubled until successive runs differ by < tol·max(1, max‖x‖) at every
/// requested time (step-doubling Richardson control).
pub fn rk4_integrate(
    a: &MatrixFunction,
    b: &VectorFunction,
    x_init: &CVector,
    t_start: f64,
    sample_times: &[f64],
    tol: f64,
) -> Result<Vec<CVector>> {
    if a.dim() != b.dim() || a.dim() != x_init.len() {
        return Err(OdeError::DimensionMismatch(
            "rk4_integrate: A, b, x_init dimensions disagree".into(),
        ));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(OdeError::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if sample_times.is_empty() {
        return Ok(Vec::new());
    }
    let mut prev_t = t_start;
    for &t in sample_times {
        if !(t.is_finite() && t >= prev_t) {
            return Err(OdeError::InvalidParameter(
                "sample times must be finite, ascending, and ≥ the start time".into(),
            ));
        }
        prev_t = t;
    }

    let mut n_total = 256usize;
    let mut prev: Option<Vec<CVector>> = None;
    loop {
        let cur = rk4_run(a, b, x_init, t_start, sample_times, n_total);
        if !cur.iter().all(vector_is_finite) {
            return Err(OdeError::NonFinite(
                "reference integration produced non-finite states".into(),
            ));
        }
        if let Some(p) = &prev {
            let scale = cur
                .iter()
                .map(|x| x.norm())
                .fold(1.0f64, f64::max);
            let diff = cur
                .iter()
                .zip(p.iter())
                .map(|(x, y)| (x - y).norm())
                .fold(0.0f64, f64::max);
            if diff <= tol * scale {
                return Ok(cur);
            }
        }
        prev = Some(cur);
        n_total = n_total
            .checked_mul(2)
            .filter(|&n| n <= RK4_STEP_CAP)
            .ok_or_else(|| {
                OdeError::NonConvergence(format!(
                    "reference integrator exceeded {RK4_STEP_CAP} steps without meeting tol {tol} \
                     (stiff or misconfigured problem)"
                ))
            })?;
    }
}

fn rk4_run(
    a: &MatrixFunction,
    b: &VectorFunction,
    x_init: &CVector,
    t_start: f64,
    sample_times: &[f64],
    n_total: usize,
) -> Vec<CVector> {
    let n = x_init.len();
    let t_end = *sample_times.last().expect("nonempty");
    let total_span = (t_end - t_start).max(0.0);
    let mut out = Vec::with_capacity(sample_times.len());
    let mut x = x_init.clone();
    let mut t_prev = t_start;

    let mut a_buf = CMatrix::zeros(n, n);
    let mut b_buf = CVector::zeros(n);
    let mut k1 = CVector::zeros(n);
    let mut k2 = CVector::zeros(n);
    let mut k3 = CVector::zeros(n);
    let mut k4 = CVector::zeros(n);
    let mut xt = CVector::zeros(n);

    let deriv = |t: f64, state: &CVector, out: &mut CVector, a_buf: &mut CMatrix, b_buf: &mut CVector| {
        a.evaluate_into(t, a_buf);
        b.evaluate_into(t, b_buf);
        out.copy_from(b_buf);
        out.gemv(ONE, a_buf, state, ONE);
    };

    for &t_target in sample_times {
        let span = t_target - t_prev;
        if span > 0.0 {
            let steps = if total_span > 0.0 {
                ((n_total as f64) * span / total_span).ceil() as usize
            } else {
                1
            }
            .max(1);
            let h = span / steps as f64;
            let h2 = Complex64::from(h / 2.0);
            let hc = Complex64::from(h);
            let h6 = Complex64::from(h / 6.0);
            let two = Complex64::from(2.0);
            for s in 0..steps {
                let t = t_prev + s as f64 * h;
                deriv(t, &x, &mut k1, &mut a_buf, &mut b_buf);
                xt.copy_from(&x);
                xt.axpy(h2, &k1, ONE);
                deriv(t + h / 2.0, &xt, &mut k2, &mut a_buf, &mut b_buf);
                xt.copy_from(&x);
                xt.axpy(h2, &k2, ONE);
                deriv(t + h / 2.0, &xt, &mut k3, &mut a_buf, &mut b_buf);
                xt.copy_from(&x);
                xt.axpy(hc, &k3, ONE);
                deriv(t + h, &xt, &mut k4, &mut a_buf, &mut b_buf);
                // x += h/6 (k1 + 2k2 + 2k3 + k4)
                k1 += &k4;
                k2 += &k3;
                k1.axpy(two, &k2, ONE);
                x.axpy(h6, &k1, ONE);
            }
        }
        out.push(x.clone());
        t_prev = t_target;
    }
    out
}

/// Ground-truth state x(t) for the problem, via [`rk4_integrate`].
pub fn reference_solution(problem: &OdeProblem, t: f64, tol: f64) -> Result<CVector> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(OdeError::InvalidParameter(format!(
            "requested time must be nonnegative and finite, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(problem.x0.clone());
    }
    let states = rk4_integrate(&problem.a, &problem.b, &problem.x0, 0.0, &[t], tol)?;
    Ok(states.into_iter().next().expect("one sample requested"))
}

/// Ground-truth trajectory at the given ascending times in [0, T].
pub fn reference_trajectory(
    problem: &OdeProblem,
    times: &[f64],
    tol: f64,
) -> Result<Vec<CVector>> {
    rk4_integrate(&problem.a, &problem.b, &problem.x0, 0.0, times, tol)
}

/// Measured sup_t ‖x(t)‖ over a 513-point uniform grid on [0, T], padded by
/// a 5% safety factor (an estimate from the oracle trajectory, not a proven
/// bound — flagged as measured wherever it is reported).
pub fn measured_x_max(problem: &OdeProblem, tol: f64) -> Result<f64> {
    const POINTS: usize = 513;
    let times: Vec<f64> = (1..POINTS)
        .map(|i| problem.horizon * i as f64 / (POINTS - 1) as f64)
        .collect();
    let states = reference_trajectory(problem, &times, tol)?;
    let mut max = problem.x0.norm();
    for s in &states {
        max = max.max(s.norm());
    }
    Ok(max * 1.05)
}

/// Per-segment propagators V_m = W̃_K, v_m = ṽ_K for m = 1..=r.
pub fn segment_propagators(
    problem: &OdeProblem,
    grid: &TimeGrid,
    k: usize,
) -> Result<Vec<TruncatedPropagator>> {
    let horizon_err = (grid.horizon() - problem.horizon).abs();
    if horizon_err > 1e-9 * problem.horizon.max(1.0) {
        return Err(OdeError::InvalidParameter(format!(
            "grid horizon {} disagrees with problem horizon {}",
            grid.horizon(),
            problem.horizon
        )));
    }
    (1..=grid.r)
        .map(|seg| {
            let mut p = discretized_dyson(
                &problem.a,
                &problem.b,
                grid.segment_start(seg),
                grid.delta_t,
                grid.m,
                k,
            )?;
            p.segment_index = seg;
            Ok(p)
        })
        .collect()
}
