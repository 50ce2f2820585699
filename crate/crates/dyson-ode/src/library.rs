//! Built-in benchmark problems used by the CLI and the test suites.
//!
//! Each problem is small enough for the brute-force and dense oracles yet
//! exercises a distinct regime: pure decay, undamped-looking oscillation
//! with damping, a time-dependent drive, a moderate-dimension diffusion
//! stencil, a drive whose segment responses nearly cancel (the pathological
//! branch of the cost estimates), and an unstable coefficient that the
//! solver must refuse by default.

use num_complex::Complex64;

use crate::error::{OdeError, Result};
use crate::linalg::{CMatrix, CVector};
use crate::problem::{MatrixFunction, OdeProblem, TimeProfile, VectorFunction};

/// Names accepted by [`builtin`], in display order.
pub const BUILTIN_NAMES: [&str; 6] = [
    "decay1d",
    "oscillator",
    "driven-oscillator",
    "heat8",
    "drive-cancel",
    "unstable1d",
];

fn real_matrix(rows: usize, entries: &[f64]) -> CMatrix {
    CMatrix::from_row_slice(
        rows,
        rows,
        &entries.iter().map(|&x| Complex64::from(x)).collect::<Vec<_>>(),
    )
}

fn real_vector(entries: &[f64]) -> CVector {
    CVector::from_vec(entries.iter().map(|&x| Complex64::from(x)).collect())
}

fn oscillator_matrix() -> CMatrix {
    real_matrix(2, &[0.0, 1.0, -1.0, -0.5])
}

/// ẋ = −x, x(0) = 1, T = 1. Exact solution e^{−t}.
fn decay1d() -> Result<OdeProblem> {
    OdeProblem::new(
        "decay1d",
        MatrixFunction::constant(real_matrix(1, &[-1.0]))?,
        VectorFunction::zero(1),
        real_vector(&[1.0]),
        1.0,
    )
}

/// Damped harmonic oscillator in companion form, homogeneous, T = 2.
fn oscillator() -> Result<OdeProblem> {
    OdeProblem::new(
        "oscillator",
        MatrixFunction::constant(oscillator_matrix())?,
        VectorFunction::zero(2),
        real_vector(&[1.0, 0.0]),
        2.0,
    )
}

/// The damped oscillator forced by b(t) = (0, cos t), T = 2.
fn driven_oscillator() -> Result<OdeProblem> {
    let b = VectorFunction::modulated(
        CVector::zeros(2),
        real_vector(&[0.0, 1.0]),
        TimeProfile::Cos { omega: 1.0 },
    )?;
    OdeProblem::new(
        "driven-oscillator",
        MatrixFunction::constant(oscillator_matrix())?,
        b,
        real_vector(&[1.0, 0.0]),
        2.0,
    )
}

/// Eight-point discrete Laplacian (Dirichlet ends): tridiag(1, −2, 1),
/// x0_i = sin(iπ/9), T = 1. A smooth diffusion profile in 8 dimensions.
fn heat8() -> Result<OdeProblem> {
    let n = 8usize;
    let mut a = CMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = Complex64::from(-2.0);
        if i + 1 < n {
            a[(i, i + 1)] = Complex64::from(1.0);
            a[(i + 1, i)] = Complex64::from(1.0);
        }
    }
    let x0 = CVector::from_fn(n, |i, _| {
        Complex64::from(((i + 1) as f64 * std::f64::consts::PI / 9.0).sin())
    });
    OdeProblem::new(
        "heat8",
        MatrixFunction::constant(a)?,
        VectorFunction::zero(n),
        x0,
        1.0,
    )
}

/// Slow decay driven by b(t) = sin(πt) over T = 2: the drive integrates to
/// nearly zero over the single coarse segment, so the segment response
/// norms ‖v_m‖ collapse and the amplitude-based cost bound degenerates.
fn drive_cancel() -> Result<OdeProblem> {
    let b = VectorFunction::modulated(
        CVector::zeros(1),
        real_vector(&[1.0]),
        TimeProfile::Sin {
            omega: std::f64::consts::PI,
        },
    )?;
    OdeProblem::new(
        "drive-cancel",
        MatrixFunction::constant(real_matrix(1, &[-0.05]))?,
        b,
        real_vector(&[1.0]),
        2.0,
    )
}

/// ẋ = +x: positive logarithmic norm, rejected by the default solve path.
fn unstable1d() -> Result<OdeProblem> {
    OdeProblem::new(
        "unstable1d",
        MatrixFunction::constant(real_matrix(1, &[1.0]))?,
        VectorFunction::zero(1),
        real_vector(&[1.0]),
        1.0,
    )
}

/// Looks up a built-in problem by name.
pub fn builtin(name: &str) -> Result<OdeProblem> {
    match name {
        "decay1d" => decay1d(),
        "oscillator" => oscillator(),
        "driven-oscillator" => driven_oscillator(),
        "heat8" => heat8(),
        "drive-cancel" => drive_cancel(),
        "unstable1d" => unstable1d(),
        other => Err(OdeError::InvalidParameter(format!(
            "unknown builtin problem '{other}'; available: {}",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

/// All built-in names.
pub fn builtin_names() -> &'static [&'static str] {
    &BUILTIN_NAMES
}

/// The stable members of the library (everything except `unstable1d`).
pub fn stable_library() -> Vec<OdeProblem> {
    BUILTIN_NAMES
        .iter()
        .filter(|&&n| n != "unstable1d")
        .map(|n| builtin(n).expect("builtin library must construct"))
        .collect()
}

/// The built-ins with a nonzero drive term.
pub fn driven_library() -> Vec<OdeProblem> {
    ["driven-oscillator", "drive-cancel"]
        .iter()
        .map(|n| builtin(n).expect("builtin library must construct"))
        .collect()
}
