//! Problem description: time-dependent coefficient functions `A(t)` and
//! `b(t)`, the ODE instance with its oracle normalisations (λ-values), and
//! the two-level time grid (r segments × M quadrature points).

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{OdeError, Result};
use crate::linalg::{
    matrix_is_finite, spectral_norm, vector_is_finite, CMatrix, CVector,
};

/// Slack allowed when a sampled norm is compared against a declared λ bound.
pub const LAMBDA_SLACK: f64 = 1e-9;

/// Cap on the number of strided fine-grid samples used by sampling-based
/// validation (λ checks, stability scans). Keeps validation affordable when
/// M runs into the hundreds of thousands.
pub const SAMPLE_CAP: usize = 4096;

/// Random sample times drawn per segment by sampling-based validation.
pub const RANDOM_SAMPLES_PER_SEGMENT: usize = 7;

/// Scalar modulation profile g(t) for structured time dependence
/// `F(t) = F0 + g(t)·F1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TimeProfile {
    /// g(t) = t
    Linear,
    /// g(t) = sin(ω t)
    Sin { omega: f64 },
    /// g(t) = cos(ω t)
    Cos { omega: f64 },
}

impl TimeProfile {
    pub fn value(self, t: f64) -> f64 {
        match self {
            TimeProfile::Linear => t,
            TimeProfile::Sin { omega } => (omega * t).sin(),
            TimeProfile::Cos { omega } => (omega * t).cos(),
        }
    }

    /// Upper bound on sup |g'(t)| over [t0, t1].
    pub fn derivative_sup(self, _t0: f64, _t1: f64) -> f64 {
        match self {
            TimeProfile::Linear => 1.0,
            TimeProfile::Sin { omega } | TimeProfile::Cos { omega } => omega.abs(),
        }
    }

    /// Upper bound on sup |g(t)| over [t0, t1].
    pub fn sup_abs(self, t0: f64, t1: f64) -> f64 {
        match self {
            TimeProfile::Linear => t0.abs().max(t1.abs()),
            TimeProfile::Sin { .. } | TimeProfile::Cos { .. } => 1.0,
        }
    }
}

/// Provenance of a derivative bound: exact from the structured form,
/// supplied by the caller, or estimated by finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundProvenance {
    Analytic,
    Supplied,
    Estimated,
}

type MatrixEval = Arc<dyn Fn(f64, &mut CMatrix) + Send + Sync>;
type VectorEval = Arc<dyn Fn(f64, &mut CVector) + Send + Sync>;

#[derive(Clone)]
enum MatrixForm {
    Structured {
        base: CMatrix,
        base_norm: f64,
        modulation: Option<(CMatrix, f64, TimeProfile)>,
    },
    Custom {
        eval: MatrixEval,
        sup_norm: f64,
        derivative_bound: Option<f64>,
    },
}

/// A time-dependent matrix `A(t)`, either in the structured polynomial /
/// trigonometric form `A0 + g(t)·A1` (exact norm and derivative bounds) or
/// as an arbitrary evaluator with caller-supplied bounds.
#[derive(Clone)]
pub struct MatrixFunction {
    dim: usize,
    form: MatrixForm,
}

impl MatrixFunction {
    /// Constant matrix A(t) ≡ A0.
    pub fn constant(a0: CMatrix) -> Result<Self> {
        Self::check_square(&a0)?;
        let base_norm = spectral_norm(&a0)?;
        Ok(Self {
            dim: a0.nrows(),
            form: MatrixForm::Structured {
                base: a0,
                base_norm,
                modulation: None,
            },
        })
    }

    /// Identically zero matrix of the given dimension.
    pub fn zero(dim: usize) -> Self {
        Self::constant(CMatrix::zeros(dim, dim)).expect("zero matrix is always valid")
    }

    /// Structured modulated matrix A(t) = A0 + g(t)·A1.
    pub fn modulated(a0: CMatrix, a1: CMatrix, profile: TimeProfile) -> Result<Self> {
        Self::check_square(&a0)?;
        Self::check_square(&a1)?;
        if a0.nrows() != a1.nrows() {
            return Err(OdeError::DimensionMismatch(format!(
                "base is {}x{} but modulation is {}x{}",
                a0.nrows(),
                a0.ncols(),
                a1.nrows(),
                a1.ncols()
            )));
        }
        let base_norm = spectral_norm(&a0)?;
        let mod_norm = spectral_norm(&a1)?;
        Ok(Self {
            dim: a0.nrows(),
            form: MatrixForm::Structured {
                base: a0,
                base_norm,
                modulation: Some((a1, mod_norm, profile)),
            },
        })
    }

    /// Arbitrary evaluator. The closure receives a zeroed matrix and must
    /// fill it in. `sup_norm` must upper-bound sup_t ‖A(t)‖ over the horizon
    /// the function will be used on; `derivative_bound`, if given, must
    /// upper-bound sup_t ‖A'(t)‖. Absent derivative bounds are estimated by
    /// finite differences when requested and flagged as such.
    pub fn custom(
        dim: usize,
        eval: impl Fn(f64, &mut CMatrix) + Send + Sync + 'static,
        sup_norm: f64,
        derivative_bound: Option<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(OdeError::InvalidParameter("dimension must be positive".into()));
        }
        if !sup_norm.is_finite() || sup_norm < 0.0 {
            return Err(OdeError::InvalidParameter(
                "custom matrix sup_norm must be finite and nonnegative".into(),
            ));
        }
        if let Some(d) = derivative_bound {
            if !d.is_finite() || d < 0.0 {
                return Err(OdeError::InvalidParameter(
                    "custom matrix derivative_bound must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(Self {
            dim,
            form: MatrixForm::Custom {
                eval: Arc::new(eval),
                sup_norm,
                derivative_bound,
            },
        })
    }

    fn check_square(m: &CMatrix) -> Result<()> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(OdeError::DimensionMismatch(format!(
                "coefficient matrix must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !matrix_is_finite(m) {
            return Err(OdeError::NonFinite("coefficient matrix entries".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes A(t) into `out` (which must be N×N).
    pub fn evaluate_into(&self, t: f64, out: &mut CMatrix) {
        debug_assert_eq!(out.nrows(), self.dim);
        debug_assert_eq!(out.ncols(), self.dim);
        match &self.form {
            MatrixForm::Structured { base, modulation, .. } => {
                out.copy_from(base);
                if let Some((a1, _, profile)) = modulation {
                    let g = Complex64::from(profile.value(t));
                    for (o, m) in out.iter_mut().zip(a1.iter()) {
                        *o += m * g;
                    }
                }
            }
            MatrixForm::Custom { eval, .. } => {
                out.fill(Complex64::new(0.0, 0.0));
                eval(t, out);
            }
        }
    }

    pub fn evaluate(&self, t: f64) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        self.evaluate_into(t, &mut out);
        out
    }

    /// True when the function is known (structurally) to be constant in t.
    /// Custom evaluators are conservatively treated as time dependent.
    pub fn is_constant(&self) -> bool {
        match &self.form {
            MatrixForm::Structured { modulation, .. } => match modulation {
                None => true,
                Some((_, norm, _)) => *norm == 0.0,
            },
            MatrixForm::Custom { .. } => false,
        }
    }

    /// The constant value, when [`Self::is_constant`] holds.
    pub fn constant_value(&self) -> Option<&CMatrix> {
        match &self.form {
            MatrixForm::Structured { base, modulation, .. } => match modulation {
                None => Some(base),
                Some((_, norm, _)) if *norm == 0.0 => Some(base),
                _ => None,
            },
            MatrixForm::Custom { .. } => None,
        }
    }

    /// Rigorous upper bound on sup ‖A(t)‖ over [t0, t1] (triangle inequality
    /// for structured forms; the caller-declared bound for custom forms).
    pub fn sup_norm_bound(&self, t0: f64, t1: f64) -> f64 {
        match &self.form {
            MatrixForm::Structured {
                base_norm,
                modulation,
                ..
            } => match modulation {
                None => *base_norm,
                Some((_, mod_norm, profile)) => {
                    base_norm + mod_norm * profile.sup_abs(t0, t1)
                }
            },
            MatrixForm::Custom { sup_norm, .. } => *sup_norm,
        }
    }

    /// Upper bound on sup ‖A'(t)‖ over [t0, t1], with provenance. Structured
    /// forms are exact; custom forms use the supplied bound or, failing
    /// that, a safety-padded finite-difference estimate.
    pub fn derivative_bound(&self, t0: f64, t1: f64) -> Result<(f64, BoundProvenance)> {
        match &self.form {
            MatrixForm::Structured { modulation, .. } => Ok(match modulation {
                None => (0.0, BoundProvenance::Analytic),
                Some((_, mod_norm, profile)) => {
                    (mod_norm * profile.derivative_sup(t0, t1), BoundProvenance::Analytic)
                }
            }),
            MatrixForm::Custom {
                derivative_bound, ..
            } => match derivative_bound {
                Some(d) => Ok((*d, BoundProvenance::Supplied)),
                None => {
                    let est = self.estimate_derivative_fd(t0, t1)?;
                    Ok((est, BoundProvenance::Estimated))
                }
            },
        }
    }

    fn estimate_derivative_fd(&self, t0: f64, t1: f64) -> Result<f64> {
        const POINTS: usize = 65;
        let span = (t1 - t0).abs().max(1e-12);
        let h = span * 1e-6;
        let mut a = CMatrix::zeros(self.dim, self.dim);
        let mut b = CMatrix::zeros(self.dim, self.dim);
        let mut max_rate = 0.0f64;
        for i in 0..POINTS {
            let t = t0 + span * (i as f64) / ((POINTS - 1) as f64);
            self.evaluate_into(t, &mut a);
            self.evaluate_into(t + h, &mut b);
            b -= &a;
            let rate = spectral_norm(&b)? / h;
            max_rate = max_rate.max(rate);
        }
        // Padding for curvature between sample points; an estimate, not a proof.
        Ok(max_rate * 1.25)
    }
}

#[derive(Clone)]
enum VectorForm {
    Structured {
        base: CVector,
        base_norm: f64,
        modulation: Option<(CVector, f64, TimeProfile)>,
    },
    Custom {
        eval: VectorEval,
        sup_norm: f64,
        derivative_bound: Option<f64>,
    },
}

/// A time-dependent vector `b(t)`, mirroring [`MatrixFunction`].
#[derive(Clone)]
pub struct VectorFunction {
    dim: usize,
    form: VectorForm,
}

impl VectorFunction {
    pub fn constant(b0: CVector) -> Result<Self> {
        Self::check(&b0)?;
        let base_norm = b0.norm();
        Ok(Self {
            dim: b0.len(),
            form: VectorForm::Structured {
                base: b0,
                base_norm,
                modulation: None,
            },
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(CVector::zeros(dim)).expect("zero vector is always valid")
    }

    pub fn modulated(b0: CVector, b1: CVector, profile: TimeProfile) -> Result<Self> {
        Self::check(&b0)?;
        Self::check(&b1)?;
        if b0.len() != b1.len() {
            return Err(OdeError::DimensionMismatch(format!(
                "drive base has length {} but modulation has length {}",
                b0.len(),
                b1.len()
            )));
        }
        let base_norm = b0.norm();
        let mod_norm = b1.norm();
        Ok(Self {
            dim: b0.len(),
            form: VectorForm::Structured {
                base: b0,
                base_norm,
                modulation: Some((b1, mod_norm, profile)),
            },
        })
    }

    pub fn custom(
        dim: usize,
        eval: impl Fn(f64, &mut CVector) + Send + Sync + 'static,
        sup_norm: f64,
        derivative_bound: Option<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(OdeError::InvalidParameter("dimension must be positive".into()));
        }
        if !sup_norm.is_finite() || sup_norm < 0.0 {
            return Err(OdeError::InvalidParameter(
                "custom vector sup_norm must be finite and nonnegative".into(),
            ));
        }
        if let Some(d) = derivative_bound {
            if !d.is_finite() || d < 0.0 {
                return Err(OdeError::InvalidParameter(
                    "custom vector derivative_bound must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(Self {
            dim,
            form: VectorForm::Custom {
                eval: Arc::new(eval),
                sup_norm,
                derivative_bound,
            },
        })
    }

    fn check(v: &CVector) -> Result<()> {
        if v.is_empty() {
            return Err(OdeError::DimensionMismatch(
                "drive vector must be nonempty".into(),
            ));
        }
        if !vector_is_finite(v) {
            return Err(OdeError::NonFinite("drive vector entries".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn evaluate_into(&self, t: f64, out: &mut CVector) {
        debug_assert_eq!(out.len(), self.dim);
        match &self.form {
            VectorForm::Structured { base, modulation, .. } => {
                out.copy_from(base);
                if let Some((b1, _, profile)) = modulation {
                    let g = Complex64::from(profile.value(t));
                    for (o, m) in out.iter_mut().zip(b1.iter()) {
                        *o += m * g;
                    }
                }
            }
            VectorForm::Custom { eval, .. } => {
                out.fill(Complex64::new(0.0, 0.0));
                eval(t, out);
            }
        }
    }

    pub fn evaluate(&self, t: f64) -> CVector {
        let mut out = CVector::zeros(self.dim);
        self.evaluate_into(t, &mut out);
        out
    }

    pub fn is_constant(&self) -> bool {
        match &self.form {
            VectorForm::Structured { modulation, .. } => match modulation {
                None => true,
                Some((_, norm, _)) => *norm == 0.0,
            },
            VectorForm::Custom { .. } => false,
        }
    }

    pub fn constant_value(&self) -> Option<&CVector> {
        match &self.form {
            VectorForm::Structured { base, modulation, .. } => match modulation {
                None => Some(base),
                Some((_, norm, _)) if *norm == 0.0 => Some(base),
                _ => None,
            },
            VectorForm::Custom { .. } => None,
        }
    }

    /// True when the function is identically zero (structurally).
    pub fn is_zero(&self) -> bool {
        match self.constant_value() {
            Some(v) => v.iter().all(|c| c.re == 0.0 && c.im == 0.0),
            None => false,
        }
    }

    pub fn sup_norm_bound(&self, t0: f64, t1: f64) -> f64 {
        match &self.form {
            VectorForm::Structured {
                base_norm,
                modulation,
                ..
            } => match modulation {
                None => *base_norm,
                Some((_, mod_norm, profile)) => base_norm + mod_norm * profile.sup_abs(t0, t1),
            },
            VectorForm::Custom { sup_norm, .. } => *sup_norm,
        }
    }

    pub fn derivative_bound(&self, t0: f64, t1: f64) -> Result<(f64, BoundProvenance)> {
        match &self.form {
            VectorForm::Structured { modulation, .. } => Ok(match modulation {
                None => (0.0, BoundProvenance::Analytic),
                Some((_, mod_norm, profile)) => {
                    (mod_norm * profile.derivative_sup(t0, t1), BoundProvenance::Analytic)
                }
            }),
            VectorForm::Custom {
                derivative_bound, ..
            } => match derivative_bound {
                Some(d) => Ok((*d, BoundProvenance::Supplied)),
                None => {
                    let est = self.estimate_derivative_fd(t0, t1)?;
                    Ok((est, BoundProvenance::Estimated))
                }
            },
        }
    }

    fn estimate_derivative_fd(&self, t0: f64, t1: f64) -> Result<f64> {
        const POINTS: usize = 65;
        let span = (t1 - t0).abs().max(1e-12);
        let h = span * 1e-6;
        let mut a = CVector::zeros(self.dim);
        let mut b = CVector::zeros(self.dim);
        let mut max_rate = 0.0f64;
        for i in 0..POINTS {
            let t = t0 + span * (i as f64) / ((POINTS - 1) as f64);
            self.evaluate_into(t, &mut a);
            self.evaluate_into(t + h, &mut b);
            b -= &a;
            max_rate = max_rate.max(b.norm() / h);
        }
        Ok(max_rate * 1.25)
    }
}

/// Two-level time grid: the horizon splits into `r` segments of width
/// `delta_t`, each subdivided into `m` quadrature points of width
/// `delta_t_small = delta_t / m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub r: usize,
    pub delta_t: f64,
    pub m: usize,
    pub delta_t_small: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, r: usize, m: usize) -> Result<Self> {
        if r == 0 || m == 0 {
            return Err(OdeError::InvalidParameter(
                "time grid needs r ≥ 1 and m ≥ 1".into(),
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(OdeError::InvalidParameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        let delta_t = horizon / r as f64;
        Ok(Self {
            r,
            delta_t,
            m,
            delta_t_small: delta_t / m as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.delta_t * self.r as f64
    }

    /// Start time of segment `seg` ∈ 1..=r.
    pub fn segment_start(&self, seg: usize) -> f64 {
        debug_assert!((1..=self.r).contains(&seg));
        (seg - 1) as f64 * self.delta_t
    }

    /// Left-endpoint quadrature time t_j inside segment `seg`, j ∈ 0..m.
    pub fn fine_time(&self, seg: usize, j: usize) -> f64 {
        self.segment_start(seg) + j as f64 * self.delta_t_small
    }
}

/// Result of sampling-based λ validation.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaValidation {
    pub max_norm_a_sampled: f64,
    pub max_norm_b_sampled: f64,
    pub samples: usize,
}

/// A complete ODE instance: ẋ = A(t)x + b(t), x(0) = x0, on [0, T], together
/// with the oracle normalisations λ_A ≥ sup‖A‖, λ_b ≥ sup‖b‖, λ_x = ‖x0‖.
#[derive(Clone)]
pub struct OdeProblem {
    pub name: String,
    pub a: MatrixFunction,
    pub b: VectorFunction,
    pub x0: CVector,
    pub horizon: f64,
    lambda_a: f64,
    lambda_b: f64,
    lambda_x: f64,
    pub x_max_hint: Option<f64>,
}

impl OdeProblem {
    /// Builds a problem with λ-values defaulted from the rigorous sup-norm
    /// bounds of the coefficient functions (λ_x is always ‖x0‖).
    pub fn new(
        name: impl Into<String>,
        a: MatrixFunction,
        b: VectorFunction,
        x0: CVector,
        horizon: f64,
    ) -> Result<Self> {
        if a.dim() != b.dim() || a.dim() != x0.len() {
            return Err(OdeError::DimensionMismatch(format!(
                "A is {}-dimensional, b is {}-dimensional, x0 is {}-dimensional",
                a.dim(),
                b.dim(),
                x0.len()
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(OdeError::InvalidParameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if !vector_is_finite(&x0) {
            return Err(OdeError::NonFinite("initial vector x0".into()));
        }
        let lambda_a = a.sup_norm_bound(0.0, horizon);
        let lambda_b = b.sup_norm_bound(0.0, horizon);
        let lambda_x = x0.norm();
        Ok(Self {
            name: name.into(),
            a,
            b,
            x0,
            horizon,
            lambda_a,
            lambda_b,
            lambda_x,
            x_max_hint: None,
        })
    }

    /// Overrides λ_A. Must still dominate the sampled sup norm (checked by
    /// [`Self::validate_lambdas`]; a quick 64-point screen runs here).
    pub fn with_lambda_a(mut self, lambda_a: f64) -> Result<Self> {
        if !(lambda_a.is_finite() && lambda_a >= 0.0) {
            return Err(OdeError::InvalidParameter(
                "lambda_a override must be finite and nonnegative".into(),
            ));
        }
        let sampled = self.quick_max_norm_a(64);
        if lambda_a + LAMBDA_SLACK < sampled {
            return Err(OdeError::Precondition(format!(
                "lambda_a override {lambda_a} is below the sampled sup ‖A(t)‖ = {sampled}"
            )));
        }
        self.lambda_a = lambda_a;
        Ok(self)
    }

    /// Overrides λ_b, with the same screening as [`Self::with_lambda_a`].
    pub fn with_lambda_b(mut self, lambda_b: f64) -> Result<Self> {
        if !(lambda_b.is_finite() && lambda_b >= 0.0) {
            return Err(OdeError::InvalidParameter(
                "lambda_b override must be finite and nonnegative".into(),
            ));
        }
        let sampled = self.quick_max_norm_b(64);
        if lambda_b + LAMBDA_SLACK < sampled {
            return Err(OdeError::Precondition(format!(
                "lambda_b override {lambda_b} is below the sampled sup ‖b(t)‖ = {sampled}"
            )));
        }
        self.lambda_b = lambda_b;
        Ok(self)
    }

    pub fn with_x_max_hint(mut self, x_max: f64) -> Result<Self> {
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(OdeError::InvalidParameter(
                "x_max_hint must be finite and positive".into(),
            ));
        }
        self.x_max_hint = Some(x_max);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn lambda_a(&self) -> f64 {
        self.lambda_a
    }

    pub fn lambda_b(&self) -> f64 {
        self.lambda_b
    }

    pub fn lambda_x(&self) -> f64 {
        self.lambda_x
    }

    /// True when both A and b are structurally constant in time.
    pub fn is_time_independent(&self) -> bool {
        self.a.is_constant() && self.b.is_constant()
    }

    fn quick_max_norm_a(&self, samples: usize) -> f64 {
        let mut buf = CMatrix::zeros(self.dim(), self.dim());
        let mut max = 0.0f64;
        for i in 0..samples {
            let t = self.horizon * (i as f64) / ((samples - 1).max(1) as f64);
            self.a.evaluate_into(t, &mut buf);
            if let Ok(n) = spectral_norm(&buf) {
                max = max.max(n);
            }
        }
        max
    }

    fn quick_max_norm_b(&self, samples: usize) -> f64 {
        let mut buf = CVector::zeros(self.dim());
        let mut max = 0.0f64;
        for i in 0..samples {
            let t = self.horizon * (i as f64) / ((samples - 1).max(1) as f64);
            self.b.evaluate_into(t, &mut buf);
            max = max.max(buf.norm());
        }
        max
    }

    /// Spot-checks the λ invariants by sampling ‖A(t)‖ and ‖b(t)‖ on a
    /// strided fine grid (capped at [`SAMPLE_CAP`] points) plus
    /// [`RANDOM_SAMPLES_PER_SEGMENT`] seeded random times per segment.
    /// Errors with [`OdeError::Precondition`] if a sampled norm exceeds the
    /// declared λ by more than [`LAMBDA_SLACK`]. A spot check, not a proof.
    pub fn validate_lambdas(&self, grid: &TimeGrid, seed: u64) -> Result<LambdaValidation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a_buf = CMatrix::zeros(self.dim(), self.dim());
        let mut b_buf = CVector::zeros(self.dim());
        let mut max_a = 0.0f64;
        let mut max_b = 0.0f64;
        let mut samples = 0usize;

        let total_fine = grid.r.saturating_mul(grid.m);
        let stride = total_fine.div_ceil(SAMPLE_CAP).max(1);
        let mut idx = 0usize;
        while idx < total_fine {
            let seg = idx / grid.m + 1;
            let j = idx % grid.m;
            let t = grid.fine_time(seg, j);
            self.a.evaluate_into(t, &mut a_buf);
            if !matrix_is_finite(&a_buf) {
                return Err(OdeError::NonFinite(format!("A({t}) has non-finite entries")));
            }
            max_a = max_a.max(spectral_norm(&a_buf)?);
            self.b.evaluate_into(t, &mut b_buf);
            if !vector_is_finite(&b_buf) {
                return Err(OdeError::NonFinite(format!("b({t}) has non-finite entries")));
            }
            max_b = max_b.max(b_buf.norm());
            samples += 1;
            idx += stride;
        }

        let seg_stride = grid.r.div_ceil(SAMPLE_CAP / RANDOM_SAMPLES_PER_SEGMENT.max(1)).max(1);
        let mut seg = 1usize;
        while seg <= grid.r {
            for _ in 0..RANDOM_SAMPLES_PER_SEGMENT {
                let t = grid.segment_start(seg) + rng.random_range(0.0..1.0) * grid.delta_t;
                self.a.evaluate_into(t, &mut a_buf);
                max_a = max_a.max(spectral_norm(&a_buf)?);
                self.b.evaluate_into(t, &mut b_buf);
                max_b = max_b.max(b_buf.norm());
                samples += 1;
            }
            seg += seg_stride;
        }

        if max_a > self.lambda_a + LAMBDA_SLACK {
            return Err(OdeError::Precondition(format!(
                "sampled ‖A(t)‖ = {max_a} exceeds declared lambda_a = {}",
                self.lambda_a
            )));
        }
        if max_b > self.lambda_b + LAMBDA_SLACK {
            return Err(OdeError::Precondition(format!(
                "sampled ‖b(t)‖ = {max_b} exceeds declared lambda_b = {}",
                self.lambda_b
            )));
        }
        Ok(LambdaValidation {
            max_norm_a_sampled: max_a,
            max_norm_b_sampled: max_b,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cm(entries: &[f64], n: usize) -> CMatrix {
        CMatrix::from_row_slice(
            n,
            n,
            &entries.iter().map(|&x| Complex64::from(x)).collect::<Vec<_>>(),
        )
    }

    #[test]
    fn structured_evaluation_and_bounds() {
        // A(t) = A0 + sin(2t)·A1
        let a0 = cm(&[0.0, 1.0, -1.0, -0.5], 2);
        let a1 = cm(&[0.0, 0.5, -0.5, 0.0], 2);
        let f = MatrixFunction::modulated(a0.clone(), a1.clone(), TimeProfile::Sin { omega: 2.0 })
            .unwrap();
        let t = 0.3f64;
        let expected = &a0 + &a1 * Complex64::from((2.0 * t).sin());
        assert_relative_eq!(
            crate::linalg::max_abs_diff(&f.evaluate(t), &expected),
            0.0,
            epsilon = 1e-15
        );
        assert!(!f.is_constant());
        // sup bound: ‖A0‖ + ‖A1‖, derivative bound: 2‖A1‖, both analytic.
        let n0 = spectral_norm(&a0).unwrap();
        let n1 = spectral_norm(&a1).unwrap();
        assert_relative_eq!(f.sup_norm_bound(0.0, 1.0), n0 + n1, epsilon = 1e-12);
        let (d, prov) = f.derivative_bound(0.0, 1.0).unwrap();
        assert_relative_eq!(d, 2.0 * n1, epsilon = 1e-12);
        assert_eq!(prov, BoundProvenance::Analytic);
    }

    #[test]
    fn custom_derivative_bound_is_estimated_when_absent() {
        // A(t) = [[sin t]]: sup‖A'‖ = 1 on [0, 1].
        let f = MatrixFunction::custom(
            1,
            |t, out| out[(0, 0)] = Complex64::from(t.sin()),
            1.0,
            None,
        )
        .unwrap();
        let (d, prov) = f.derivative_bound(0.0, 1.0).unwrap();
        assert_eq!(prov, BoundProvenance::Estimated);
        assert!((0.99..=1.3).contains(&d), "estimate {d} should bracket cos(0)=1");
    }

    #[test]
    fn time_grid_invariants() {
        let g = TimeGrid::new(2.0, 4, 8).unwrap();
        assert_relative_eq!(g.delta_t * g.r as f64, 2.0, epsilon = 1e-15);
        assert_relative_eq!(g.delta_t_small * g.m as f64, g.delta_t, epsilon = 1e-15);
        assert_relative_eq!(g.fine_time(2, 3), 0.5 + 3.0 * 0.0625, epsilon = 1e-15);
        assert!(TimeGrid::new(2.0, 0, 8).is_err());
    }

    #[test]
    fn problem_defaults_and_lambda_validation() {
        let a = MatrixFunction::constant(cm(&[0.0, 1.0, -1.0, -0.5], 2)).unwrap();
        let b = VectorFunction::modulated(
            CVector::zeros(2),
            CVector::from_vec(vec![Complex64::from(0.0), Complex64::from(1.0)]),
            TimeProfile::Cos { omega: 1.0 },
        )
        .unwrap();
        let x0 = CVector::from_vec(vec![Complex64::from(1.0), Complex64::from(0.0)]);
        let p = OdeProblem::new("driven", a, b, x0, 2.0).unwrap();
        let expected_la = ((2.25 + 1.0625f64.sqrt()) / 2.0).sqrt();
        assert_relative_eq!(p.lambda_a(), expected_la, epsilon = 1e-12);
        assert_relative_eq!(p.lambda_b(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.lambda_x(), 1.0, epsilon = 1e-15);
        assert!(!p.is_time_independent());

        let grid = TimeGrid::new(2.0, 3, 16).unwrap();
        let v = p.validate_lambdas(&grid, 1234).unwrap();
        assert!(v.max_norm_a_sampled <= p.lambda_a() + 1e-9);

        // An undersized override must be rejected.
        let p2 = p.clone().with_lambda_b(0.5);
        assert!(p2.is_err());
    }
}
