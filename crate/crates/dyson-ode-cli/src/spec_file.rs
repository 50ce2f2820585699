//! Problem-spec files: a small TOML schema describing either a built-in
//! problem or a matrix-polynomial family A(t) = A₀ + A₁·f(t),
//! b(t) = b₀ + b₁·g(t) with f, g ∈ {1, t, sin ωt, cos ωt}. Complex entries
//! are explicit [re, im] pairs; matrices are row-major lists of rows.

use serde::{Deserialize, Serialize};

use dyson_ode::linalg::{CMatrix, CVector, Complex as Complex64};
use dyson_ode::problem::{MatrixFunction, TimeProfile, VectorFunction};
use dyson_ode::{library, OdeProblem};

/// Parse/validation failure with a human-readable location where the TOML
/// parser provides one.
#[derive(Debug)]
pub struct SpecError(pub String);

impl std::fmt::Display for SpecError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for SpecError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecKind {
    Builtin,
    MatrixPolynomial,
}

/// Time dependence of a coefficient: constant, A₀ + A₁t, or a sinusoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Constant,
    Linear,
    Sin,
    Cos,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemSpec {
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// N rows of N [re, im] pairs.
    pub a0: Vec<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a1: Option<Vec<Vec<[f64; 2]>>>,
    pub b_mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_omega: Option<f64>,
    pub b0: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b1: Option<Vec<[f64; 2]>>,
    pub x0: Vec<[f64; 2]>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct LambdaSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_b: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct BoundsSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_prime_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_prime_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max_hint: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub kind: SpecKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSpec>,
}

impl ProblemSpec {
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let spec: ProblemSpec =
            toml::from_str(text).map_err(|e| SpecError(format!("spec parse error: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical TOML emission; `emit(parse(x))` is the normal form of `x`
    /// and emission is idempotent.
    pub fn emit(&self) -> Result<String, SpecError> {
        toml::to_string_pretty(self).map_err(|e| SpecError(format!("spec emit error: {e}")))
    }

    fn validate(&self) -> Result<(), SpecError> {
        match self.kind {
            SpecKind::Builtin => {
                if self.builtin.is_none() {
                    return Err(SpecError(
                        "kind = \"builtin\" requires a `builtin` name".into(),
                    ));
                }
            }
            SpecKind::MatrixPolynomial => {
                let sys = self.system.as_ref().ok_or_else(|| {
                    SpecError("kind = \"matrix-polynomial\" requires a [system] table".into())
                })?;
                let n = sys.x0.len();
                if n == 0 {
                    return Err(SpecError("x0 must be nonempty".into()));
                }
                check_matrix("a0", &sys.a0, n)?;
                if let Some(a1) = &sys.a1 {
                    check_matrix("a1", a1, n)?;
                }
                if sys.b0.len() != n {
                    return Err(SpecError(format!(
                        "b0 has length {}, expected {n}",
                        sys.b0.len()
                    )));
                }
                if let Some(b1) = &sys.b1 {
                    if b1.len() != n {
                        return Err(SpecError(format!(
                            "b1 has length {}, expected {n}",
                            b1.len()
                        )));
                    }
                }
                if sys.mode != Mode::Constant && sys.a1.is_none() {
                    return Err(SpecError(format!(
                        "mode {:?} requires an a1 matrix",
                        sys.mode
                    )));
                }
                if sys.b_mode != Mode::Constant && sys.b1.is_none() {
                    return Err(SpecError(format!(
                        "b_mode {:?} requires a b1 vector",
                        sys.b_mode
                    )));
                }
                if matches!(sys.mode, Mode::Sin | Mode::Cos) && sys.omega.is_none() {
                    return Err(SpecError("sinusoidal mode requires omega".into()));
                }
                if matches!(sys.b_mode, Mode::Sin | Mode::Cos) && sys.b_omega.is_none() {
                    return Err(SpecError("sinusoidal b_mode requires b_omega".into()));
                }
                if !(sys.horizon > 0.0 && sys.horizon.is_finite()) {
                    return Err(SpecError(format!(
                        "horizon must be positive and finite, got {}",
                        sys.horizon
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds the runtime problem this spec describes.
    pub fn to_problem(&self) -> Result<OdeProblem, SpecError> {
        match self.kind {
            SpecKind::Builtin => {
                let name = self.builtin.as_ref().expect("validated");
                library::builtin(name).map_err(|e| SpecError(e.to_string()))
            }
            SpecKind::MatrixPolynomial => {
                let sys = self.system.as_ref().expect("validated");
                let n = sys.x0.len();
                let a0 = to_cmatrix(&sys.a0, n);
                let mut a = match sys.mode {
                    Mode::Constant => MatrixFunction::constant(a0),
                    Mode::Linear => MatrixFunction::modulated(
                        a0,
                        to_cmatrix(sys.a1.as_ref().expect("validated"), n),
                        TimeProfile::Linear,
                    ),
                    Mode::Sin => MatrixFunction::modulated(
                        a0,
                        to_cmatrix(sys.a1.as_ref().expect("validated"), n),
                        TimeProfile::Sin {
                            omega: sys.omega.expect("validated"),
                        },
                    ),
                    Mode::Cos => MatrixFunction::modulated(
                        a0,
                        to_cmatrix(sys.a1.as_ref().expect("validated"), n),
                        TimeProfile::Cos {
                            omega: sys.omega.expect("validated"),
                        },
                    ),
                }
                .map_err(|e| SpecError(e.to_string()))?;
                let b0 = to_cvector(&sys.b0);
                let mut b = match sys.b_mode {
                    Mode::Constant => VectorFunction::constant(b0),
                    Mode::Linear => VectorFunction::modulated(
                        b0,
                        to_cvector(sys.b1.as_ref().expect("validated")),
                        TimeProfile::Linear,
                    ),
                    Mode::Sin => VectorFunction::modulated(
                        b0,
                        to_cvector(sys.b1.as_ref().expect("validated")),
                        TimeProfile::Sin {
                            omega: sys.b_omega.expect("validated"),
                        },
                    ),
                    Mode::Cos => VectorFunction::modulated(
                        b0,
                        to_cvector(sys.b1.as_ref().expect("validated")),
                        TimeProfile::Cos {
                            omega: sys.b_omega.expect("validated"),
                        },
                    ),
                }
                .map_err(|e| SpecError(e.to_string()))?;
                if let Some(bounds) = &self.bounds {
                    // Supplied derivative bounds override the structural
                    // ones by wrapping the evaluator.
                    if let Some(ap) = bounds.a_prime_max {
                        let horizon = sys.horizon;
                        let sup = a.sup_norm_bound(0.0, horizon);
                        let inner = a.clone();
                        a = MatrixFunction::custom(
                            n,
                            move |t, out| inner.evaluate_into(t, out),
                            sup,
                            Some(ap),
                        )
                        .map_err(|e| SpecError(e.to_string()))?;
                    }
                    if let Some(bp) = bounds.b_prime_max {
                        let horizon = sys.horizon;
                        let sup = b.sup_norm_bound(0.0, horizon);
                        let inner = b.clone();
                        b = VectorFunction::custom(
                            n,
                            move |t, out| inner.evaluate_into(t, out),
                            sup,
                            Some(bp),
                        )
                        .map_err(|e| SpecError(e.to_string()))?;
                    }
                }
                let mut problem =
                    OdeProblem::new(&self.name, a, b, to_cvector(&sys.x0), sys.horizon)
                        .map_err(|e| SpecError(e.to_string()))?;
                if let Some(lambda) = &self.lambda {
                    if let Some(la) = lambda.lambda_a {
                        problem = problem
                            .with_lambda_a(la)
                            .map_err(|e| SpecError(e.to_string()))?;
                    }
                    if let Some(lb) = lambda.lambda_b {
                        problem = problem
                            .with_lambda_b(lb)
                            .map_err(|e| SpecError(e.to_string()))?;
                    }
                }
                if let Some(bounds) = &self.bounds {
                    if let Some(xm) = bounds.x_max_hint {
                        problem = problem
                            .with_x_max_hint(xm)
                            .map_err(|e| SpecError(e.to_string()))?;
                    }
                }
                Ok(problem)
            }
        }
    }
}

fn check_matrix(label: &str, rows: &[Vec<[f64; 2]>], n: usize) -> Result<(), SpecError> {
    if rows.len() != n {
        return Err(SpecError(format!(
            "{label} has {} rows, expected {n}",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(SpecError(format!(
                "{label} row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
    }
    Ok(())
}

fn to_cmatrix(rows: &[Vec<[f64; 2]>], n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1]))
}

fn to_cvector(entries: &[[f64; 2]]) -> CVector {
    CVector::from_vec(
        entries
            .iter()
            .map(|&[re, im]| Complex64::new(re, im))
            .collect(),
    )
}

/// Resolves a CLI positional: an existing file is parsed as a spec; a bare
/// name is looked up in the builtin library.
pub fn resolve(spec_arg: &str) -> Result<OdeProblem, SpecError> {
    let path = std::path::Path::new(spec_arg);
    if path.exists() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpecError(format!("cannot read {spec_arg}: {e}")))?;
        ProblemSpec::parse(&text)?.to_problem()
    } else if library::builtin_names().contains(&spec_arg) {
        library::builtin(spec_arg).map_err(|e| SpecError(e.to_string()))
    } else {
        Err(SpecError(format!(
            "'{spec_arg}' is neither a spec file nor a builtin (available: {})",
            library::builtin_names().join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DRIVEN_SPEC: &str = r#"
name = "driven"
kind = "matrix-polynomial"

[system]
mode = "constant"
a0 = [[[0.0, 0.0], [1.0, 0.0]], [[-1.0, 0.0], [-0.5, 0.0]]]
b_mode = "cos"
b_omega = 1.0
b0 = [[0.0, 0.0], [0.0, 0.0]]
b1 = [[0.0, 0.0], [1.0, 0.0]]
x0 = [[1.0, 0.0], [0.0, 0.0]]
horizon = 2.0
"#;

    #[test]
    fn parses_and_builds_matrix_polynomial() {
        let spec = ProblemSpec::parse(DRIVEN_SPEC).unwrap();
        let p = spec.to_problem().unwrap();
        assert_eq!(p.dim(), 2);
        assert!(p.a.is_constant());
        assert!(!p.b.is_constant());
        // Matches the library's driven oscillator at a sample time.
        let lib = library::builtin("driven-oscillator").unwrap();
        let t = 0.37;
        assert!((p.b.evaluate(t) - lib.b.evaluate(t)).norm() < 1e-15);
        assert!((p.a.evaluate(t) - lib.a.evaluate(t)).norm() < 1e-15);
    }

    #[test]
    fn round_trip_is_idempotent() {
        let spec = ProblemSpec::parse(DRIVEN_SPEC).unwrap();
        let emitted = spec.emit().unwrap();
        let reparsed = ProblemSpec::parse(&emitted).unwrap();
        assert_eq!(spec, reparsed);
        assert_eq!(emitted, reparsed.emit().unwrap());
    }

    #[test]
    fn builtin_kind_and_bare_names_resolve() {
        let text = "name = \"x\"\nkind = \"builtin\"\nbuiltin = \"decay1d\"\n";
        let p = ProblemSpec::parse(text).unwrap().to_problem().unwrap();
        assert_eq!(p.name, "decay1d");
        assert_eq!(resolve("heat8").unwrap().dim(), 8);
        assert!(resolve("not-a-problem").is_err());
    }

    #[test]
    fn validation_failures_are_reported() {
        // Missing a1 for a sinusoidal mode.
        let bad = r#"
name = "bad"
kind = "matrix-polynomial"

[system]
mode = "sin"
omega = 1.0
a0 = [[[0.0, 0.0]]]
b_mode = "constant"
b0 = [[0.0, 0.0]]
x0 = [[1.0, 0.0]]
horizon = 1.0
"#;
        assert!(ProblemSpec::parse(bad).is_err());

        // Dimension mismatch.
        let bad = r#"
name = "bad"
kind = "matrix-polynomial"

[system]
mode = "constant"
a0 = [[[0.0, 0.0], [0.0, 0.0]]]
b_mode = "constant"
b0 = [[0.0, 0.0]]
x0 = [[1.0, 0.0]]
horizon = 1.0
"#;
        assert!(ProblemSpec::parse(bad).is_err());

        // TOML syntax errors carry location info.
        let err = ProblemSpec::parse("name = ").unwrap_err();
        assert!(err.0.contains("line"), "{}", err.0);
    }

    #[test]
    fn overrides_flow_through() {
        let text = r#"
name = "tuned"
kind = "matrix-polynomial"

[system]
mode = "constant"
a0 = [[[-1.0, 0.0]]]
b_mode = "constant"
b0 = [[0.5, 0.0]]
x0 = [[1.0, 0.0]]
horizon = 1.0

[lambda]
lambda_a = 2.0
lambda_b = 0.75

[bounds]
x_max_hint = 1.5
"#;
        let p = ProblemSpec::parse(text).unwrap().to_problem().unwrap();
        assert_eq!(p.lambda_a(), 2.0);
        assert_eq!(p.lambda_b(), 0.75);
        assert_eq!(p.x_max_hint, Some(1.5));
    }
}
