//! Report emission: deterministic JSON (fixed field order, every float at
//! 17 significant digits) and the CSV side files. Given identical inputs
//! the bytes are identical run to run, so reports can be diffed and each
//! run is reproducible from its own parameter echo.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use dyson_ode::analysis::ErrorReport;
use dyson_ode::encoding::ConditionReport;
use dyson_ode::linalg::CVector;
use dyson_ode::problem::TimeGrid;
use dyson_ode::resources::{LambdaLedger, ResourceEstimate};
use dyson_ode::solver::{AmplitudeReport, SolutionHistory};

pub const SCHEMA_VERSION: u32 = 1;

/// Formats every float with 17 significant digits (`{:.16e}`), which
/// round-trips f64 exactly and is byte-stable.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_json(value: &Value, indent: usize, out: &mut String) {
    const PAD: &str = "  ";
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(f) = n.as_f64().filter(|_| n.is_f64()) {
                out.push_str(&format_f64(f));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"))
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                out.push_str(&PAD.repeat(indent + 1));
                write_json(item, indent + 1, out);
            }
            out.push('\n');
            out.push_str(&PAD.repeat(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (key, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                out.push_str(&PAD.repeat(indent + 1));
                out.push_str(
                    &serde_json::to_string(key).expect("string serialization is infallible"),
                );
                out.push_str(": ");
                write_json(item, indent + 1, out);
            }
            out.push('\n');
            out.push_str(&PAD.repeat(indent));
            out.push('}');
        }
    }
}

/// Serializes any report structure to the canonical JSON text.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    let v = serde_json::to_value(value).map_err(|e| format!("serialization failed: {e}"))?;
    let mut out = String::new();
    write_json(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// A complex vector as explicit [re, im] pairs for the JSON reports.
pub fn complex_pairs(v: &CVector) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemEcho {
    pub name: String,
    pub dim: usize,
    pub horizon: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub lambda_x: f64,
    pub x_max: f64,
    /// "hint" when supplied by the spec, "measured" when taken from the
    /// reference trajectory (with its 1.05 safety factor).
    pub x_max_source: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridEcho {
    pub r: usize,
    pub delta_t: f64,
    pub m: usize,
    pub delta_t_small: f64,
}

impl GridEcho {
    pub fn from_grid(grid: &TimeGrid) -> Self {
        GridEcho {
            r: grid.r,
            delta_t: grid.delta_t,
            m: grid.m,
            delta_t_small: grid.delta_t_small,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParameterEcho {
    pub epsilon: f64,
    pub k: usize,
    pub grid: GridEcho,
    pub seed: u64,
    pub allow_unstable: bool,
    /// Which of r/k/m were forced by flags rather than selected.
    pub overrides: Vec<String>,
}

/// The solve-command report. Field order is the file order.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub problem: ProblemEcho,
    pub parameters: ParameterEcho,
    pub lambda_ledger: LambdaLedger,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resource_estimate: Option<ResourceEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resource_warning: Option<String>,
    pub condition_report: ConditionReport,
    pub amplitude_report: AmplitudeReport,
    pub error_report: ErrorReport,
    pub residual_norm: f64,
    pub final_state: Vec<[f64; 2]>,
    pub oracle_final_state: Vec<[f64; 2]>,
    pub d_bw: f64,
    pub d_bw_target: f64,
    pub verified: bool,
}

/// One bound-vs-measured comparison row for bounds.csv.
#[derive(Debug, Clone)]
pub struct BoundRow {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl BoundRow {
    pub fn checked(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        BoundRow {
            name: name.into(),
            measured,
            bound,
            pass: measured <= bound,
        }
    }

    pub fn with_pass(name: impl Into<String>, measured: f64, bound: f64, pass: bool) -> Self {
        BoundRow {
            name: name.into(),
            measured,
            bound,
            pass,
        }
    }
}

pub fn write_bounds_csv(path: &Path, rows: &[BoundRow]) -> Result<(), String> {
    let mut text = String::from("name,measured,bound,pass\n");
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.name,
            format_f64(row.measured),
            format_f64(row.bound),
            row.pass
        ));
    }
    write_text(path, &text)
}

/// history.csv: one row per block index with the time stamp, the [re, im]
/// components, and the norm.
pub fn write_history_csv(
    path: &Path,
    grid: &TimeGrid,
    history: &SolutionHistory,
) -> Result<(), String> {
    let n = history.final_state.len();
    let mut text = String::from("block,time");
    for i in 0..n {
        text.push_str(&format!(",re_{i},im_{i}"));
    }
    text.push_str(",norm\n");
    for (m, state) in history.states.iter().enumerate() {
        let time = grid.delta_t * m.min(grid.r) as f64;
        text.push_str(&format!("{m},{}", format_f64(time)));
        for z in state.iter() {
            text.push_str(&format!(",{},{}", format_f64(z.re), format_f64(z.im)));
        }
        text.push_str(&format!(",{}\n", format_f64(state.norm())));
    }
    write_text(path, &text)
}

/// Renders the amplitude numbers in a solve summary to stdout.
pub fn print_solve_summary(report: &RunReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "solve {}: r={} K={} M={} epsilon={:.3e}",
        report.problem.name,
        report.parameters.grid.r,
        report.parameters.k,
        report.parameters.grid.m,
        report.parameters.epsilon
    )?;
    writeln!(
        out,
        "  d_BW = {:.6e} (target {:.6e}) -> {}",
        report.d_bw,
        report.d_bw_target,
        if report.verified { "PASS" } else { "FAIL" }
    )?;
    writeln!(
        out,
        "  budget pass = {}, residual = {:.3e}, stable = {}",
        report.error_report.epsilon_budget.pass, report.residual_norm, report.error_report.stable
    )?;
    Ok(())
}
