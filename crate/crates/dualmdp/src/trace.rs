//! Per-iteration solver traces and their CSV serialization.

use serde::{Deserialize, Serialize};

/// One record of an iterative solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub gap_or_residual: f64,
    pub step_size: f64,
}

/// Iteration history of a solver run. Iterate indices are strictly
/// increasing; `converged` and `reason` describe how the run ended.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    pub reason: String,
}

impl SolveTrace {
    pub fn new() -> Self {
        SolveTrace::default()
    }

    /// Appends a row; panics if the iterate index does not increase.
    pub fn push(&mut self, iter: usize, objective: f64, gap_or_residual: f64, step_size: f64) {
        if let Some(last) = self.rows.last() {
            assert!(iter > last.iter, "trace iterate indices must increase");
        }
        self.rows.push(TraceRow {
            iter,
            objective,
            gap_or_residual,
            step_size,
        });
    }

    pub fn finish(&mut self, converged: bool, reason: impl Into<String>) {
        self.converged = converged;
        self.reason = reason.into();
    }

    /// CSV with the fixed column contract `iter,objective,gap_or_residual,step_size`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,objective,gap_or_residual,step_size\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.iter,
                fmt_sig12(row.objective),
                fmt_sig12(row.gap_or_residual),
                fmt_sig12(row.step_size)
            ));
        }
        out
    }
}

/// Formats a float with 12 significant digits, deterministically.
pub fn fmt_sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    format!("{:.11e}", x)
}
