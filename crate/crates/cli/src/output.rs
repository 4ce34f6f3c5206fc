//! Trace CSVs, summary JSON and gnuplot scripts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mines::{RunTrace, TraceRow};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const TRACE_HEADER: &str = "k,n_evals,f_value,f_gap,sigma_err_fro,eta1,eta2,stage,wall_ms";
pub const COMPARE_HEADER: &str = "algo,replicate,n_evals,f_gap";

/// 17 significant digits: enough for an exact `f64` round trip.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_float)
}

pub fn trace_row_line(row: &TraceRow<f64>, timing: bool) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        row.k,
        row.n_evals,
        fmt_float(row.f_value),
        fmt_opt(row.f_gap),
        fmt_opt(row.sigma_err_fro),
        fmt_opt(row.eta1),
        fmt_opt(row.eta2),
        row.stage,
        fmt_opt(timing.then_some(row.wall_ms)),
    )
}

pub fn trace_csv(trace: &RunTrace<f64>, timing: bool) -> String {
    let mut out = String::with_capacity(64 * (trace.rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in &trace.rows {
        out.push_str(&trace_row_line(row, timing));
        out.push('\n');
    }
    out
}

pub fn compare_csv<'a>(runs: impl IntoIterator<Item = (&'a str, usize, &'a RunTrace<f64>)>) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for (algo, replicate, trace) in runs {
        for row in &trace.rows {
            let _ = writeln!(out, "{algo},{replicate},{},{}", row.n_evals, fmt_opt(row.f_gap));
        }
    }
    out
}

/// Writes to stdout, ignoring a closed pipe.
pub fn say(text: &str) {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Mean and sample standard deviation; `None` for an empty or non-finite
/// input.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub algo: String,
    pub replicates: usize,
    pub final_f_gap_mean: Option<f64>,
    pub final_f_gap_std: Option<f64>,
    pub final_sigma_err_mean: Option<f64>,
    pub final_sigma_err_std: Option<f64>,
    pub total_queries: u64,
    pub switched_at: Vec<Option<usize>>,
    pub errors: Vec<Option<String>>,
}

impl RunSummary {
    pub fn new(algo: &str, traces: &[&RunTrace<f64>], errors: Vec<Option<String>>) -> Self {
        let finals: Vec<&TraceRow<f64>> = traces.iter().filter_map(|t| t.last()).collect();
        let gaps: Vec<f64> = finals.iter().filter_map(|r| r.f_gap).collect();
        let sigma: Vec<f64> = finals.iter().filter_map(|r| r.sigma_err_fro).collect();
        let (final_f_gap_mean, final_f_gap_std) = mean_std(&gaps);
        let (final_sigma_err_mean, final_sigma_err_std) = mean_std(&sigma);
        Self {
            algo: algo.to_string(),
            replicates: traces.len(),
            final_f_gap_mean,
            final_f_gap_std,
            final_sigma_err_mean,
            final_sigma_err_std,
            total_queries: finals.iter().map(|r| r.n_evals).sum(),
            switched_at: traces.iter().map(|t| t.switched_at).collect(),
            errors,
        }
    }
}

/// Gnuplot script drawing `column` against `n_evals` on log axes for every
/// listed trace file.
pub fn gnuplot_script(files: &[String], column: usize, label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set datafile missing 'NA'");
    let _ = writeln!(s, "set logscale y");
    let _ = writeln!(s, "set xlabel 'queries'");
    let _ = writeln!(s, "set ylabel '{label}'");
    let _ = writeln!(s, "set key outside");
    let plots: Vec<String> = files
        .iter()
        .map(|f| format!("'{f}' using 2:{column} skip 1 with lines title '{f}'"))
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}
