//! CSV trajectory tables and JSON result records.
//!
//! Floats are written in shortest round-trip form so that identical runs give
//! byte-identical files.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::integrator::TrajectoryMeta;
use crate::limit::SolveConfig;
use crate::scenarios::{Scenario, Source};
use crate::simulation::{Simulation, Solution};
use crate::system::Interval;

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// `samples + 1` uniform times on the interval. With `one_sided`, every
/// interior breakpoint also contributes the triple `(t-, t, t+)` of adjacent
/// floats so that left and right limits show up in the table.
pub fn sample_times(
    iv: Interval,
    samples: usize,
    breakpoints: &[f64],
    one_sided: bool,
) -> Vec<f64> {
    let n = samples.max(1);
    let mut times: Vec<f64> = (0..=n)
        .map(|i| iv.a + iv.length() * i as f64 / n as f64)
        .collect();
    times[n] = iv.b;
    if one_sided {
        for &t in breakpoints {
            if t > iv.a && t < iv.b {
                times.extend([t.next_down(), t, t.next_up()]);
            } else if t == iv.a {
                times.extend([t, t.next_up()]);
            } else if t == iv.b {
                times.extend([t.next_down(), t]);
            }
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Column names `prefix1 .. prefixN`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Comma-separated table with a header line.
pub fn csv_table<S: AsRef<str>>(header: &[S], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    let names: Vec<&str> = header.iter().map(AsRef::as_ref).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Columns `t, x1..xn, u1..um, v1..vl`.
pub fn trajectory_csv(sim: &Simulation, times: &[f64]) -> Result<String> {
    let mut header = vec!["t".to_string()];
    let mut rows = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let x = sim.evaluate(t)?;
        let (u, v) = sim.controls_at(t)?;
        if i == 0 {
            header.extend(numbered("x", x.len()));
            header.extend(numbered("u", u.len()));
            header.extend(numbered("v", v.len()));
        }
        let mut row = Vec::with_capacity(1 + x.len() + u.len() + v.len());
        row.push(t);
        row.extend(x);
        row.extend(u);
        row.extend(v);
        rows.push(row);
    }
    Ok(csv_table(&header, &rows))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectedCheck {
    pub label: String,
    pub t: f64,
    pub component: usize,
    pub expected: f64,
    pub got: f64,
    pub tol: f64,
    pub source: Source,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub scenario: String,
    pub controls: String,
    /// `limit` or `classical`.
    pub solver: String,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub endpoint: Vec<f64>,
    pub payoff: Option<f64>,
    pub expected: Vec<ExpectedCheck>,
    pub error_estimate: f64,
    pub meta: TrajectoryMeta,
    pub warnings: Vec<String>,
    pub config: SolveConfig,
    pub passed: bool,
}

/// Builds the result record. Expected values are checked only for the
/// scenario's default controls, and only when the run starts from the
/// scenario's own initial state.
pub fn result_record(
    scenario: &Scenario,
    sim: &Simulation,
    cfg: &SolveConfig,
) -> Result<ResultRecord> {
    let iv = sim.interval();
    let endpoint = sim.evaluate(iv.b)?;
    let mut expected = Vec::new();
    if sim.controls == scenario.default_controls().name && sim.x0 == scenario.x0 {
        for e in &scenario.expected {
            let got = sim.evaluate(e.t)?[e.component];
            expected.push(ExpectedCheck {
                label: e.label.clone(),
                t: e.t,
                component: e.component,
                expected: e.value,
                got,
                tol: e.tol,
                source: e.source,
                passed: (got - e.value).abs() <= e.tol,
            });
        }
    }
    let passed = expected.iter().all(|c| c.passed) && endpoint.iter().all(|x| x.is_finite());
    Ok(ResultRecord {
        scenario: sim.scenario.clone(),
        controls: sim.controls.clone(),
        solver: match sim.solution {
            Solution::Limit(_) => "limit",
            Solution::Classical { .. } => "classical",
        }
        .to_string(),
        x0: sim.x0.clone(),
        t_end: iv.b,
        endpoint,
        payoff: sim.payoff,
        expected,
        error_estimate: sim.error_estimate(),
        meta: sim.meta().clone(),
        warnings: sim.warnings.clone(),
        config: cfg.clone(),
        passed,
    })
}

/// Plain-text summary of a result record for terminal output.
pub fn summary(record: &ResultRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "scenario {} ({} controls, {} solver)",
        record.scenario, record.controls, record.solver
    );
    let end: Vec<String> = record.endpoint.iter().map(|&x| fmt_f64(x)).collect();
    let _ = writeln!(s, "x({}) = [{}]", fmt_f64(record.t_end), end.join(", "));
    if let Some(p) = record.payoff {
        let _ = writeln!(s, "payoff = {}", fmt_f64(p));
    }
    for c in &record.expected {
        let _ = writeln!(
            s,
            "{:<8} expected {} got {} tol {:e} {}",
            c.label,
            fmt_f64(c.expected),
            fmt_f64(c.got),
            c.tol,
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    let _ = writeln!(s, "error estimate {:e}", record.error_estimate);
    s
}
