//! Pinned reproduction cases, each a table of
//! `(quantity, expected, got, tol, verdict)` rows.

use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::example25;
use crate::export::fmt_f64;
use crate::limit::{jump_transport, limit_solve, SolveConfig};
use crate::scenarios::{self, NamedControls, Scenario, SolveOverrides};
use crate::simulation::Simulation;
use crate::system::{audit_commutativity, BoxSet};

pub const CASES: [&str; 4] = [
    "example25",
    "nullset-jump",
    "noncommutative-loop",
    "trivial",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `|got - expected| <= tol`
    Within,
    /// `got <= expected + tol`
    AtMost,
    /// `got >= expected - tol`
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproRow {
    pub quantity: String,
    pub expected: f64,
    pub got: f64,
    pub tol: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl ReproRow {
    pub fn new(
        quantity: impl Into<String>,
        expected: f64,
        got: f64,
        tol: f64,
        relation: Relation,
    ) -> Self {
        let passed = match relation {
            Relation::Within => (got - expected).abs() <= tol,
            Relation::AtMost => got <= expected + tol,
            Relation::AtLeast => got >= expected - tol,
        };
        ReproRow {
            quantity: quantity.into(),
            expected,
            got,
            tol,
            relation,
            passed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproTable {
    pub case: String,
    pub rows: Vec<ReproRow>,
    pub passed: bool,
}

impl fmt::Display for ReproTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "reproduce {}", self.case)?;
        writeln!(
            f,
            "{:<40} {:>24} {:>24} {:>9}  verdict",
            "quantity", "expected", "got", "tol"
        )?;
        for r in &self.rows {
            let expected = match r.relation {
                Relation::Within => fmt_f64(r.expected),
                Relation::AtMost => format!("<= {}", fmt_f64(r.expected)),
                Relation::AtLeast => format!(">= {}", fmt_f64(r.expected)),
            };
            writeln!(
                f,
                "{:<40} {:>24} {:>24} {:>9.1e}  {}",
                r.quantity,
                expected,
                fmt_f64(r.got),
                r.tol,
                if r.passed { "PASS" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "{}",
            if self.passed {
                "all rows pass"
            } else {
                "FAILED"
            }
        )
    }
}

fn table(case: &str, rows: Vec<ReproRow>) -> ReproTable {
    let passed = rows.iter().all(|r| r.passed);
    ReproTable {
        case: case.to_string(),
        rows,
        passed,
    }
}

/// Runs one case with the scenario's default settings adjusted by `overrides`.
pub fn reproduce(case: &str, overrides: &SolveOverrides) -> Result<ReproTable> {
    match case {
        "example25" => example25_case(overrides),
        "nullset-jump" => nullset_jump(overrides),
        "noncommutative-loop" => noncommutative_loop(overrides),
        "trivial" => trivial(overrides),
        _ => Err(Error::InvalidConfig(format!(
            "unknown reproduce case '{case}' (expected one of {})",
            CASES.join(", ")
        ))),
    }
}

fn scenario(name: &str) -> Scenario {
    scenarios::by_name(name).expect("registered scenario")
}

fn example25_case(overrides: &SolveOverrides) -> Result<ReproTable> {
    let sc = scenario("example25");
    let cfg = overrides.apply(&sc.solve);
    let traj = limit_solve(
        &sc.spec,
        &sc.x0,
        &sc.default_controls().u,
        &sc.default_controls().v,
        &cfg,
    )?;
    let (u0, v0) = example25::controls_without_translation();
    let without = limit_solve(&sc.spec, &sc.x0, &u0, &v0, &cfg)?;
    let y1 = traj.evaluate(1.0)?[1];
    let x2 = traj.evaluate(2.0)?[0];
    Ok(table(
        "example25",
        vec![
            ReproRow::new("y(1)", (-0.5f64).exp(), y1, 1e-6, Relation::Within),
            ReproRow::new("x(2)", 3.0, x2, 1e-8, Relation::Within),
            ReproRow::new(
                "payoff",
                0.0,
                example25::payoff(&traj)?,
                1e-6,
                Relation::AtMost,
            ),
            ReproRow::new(
                "payoff with u2 = 0",
                1.0,
                example25::payoff(&without)?,
                0.0,
                Relation::AtLeast,
            ),
        ],
    ))
}

fn nullset_jump(overrides: &SolveOverrides) -> Result<ReproTable> {
    let sc = scenario("example25");
    let cfg = overrides.apply(&sc.solve);
    let opt = sc.controls_named("optimal").expect("registered");
    let modified = sc.controls_named("modified").expect("registered");
    let x = limit_solve(&sc.spec, &sc.x0, &opt.u, &opt.v, &cfg)?;
    let x_hat = limit_solve(&sc.spec, &sc.x0, &modified.u, &modified.v, &cfg)?;

    let at_one = x_hat.evaluate(1.0)?;
    let delta: Vec<f64> = opt
        .u
        .eval(1.0)?
        .iter()
        .zip(modified.u.eval(1.0)?)
        .map(|(a, b)| a - b)
        .collect();
    let transported = jump_transport(x.chart(), &at_one, &delta)?;
    let transport_gap = max_abs_diff(&transported, &x.evaluate(1.0)?);

    let iv = sc.spec.interval();
    let mut agreement: f64 = 0.0;
    let mut compared = 0usize;
    for i in 0..100 {
        let t = iv.a + iv.length() * (i as f64 + 0.5) / 100.0;
        if opt.u.eval(t)? != modified.u.eval(t)? {
            continue;
        }
        compared += 1;
        agreement = agreement.max(max_abs_diff(&x.evaluate(t)?, &x_hat.evaluate(t)?));
    }
    let hat_payoff = example25::payoff(&x_hat)?;
    let gap = 0.5f64.exp() - (-0.5f64).exp();
    Ok(table(
        "nullset-jump",
        vec![
            ReproRow::new(
                "modified y(1)",
                0.5f64.exp(),
                at_one[1],
                1e-6,
                Relation::Within,
            ),
            ReproRow::new(
                "jump transport vs x(1)",
                0.0,
                transport_gap,
                1e-8,
                Relation::AtMost,
            ),
            ReproRow::new(
                "sample times compared",
                100.0,
                compared as f64,
                0.0,
                Relation::Within,
            ),
            ReproRow::new(
                "max |x - modified x| where u agrees",
                0.0,
                agreement,
                1e-8,
                Relation::AtMost,
            ),
            ReproRow::new(
                "modified payoff",
                gap * gap,
                hat_payoff,
                1e-6,
                Relation::Within,
            ),
        ],
    ))
}

fn noncommutative_loop(overrides: &SolveOverrides) -> Result<ReproTable> {
    let sc = scenario("noncommutative-loop");
    let cfg = overrides.apply(&sc.solve);
    let sim = Simulation::run(&sc, sc.default_controls(), &cfg)?;
    let end = sim.evaluate(1.0)?;
    let off_axis = audit_commutativity(&sc.spec, &sc.region, 256, 1e-8)?;
    let around_axis = audit_commutativity(&sc.spec, &BoxSet::cube(3, -1.0, 1.0)?, 256, 1e-8)?;
    Ok(table(
        "noncommutative-loop",
        vec![
            ReproRow::new("x1(1)", 1.0, end[0], 1e-6, Relation::Within),
            ReproRow::new("x2(1)", 0.0, end[1], 1e-6, Relation::Within),
            ReproRow::new("x3(1)", 2.0 * PI, end[2], 1e-6, Relation::Within),
            ReproRow::new(
                "max bracket norm off the axis",
                0.0,
                off_axis.max_bracket_norm,
                1e-8,
                Relation::AtMost,
            ),
            ReproRow::new(
                "audit failures on a box around the axis",
                1.0,
                around_axis.domain_failures.len() as f64,
                0.0,
                Relation::AtLeast,
            ),
        ],
    ))
}

fn trivial(overrides: &SolveOverrides) -> Result<ReproTable> {
    let sc = scenario("trivial");
    let cfg: SolveConfig = overrides.apply(&sc.solve);
    let NamedControls { u, v, .. } = sc.default_controls();
    let traj = limit_solve(&sc.spec, &sc.x0, u, v, &cfg)?;
    let iv = sc.spec.interval();
    let identity = sc.x0[0] + u.eval(iv.b)?[0] - u.eval(iv.a)?[0];
    Ok(table(
        "trivial",
        vec![
            ReproRow::new(
                "x(b) = x0 + u(b) - u(a)",
                identity,
                traj.evaluate(iv.b)?[0],
                1e-12,
                Relation::Within,
            ),
            ReproRow::new(
                "x(0.5-)",
                sc.x0[0],
                traj.left_limit(0.5)?[0],
                1e-12,
                Relation::Within,
            ),
            ReproRow::new(
                "x(0.5+)",
                identity,
                traj.right_limit(0.5)?[0],
                1e-12,
                Relation::Within,
            ),
        ],
    ))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
