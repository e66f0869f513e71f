//! Limit solutions through the flow-box representation.
//!
//! For an everywhere-defined impulse control `u` the limit solution is
//! `x(t) = varphi(xi(t), -u(t))`, where `xi` solves the ordinary
//! Carathéodory system `xi' = F(t, xi, u(t), v(t))` from
//! `xi(a) = varphi(x0, u(a))`. Only the integrand of the `xi`-system sees the
//! discontinuities of `u`, so `xi` is continuous while `x` inherits exactly the
//! pointwise values of `u`.

use serde::{Deserialize, Serialize};

use crate::chart::{Chart, ChartConfig};
use crate::control::{ImpulsiveControl, OrdinaryControl};
use crate::error::{Error, Result};
use crate::integrator::{integrate, DenseTrajectory, IntegrationConfig};
use crate::system::{audit_commutativity, BoxSet, SystemSpec};

/// Numerical parameters for a limit solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub integration: IntegrationConfig,
    pub chart: ChartConfig,
}

impl SolveConfig {
    /// Every tolerance divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        SolveConfig {
            integration: self.integration.tightened(factor),
            chart: ChartConfig {
                flow_tol: self.chart.flow_tol / factor,
                ..self.chart.clone()
            },
        }
    }
}

/// Limit solution `x[x0, u, v]`, evaluable at every `t` in `[a, b]`.
#[derive(Debug, Clone)]
pub struct LimitTrajectory {
    chart: Chart,
    xi_traj: DenseTrajectory,
    u: ImpulsiveControl,
    v: OrdinaryControl,
    x_bar: Vec<f64>,
    xi_bar: Vec<f64>,
    warnings: Vec<String>,
}

impl LimitTrajectory {
    /// `x(t) = varphi(xi(t), -u(t))`, using the pointwise value `u(t)`.
    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        let xi = self.xi_traj.evaluate(t)?;
        let neg: Vec<f64> = self.u.eval(t)?.iter().map(|c| -c).collect();
        self.chart.varphi(&xi, &neg)
    }

    /// Left limit `x(t-)`; sampled one floating-point step to the left.
    pub fn left_limit(&self, t: f64) -> Result<Vec<f64>> {
        self.evaluate(t.next_down().max(self.interval_a()))
    }

    /// Right limit `x(t+)`; sampled one floating-point step to the right.
    pub fn right_limit(&self, t: f64) -> Result<Vec<f64>> {
        self.evaluate(t.next_up().min(self.xi_traj.interval().b))
    }

    fn interval_a(&self) -> f64 {
        self.xi_traj.interval().a
    }

    pub fn xi(&self, t: f64) -> Result<Vec<f64>> {
        self.xi_traj.evaluate(t)
    }

    pub fn xi_traj(&self) -> &DenseTrajectory {
        &self.xi_traj
    }

    pub fn u(&self) -> &ImpulsiveControl {
        &self.u
    }

    pub fn v(&self) -> &OrdinaryControl {
        &self.v
    }

    pub fn x_bar(&self) -> &[f64] {
        &self.x_bar
    }

    pub fn xi_bar(&self) -> &[f64] {
        &self.xi_bar
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn spec(&self) -> &SystemSpec {
        self.chart.spec()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Error estimate reported by the `xi` integration.
    pub fn error_estimate(&self) -> f64 {
        self.xi_traj.meta().error_estimate()
    }
}

/// Audits the bracket condition on the unit box around `x_bar` and returns a
/// warning message (also logged) when it fails.
pub fn commutativity_warning(spec: &SystemSpec, x_bar: &[f64]) -> Result<Option<String>> {
    if spec.m() < 2 {
        return Ok(None);
    }
    let region = BoxSet::new(
        x_bar.iter().map(|c| c - 1.0).collect(),
        x_bar.iter().map(|c| c + 1.0).collect(),
    )?;
    let report = audit_commutativity(spec, &region, 64, 1e-8)?;
    if report.passed() {
        return Ok(None);
    }
    let msg = format!(
        "impulse fields failed the commutativity audit near x0 (max bracket {:.3e}, {} domain failures); \
         the representation may not be a limit solution",
        report.max_bracket_norm,
        report.domain_failures.len()
    );
    log::warn!("{msg}");
    Ok(Some(msg))
}

/// Computes the limit solution of the impulsive Cauchy problem.
///
/// A quick commutativity audit around `x_bar` is run first; a failing audit
/// produces a warning, not an error.
pub fn limit_solve(
    spec: &SystemSpec,
    x_bar: &[f64],
    u: &ImpulsiveControl,
    v: &OrdinaryControl,
    cfg: &SolveConfig,
) -> Result<LimitTrajectory> {
    if x_bar.len() != spec.n() || u.dim() != spec.m() || v.dim() != spec.l() {
        return Err(Error::InvalidSpec(
            "dimension mismatch between system, state and controls".into(),
        ));
    }
    if u.interval() != spec.interval() || v.interval() != spec.interval() {
        return Err(Error::InvalidControl(
            "controls must live on the system interval".into(),
        ));
    }
    let ua = u.eval(spec.interval().a)?;
    if ua.as_slice() != u.value_at_a() {
        return Err(Error::InvalidControl("u(a) differs from value_at_a".into()));
    }

    let warnings: Vec<String> = commutativity_warning(spec, x_bar)?.into_iter().collect();

    let chart = Chart::new(spec, cfg.chart.clone())?;
    let xi_bar = chart.varphi(x_bar, &ua)?;
    let solve_chart = chart.clone().memoized();
    let rhs = |t: f64, xi: &[f64], uu: &[f64], vv: &[f64], out: &mut [f64]| -> Result<()> {
        solve_chart.transformed_drift_into(t, xi, uu, vv, out)
    };
    let xi_traj = integrate(rhs, &xi_bar, u, v, &cfg.integration)?;
    Ok(LimitTrajectory {
        chart,
        xi_traj,
        u: u.clone(),
        v: v.clone(),
        x_bar: x_bar.to_vec(),
        xi_bar,
        warnings,
    })
}

/// `exp(delta_1 g_1) o ... o exp(delta_m g_m)(x_hat)`, applying `g_1` first.
/// Relates limit solutions of controls that agree almost everywhere:
/// `x(t) = jump_transport(x_hat(t), u(t) - u_hat(t))`.
pub fn jump_transport(chart: &Chart, x_hat: &[f64], delta_u: &[f64]) -> Result<Vec<f64>> {
    let spec = chart.spec();
    if x_hat.len() != spec.n() || delta_u.len() != spec.m() {
        return Err(Error::InvalidSpec(
            "dimension mismatch in jump transport".into(),
        ));
    }
    let mut y = x_hat.to_vec();
    for (alpha, d) in delta_u.iter().enumerate() {
        if *d != 0.0 {
            y = chart.flow(alpha, *d, &y)?;
        }
    }
    Ok(y)
}
