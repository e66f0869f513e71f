//! Built-in scenarios: systems with initial data, named control pairs,
//! expected values and default numerical settings.

use std::f64::consts::PI;

use serde::Serialize;

use crate::control::{AcControl, ImpulsiveControl, OrdinaryControl};
use crate::error::Result;
use crate::example25;
use crate::integrator::IntegrationConfig;
use crate::limit::{LimitTrajectory, SolveConfig};
use crate::system::{BoxSet, ControlSet, ImpulseField, SystemSpec};

/// Where an expected value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// Published value of the worked problem.
    Published,
    /// Closed form worked out by hand.
    ClosedForm,
    /// Immediate from the definitions.
    Definition,
}

/// Expected value of one state component at one time.
#[derive(Debug, Clone, Serialize)]
pub struct Expected {
    pub label: String,
    pub t: f64,
    pub component: usize,
    pub value: f64,
    pub tol: f64,
    pub source: Source,
}

impl Expected {
    fn new(label: &str, t: f64, component: usize, value: f64, tol: f64, source: Source) -> Self {
        Expected {
            label: label.to_string(),
            t,
            component,
            value,
            tol,
            source,
        }
    }
}

/// A named control pair. When `ac` is present the scenario is driven through
/// the classical solver with that absolutely continuous control.
#[derive(Debug, Clone)]
pub struct NamedControls {
    pub name: String,
    pub u: ImpulsiveControl,
    pub v: OrdinaryControl,
    pub ac: Option<AcControl>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub spec: SystemSpec,
    pub x0: Vec<f64>,
    /// First entry is the default pair.
    pub controls: Vec<NamedControls>,
    pub expected: Vec<Expected>,
    /// State region where hypotheses and charts are audited.
    pub region: BoxSet,
    pub solve: SolveConfig,
    /// Whether the impulse fields commute (false only for demonstrations).
    pub commuting: bool,
    /// Scalar cost of a computed trajectory, when the scenario defines one.
    pub payoff: Option<fn(&LimitTrajectory) -> Result<f64>>,
}

impl Scenario {
    pub fn default_controls(&self) -> &NamedControls {
        &self.controls[0]
    }

    pub fn controls_named(&self, name: &str) -> Option<&NamedControls> {
        self.controls.iter().find(|c| c.name == name)
    }
}

/// Command-line style adjustments to a scenario's numerical settings.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveOverrides {
    /// Replaces the integrator `rtol`/`atol` and the flow tolerance.
    pub tol: Option<f64>,
    pub eps_accumulation: Option<f64>,
}

impl SolveOverrides {
    pub fn apply(&self, base: &SolveConfig) -> SolveConfig {
        let mut cfg = base.clone();
        if let Some(tol) = self.tol {
            cfg.integration.rtol = tol;
            cfg.integration.atol = tol;
            cfg.chart.flow_tol = tol;
        }
        if let Some(eps) = self.eps_accumulation {
            cfg.integration.eps_accumulation = eps;
        }
        cfg
    }
}

pub const NAMES: [&str; 6] = [
    "trivial",
    "scalar-exp",
    "scalar-drift",
    "example25",
    "polar",
    "noncommutative-loop",
];

/// Scenarios whose impulse fields commute.
pub const COMMUTING: [&str; 5] = [
    "trivial",
    "scalar-exp",
    "scalar-drift",
    "example25",
    "polar",
];

pub fn by_name(name: &str) -> Option<Scenario> {
    Some(match name {
        "trivial" => trivial(),
        "scalar-exp" => scalar_exp(),
        "scalar-drift" => scalar_drift(),
        "example25" => example25(),
        "polar" => polar(),
        "noncommutative-loop" => noncommutative_loop(),
        _ => return None,
    })
}

pub fn all() -> Vec<Scenario> {
    NAMES
        .iter()
        .map(|n| by_name(n).expect("registered"))
        .collect()
}

fn pair(name: &str, u: ImpulsiveControl, v: OrdinaryControl) -> NamedControls {
    NamedControls {
        name: name.to_string(),
        u,
        v,
        ac: None,
    }
}

fn single_jump(spec: &SystemSpec, at: f64) -> ImpulsiveControl {
    ImpulsiveControl::piecewise_constant(
        spec.u_box().clone(),
        spec.interval(),
        vec![at],
        vec![vec![0.0], vec![1.0]],
        Vec::new(),
    )
    .expect("valid jump control")
}

/// `x' = u'` on `[0, 1]`: the limit solution is `x0 + u(t) - u(0)`.
pub fn trivial() -> Scenario {
    let spec = SystemSpec::builder("trivial", 1)
        .interval(0.0, 1.0)
        .field(ImpulseField::new(
            "unit",
            |_, o| o[0] = 1.0,
            |_, j| j[0] = 0.0,
        ))
        .impulse_box(BoxSet::cube(1, -2.0, 2.0).expect("box"))
        .growth_constant(2.0)
        .build()
        .expect("valid system");
    let iv = spec.interval();
    let u = single_jump(&spec, 0.5);
    Scenario {
        name: "trivial".into(),
        description: "x' = u' with a unit jump at t = 1/2".into(),
        x0: vec![0.5],
        controls: vec![pair("jump", u, OrdinaryControl::none(iv))],
        expected: vec![
            Expected::new("x(1)", 1.0, 0, 1.5, 1e-12, Source::Definition),
            Expected::new(
                "x(1/2-)",
                0.5f64.next_down(),
                0,
                0.5,
                1e-12,
                Source::Definition,
            ),
        ],
        region: BoxSet::cube(1, -3.0, 3.0).expect("box"),
        solve: SolveConfig::default(),
        commuting: true,
        payoff: None,
        spec,
    }
}

/// `x' = x u'`: the limit solution is `x0 exp(u(t) - u(0))`.
pub fn scalar_exp() -> Scenario {
    let spec = SystemSpec::builder("scalar-exp", 1)
        .interval(0.0, 1.0)
        .field(ImpulseField::new(
            "scaling",
            |x, o| o[0] = x[0],
            |_, j| j[0] = 1.0,
        ))
        .impulse_box(BoxSet::cube(1, -1.0, 1.0).expect("box"))
        .growth_constant(2.0)
        .build()
        .expect("valid system");
    let iv = spec.interval();
    let u = single_jump(&spec, 0.5);
    let e = 1f64.exp();
    Scenario {
        name: "scalar-exp".into(),
        description: "x' = x u' with a unit jump at t = 1/2".into(),
        x0: vec![1.0],
        controls: vec![pair("jump", u, OrdinaryControl::none(iv))],
        expected: vec![
            Expected::new("x(1)", 1.0, 0, e, 1e-9, Source::ClosedForm),
            Expected::new("x(1/2)", 0.5, 0, e, 1e-9, Source::ClosedForm),
            Expected::new("x(1/4)", 0.25, 0, 1.0, 1e-9, Source::ClosedForm),
        ],
        region: BoxSet::cube(1, -3.0, 3.0).expect("box"),
        solve: SolveConfig::default(),
        commuting: true,
        payoff: None,
        spec,
    }
}

/// `x' = x v + x u'` with a bang-bang `v`: `x(t) = x0 exp(int v + u(t) - u(0))`.
pub fn scalar_drift() -> Scenario {
    let spec = SystemSpec::builder("scalar-drift", 1)
        .interval(0.0, 1.0)
        .drift(|_, x, _, v, o| o[0] = x[0] * v[0])
        .field(ImpulseField::new(
            "scaling",
            |x, o| o[0] = x[0],
            |_, j| j[0] = 1.0,
        ))
        .impulse_box(BoxSet::cube(1, -1.0, 1.0).expect("box"))
        .ordinary_set(ControlSet::Finite(vec![vec![0.0], vec![1.0]]))
        .growth_constant(2.0)
        .build()
        .expect("valid system");
    let iv = spec.interval();
    let u = ImpulsiveControl::piecewise_constant(
        spec.u_box().clone(),
        iv,
        vec![0.3],
        vec![vec![0.0], vec![1.0]],
        Vec::new(),
    )
    .expect("valid control");
    let v = OrdinaryControl::new(iv, vec![0.0, 0.6], vec![vec![1.0], vec![0.0]], spec.v_set())
        .expect("valid control");
    Scenario {
        name: "scalar-drift".into(),
        description: "x' = x v + x u', jump at t = 0.3, v switches off at t = 0.6".into(),
        x0: vec![1.0],
        controls: vec![pair("jump", u, v)],
        expected: vec![
            Expected::new("x(1)", 1.0, 0, 1.6f64.exp(), 1e-8, Source::ClosedForm),
            Expected::new("x(0.2)", 0.2, 0, 0.2f64.exp(), 1e-8, Source::ClosedForm),
        ],
        region: BoxSet::cube(1, -3.0, 3.0).expect("box"),
        solve: SolveConfig::default(),
        commuting: true,
        payoff: None,
        spec,
    }
}

/// The minimum problem whose optimal control jumps infinitely often near `t = 1`.
pub fn example25() -> Scenario {
    let spec = example25::system();
    let (u, v) = example25::optimal_controls();
    let (w, _) = example25::modified_controls();
    let y1 = (-0.5f64).exp();
    Scenario {
        name: "example25".into(),
        description: "three-state minimum problem with accumulating jumps at t = 1".into(),
        x0: example25::initial_state(),
        controls: vec![pair("optimal", u, v.clone()), pair("modified", w, v)],
        expected: vec![
            Expected::new("y(1)", 1.0, 1, y1, 1e-6, Source::Published),
            Expected::new("x(1)", 1.0, 0, 1.0, 1e-8, Source::Published),
            Expected::new("x(2)", 2.0, 0, 3.0, 1e-8, Source::Published),
            Expected::new("y(2)", 2.0, 1, y1, 1e-6, Source::ClosedForm),
            Expected::new("w(2)", 2.0, 2, 0.0, 1e-6, Source::Published),
        ],
        region: BoxSet::new(vec![-1.0, 0.05, -1.0], vec![4.0, 3.0, 1.0]).expect("box"),
        solve: SolveConfig {
            integration: IntegrationConfig {
                eps_accumulation: EXAMPLE25_EPS,
                ..IntegrationConfig::default()
            },
            ..SolveConfig::default()
        },
        commuting: true,
        payoff: Some(example25::payoff),
        spec,
    }
}

/// Accumulation cutoff used by the worked example's default settings. Each
/// processed breakpoint costs one full step of chart evaluations, so the
/// library default of `1e-6` (a million segments) is reserved for explicit
/// requests; the computed values do not depend on it.
pub const EXAMPLE25_EPS: f64 = 1e-4;

/// Planar system with commuting scaling and rotation fields and a nonlinear
/// controlled drift. No closed form; used for consistency checks.
pub fn polar() -> Scenario {
    let spec = SystemSpec::builder("polar", 2)
        .interval(0.0, 1.0)
        .drift(|_, x, u, v, o| {
            o[0] = -0.5 * x[0] + v[0];
            o[1] = x[0].sin() - 0.3 * x[1] + 0.2 * u[0];
        })
        .field(ImpulseField::new(
            "scaling",
            |x, o| o.copy_from_slice(x),
            |_, j| j.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]),
        ))
        .field(ImpulseField::new(
            "rotation",
            |x, o| {
                o[0] = -x[1];
                o[1] = x[0];
            },
            |_, j| j.copy_from_slice(&[0.0, -1.0, 1.0, 0.0]),
        ))
        .impulse_box(BoxSet::new(vec![-0.5, -1.5], vec![0.5, 1.5]).expect("box"))
        .ordinary_set(ControlSet::Box(BoxSet::cube(1, -1.0, 1.0).expect("box")))
        .growth_constant(4.0)
        .build()
        .expect("valid system");
    let iv = spec.interval();
    let u = ImpulsiveControl::piecewise_constant(
        spec.u_box().clone(),
        iv,
        vec![0.25, 0.6],
        vec![vec![0.0, 0.0], vec![0.4, 1.2], vec![-0.3, -0.7]],
        vec![(0.8, vec![0.5, 1.5])],
    )
    .expect("valid control");
    let v = OrdinaryControl::new(
        iv,
        vec![0.0, 0.4],
        vec![vec![0.5], vec![-0.8]],
        spec.v_set(),
    )
    .expect("valid control");
    Scenario {
        name: "polar".into(),
        description: "planar scaling and rotation impulses with a nonlinear drift".into(),
        x0: vec![1.0, 0.5],
        controls: vec![pair("switching", u, v)],
        expected: Vec::new(),
        region: BoxSet::cube(2, -3.0, 3.0).expect("box"),
        solve: SolveConfig::default(),
        commuting: true,
        payoff: None,
        spec,
    }
}

/// Fields `(1, 0, -x2/r^2)` and `(0, 1, x1/r^2)`: their bracket vanishes off
/// the axis `r = 0`, yet the loop `u = (cos 2 pi t, sin 2 pi t)` winds the third
/// coordinate by `2 pi`.
pub fn noncommutative_loop() -> Scenario {
    let spec = SystemSpec::builder("noncommutative-loop", 3)
        .interval(0.0, 1.0)
        .field(ImpulseField::new(
            "winding-1",
            |x, o| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                o[0] = 1.0;
                o[1] = 0.0;
                o[2] = -x[1] / r2;
            },
            |x, j| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let r4 = r2 * r2;
                j.fill(0.0);
                j[6] = 2.0 * x[0] * x[1] / r4;
                j[7] = (x[1] * x[1] - x[0] * x[0]) / r4;
            },
        ))
        .field(ImpulseField::new(
            "winding-2",
            |x, o| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                o[0] = 0.0;
                o[1] = 1.0;
                o[2] = x[0] / r2;
            },
            |x, j| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let r4 = r2 * r2;
                j.fill(0.0);
                j[6] = (x[1] * x[1] - x[0] * x[0]) / r4;
                j[7] = -2.0 * x[0] * x[1] / r4;
            },
        ))
        .impulse_box(BoxSet::cube(2, -1.0, 1.0).expect("box"))
        .growth_constant(4.0)
        .build()
        .expect("valid system");
    let iv = spec.interval();
    let ac = AcControl::smooth(
        iv,
        2,
        |t, o| {
            o[0] = (2.0 * PI * t).cos();
            o[1] = (2.0 * PI * t).sin();
        },
        |t, o| {
            o[0] = -2.0 * PI * (2.0 * PI * t).sin();
            o[1] = 2.0 * PI * (2.0 * PI * t).cos();
        },
        Vec::new(),
    );
    let u = ImpulsiveControl::from_ac(&ac, spec.u_box().clone()).expect("loop stays in U");
    Scenario {
        name: "noncommutative-loop".into(),
        description: "loop control on fields with vanishing bracket around a singular axis".into(),
        x0: vec![1.0, 0.0, 0.0],
        controls: vec![NamedControls {
            name: "loop".into(),
            u,
            v: OrdinaryControl::none(iv),
            ac: Some(ac),
        }],
        expected: vec![
            Expected::new("x1(1)", 1.0, 0, 1.0, 1e-6, Source::Published),
            Expected::new("x2(1)", 1.0, 1, 0.0, 1e-6, Source::Published),
            Expected::new("x3(1)", 1.0, 2, 2.0 * PI, 1e-6, Source::Published),
        ],
        region: BoxSet::new(vec![0.5, -0.5, -1.0], vec![1.5, 0.5, 1.0]).expect("box"),
        solve: SolveConfig::default(),
        commuting: false,
        payoff: None,
        spec,
    }
}
