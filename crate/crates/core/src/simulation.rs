//! Runs a scenario with one of its control pairs, choosing the limit solver or,
//! for absolutely continuous controls, the classical solver.

use crate::control::{AcControl, ImpulsiveControl, OrdinaryControl};
use crate::error::Result;
use crate::integrator::{classical_solve, DenseTrajectory, TrajectoryMeta};
use crate::limit::{commutativity_warning, limit_solve, LimitTrajectory, SolveConfig};
use crate::scenarios::{NamedControls, Scenario};
use crate::system::Interval;

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Solution {
    Limit(LimitTrajectory),
    Classical {
        traj: DenseTrajectory,
        u: AcControl,
        v: OrdinaryControl,
    },
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: String,
    pub controls: String,
    pub x0: Vec<f64>,
    pub solution: Solution,
    pub warnings: Vec<String>,
    pub payoff: Option<f64>,
}

impl Simulation {
    pub fn run(scenario: &Scenario, controls: &NamedControls, cfg: &SolveConfig) -> Result<Self> {
        Self::run_from(scenario, &scenario.x0, controls, cfg)
    }

    pub fn run_from(
        scenario: &Scenario,
        x0: &[f64],
        controls: &NamedControls,
        cfg: &SolveConfig,
    ) -> Result<Self> {
        let (solution, warnings, payoff) = match &controls.ac {
            Some(ac) => {
                let warnings: Vec<String> = commutativity_warning(&scenario.spec, x0)?
                    .into_iter()
                    .collect();
                let traj = classical_solve(&scenario.spec, x0, ac, &controls.v, &cfg.integration)?;
                (
                    Solution::Classical {
                        traj,
                        u: ac.clone(),
                        v: controls.v.clone(),
                    },
                    warnings,
                    None,
                )
            }
            None => {
                let traj = limit_solve(&scenario.spec, x0, &controls.u, &controls.v, cfg)?;
                let payoff = scenario.payoff.map(|p| p(&traj)).transpose()?;
                let warnings = traj.warnings().to_vec();
                (Solution::Limit(traj), warnings, payoff)
            }
        };
        Ok(Simulation {
            scenario: scenario.name.clone(),
            controls: controls.name.clone(),
            x0: x0.to_vec(),
            solution,
            warnings,
            payoff,
        })
    }

    pub fn interval(&self) -> Interval {
        match &self.solution {
            Solution::Limit(t) => t.spec().interval(),
            Solution::Classical { traj, .. } => traj.interval(),
        }
    }

    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        match &self.solution {
            Solution::Limit(traj) => traj.evaluate(t),
            Solution::Classical { traj, .. } => traj.evaluate(t),
        }
    }

    /// `(u(t), v(t))`.
    pub fn controls_at(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.solution {
            Solution::Limit(traj) => Ok((traj.u().eval(t)?, traj.v().value(t).to_vec())),
            Solution::Classical { u, v, .. } => Ok((u.value(t)?, v.value(t).to_vec())),
        }
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        match &self.solution {
            Solution::Limit(traj) => traj.xi_traj().meta(),
            Solution::Classical { traj, .. } => traj.meta(),
        }
    }

    pub fn error_estimate(&self) -> f64 {
        match &self.solution {
            Solution::Limit(traj) => traj.error_estimate(),
            Solution::Classical { traj, .. } => traj.meta().error_estimate(),
        }
    }

    /// Declared jump times and accumulation points of the impulse control,
    /// plus switch times of the ordinary control, sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = match &self.solution {
            Solution::Limit(traj) => impulse_breakpoints(traj.u()),
            Solution::Classical { u, .. } => u.kinks().to_vec(),
        };
        let v = match &self.solution {
            Solution::Limit(traj) => traj.v(),
            Solution::Classical { v, .. } => v,
        };
        pts.extend_from_slice(v.switch_times());
        let iv = self.interval();
        pts.retain(|t| iv.contains(*t));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    pub fn limit(&self) -> Option<&LimitTrajectory> {
        match &self.solution {
            Solution::Limit(traj) => Some(traj),
            Solution::Classical { .. } => None,
        }
    }
}

fn impulse_breakpoints(u: &ImpulsiveControl) -> Vec<f64> {
    let stream = u.breakpoints();
    let mut pts = stream.finite.clone();
    pts.extend(stream.accumulation_points());
    pts
}
