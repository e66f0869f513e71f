//! Limit solutions of impulsive control systems
//!
//! ```text
//! x' = f(t, x, u, v) + sum_a g_a(x) u_a'
//! ```
//!
//! with commuting impulse fields `g_a` and merely integrable impulse controls
//! `u`. Solutions are computed through the flow-box chart `varphi`: an ordinary
//! Carathéodory system is integrated for `xi = varphi(x, u)` and the state is
//! recovered as `x(t) = varphi(xi(t), -u(t))`, which is defined at every `t`,
//! including jump times and accumulation points of jumps.
//!
//! The [`validation`] module checks that these solutions are limits of
//! classical solutions driven by absolutely continuous approximations.

pub mod chart;
pub mod control;
pub mod error;
pub mod example25;
pub mod export;
pub mod integrator;
pub mod limit;
pub mod reproduce;
mod rk;
pub mod scenarios;
pub mod simulation;
pub mod system;
pub mod validation;

pub use chart::{
    pushforward_check, Chart, ChartConfig, ChartPoint, JacobianMode, PushforwardReport,
};
pub use control::{
    AcControl, AccumulatingSequence, BreakpointStream, ImpulsiveControl, OrdinaryControl,
};
pub use error::{Error, Result};
pub use integrator::{
    classical_solve, integrate, DenseTrajectory, IntegrationConfig, TrajectoryMeta,
};
pub use limit::{commutativity_warning, jump_transport, limit_solve, LimitTrajectory, SolveConfig};
pub use scenarios::{Scenario, SolveOverrides};
pub use simulation::{Simulation, Solution};
pub use system::{
    audit_commutativity, audit_growth, lie_bracket, BoxSet, ControlSet, HypothesisReport,
    ImpulseField, Interval, SystemSpec,
};
