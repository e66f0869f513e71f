//! Carathéodory integration of `y' = rhs(t, y, u(t), v(t))` where the
//! right-hand side is smooth in `y` but only measurable in `t` through the
//! controls.
//!
//! Time is cut at every resolved control breakpoint and no step straddles a
//! cut. Inside a segment the controls are sampled strictly in the open
//! segment, i.e. the integrand uses the right limit at the left end and the
//! left limit at the right end; values on the measure-zero set of
//! breakpoints never enter the integral. Around accumulation points of
//! breakpoints the control is frozen over an `eps_accumulation` gap and a
//! bound on the resulting error is recorded.

use serde::{Deserialize, Serialize};

use crate::control::{AcControl, FrozenGap, ImpulsiveControl, OrdinaryControl};
use crate::error::{Error, Result};
use crate::rk::{self, Dopri5, StepController, Tolerance, DENSE_BLOCKS};
use crate::system::{Interval, SystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Radius around accumulation points inside which breakpoints are not
    /// resolved.
    pub eps_accumulation: f64,
    pub max_steps: usize,
    /// Also require the midpoint defect of each step's continuous extension
    /// to pass the tolerance test. Costs one extra right-hand side evaluation
    /// per step and keeps the error controlled across kinks of Lipschitz
    /// right-hand sides.
    #[serde(default = "default_defect_control")]
    pub defect_control: bool,
}

fn default_defect_control() -> bool {
    true
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            rtol: 1e-10,
            atol: 1e-10,
            eps_accumulation: 1e-6,
            max_steps: 20_000_000,
            defect_control: true,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self, interval: Interval) -> Result<()> {
        if !(self.rtol > 0.0
            && self.atol > 0.0
            && self.eps_accumulation > 0.0
            && self.max_steps > 0)
        {
            return Err(Error::InvalidConfig(
                "tolerances, eps_accumulation and max_steps must be positive".into(),
            ));
        }
        if self.eps_accumulation >= interval.length() / 10.0 {
            return Err(Error::InvalidConfig(format!(
                "eps_accumulation {} must be below (b - a) / 10",
                self.eps_accumulation
            )));
        }
        Ok(())
    }

    /// All tolerances (and the truncation radius) divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        IntegrationConfig {
            rtol: self.rtol / factor,
            atol: self.atol / factor,
            eps_accumulation: self.eps_accumulation / factor,
            ..self.clone()
        }
    }

    fn tolerance(&self) -> Tolerance {
        Tolerance {
            rtol: self.rtol,
            atol: self.atol,
        }
    }
}

/// Error bound for one frozen gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRecord {
    pub start: f64,
    pub end: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub rtol: f64,
    pub atol: f64,
    pub eps_accumulation: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evals: usize,
    pub breakpoints_processed: usize,
    /// Sum over accepted steps of the largest component of the embedded
    /// (fourth-order) error estimate.
    pub local_error_sum: f64,
    pub truncation: Vec<TruncationRecord>,
    pub truncation_bound: f64,
}

impl TrajectoryMeta {
    /// Reported error estimate: accumulated local errors plus truncation bounds.
    pub fn error_estimate(&self) -> f64 {
        self.local_error_sum + self.truncation_bound
    }
}

/// Continuous dense-output solution.
#[derive(Debug, Clone)]
pub struct DenseTrajectory {
    dim: usize,
    interval: Interval,
    /// Accepted step boundaries, `mesh[0] = a`, last `= b`.
    mesh: Vec<f64>,
    coeffs: Vec<f64>,
    meta: TrajectoryMeta,
}

impl DenseTrajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.evaluate_into(t, &mut out)?;
        Ok(out)
    }

    pub fn evaluate_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.interval.check(t)?;
        let steps = self.mesh.len() - 1;
        let i = self.mesh[..steps]
            .partition_point(|s| *s <= t)
            .clamp(1, steps)
            - 1;
        let h = self.mesh[i + 1] - self.mesh[i];
        let theta = if h > 0.0 {
            ((t - self.mesh[i]) / h).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let block = DENSE_BLOCKS * self.dim;
        rk::dense_eval(
            &self.coeffs[i * block..(i + 1) * block],
            self.dim,
            theta,
            out,
        );
        Ok(())
    }

    pub fn final_state(&self) -> Vec<f64> {
        self.evaluate(self.interval.b)
            .expect("b lies in the interval")
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    t0: f64,
    t1: f64,
    frozen: bool,
}

impl Segment {
    /// Time at which controls are sampled for an integrand evaluation at `t`.
    fn control_time(&self, t: f64) -> f64 {
        let lo = self.t0.next_up();
        if self.frozen {
            return lo;
        }
        let hi = self.t1.next_down();
        if lo > hi {
            0.5 * (self.t0 + self.t1)
        } else {
            t.clamp(lo, hi)
        }
    }
}

fn plan_segments(interval: Interval, points: &[f64], gaps: &[FrozenGap]) -> Vec<Segment> {
    let mut cuts: Vec<f64> = vec![interval.a, interval.b];
    cuts.extend(
        points
            .iter()
            .copied()
            .filter(|t| *t > interval.a && *t < interval.b),
    );
    for g in gaps {
        cuts.push(g.start);
        cuts.push(g.end);
    }
    cuts.retain(|t| *t >= interval.a && *t <= interval.b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let frozen = gaps.iter().any(|g| mid > g.start && mid < g.end);
            Segment {
                t0: w[0],
                t1: w[1],
                frozen,
            }
        })
        .collect()
}

/// Core stepping loop. `rhs(t, control_time, y, out)`.
fn run_segments<R>(
    rhs: &mut R,
    y0: &[f64],
    interval: Interval,
    segments: &[Segment],
    cfg: &IntegrationConfig,
) -> Result<DenseTrajectory>
where
    R: FnMut(f64, f64, &[f64], &mut [f64]) -> Result<()>,
{
    let dim = y0.len();
    let tol = cfg.tolerance();
    let mut stepper = Dopri5::new(dim);
    let mut ctl = StepController::default();
    let mut y = y0.to_vec();
    let mut mesh = vec![interval.a];
    let mut coeffs: Vec<f64> = Vec::new();
    let mut block = vec![0.0; DENSE_BLOCKS * dim];
    let mut meta = TrajectoryMeta {
        rtol: cfg.rtol,
        atol: cfg.atol,
        eps_accumulation: cfg.eps_accumulation,
        ..Default::default()
    };
    let mut h_carry: Option<f64> = None;

    for seg in segments {
        let len = seg.t1 - seg.t0;
        let mut t = seg.t0;
        let mut f = |s: f64, yy: &[f64], out: &mut [f64]| -> Result<()> {
            rhs(s, seg.control_time(s), yy, out)
        };
        f(t, &y, stepper.first_slope_mut())?;
        meta.rhs_evals += 1;
        let mut h = match h_carry {
            Some(h) => h.min(len),
            None => {
                let f0 = stepper.first_slope().to_vec();
                meta.rhs_evals += 1;
                rk::initial_step(&mut f, t, &y, &f0, len, tol)?
            }
        };
        let hmin = 16.0 * f64::EPSILON * seg.t0.abs().max(seg.t1.abs()).max(1.0);
        loop {
            if meta.accepted_steps >= cfg.max_steps {
                return Err(Error::MaxStepsExceeded {
                    t,
                    steps: meta.accepted_steps,
                });
            }
            let planned = h;
            let last = t + h >= seg.t1 || seg.t1 - (t + h) <= hmin;
            if last {
                h = seg.t1 - t;
            }
            let mut attempt = stepper.attempt(&mut f, t, &y, h, tol)?;
            meta.rhs_evals += 6;
            let mut finite = attempt.norm.is_finite() && stepper.ynew.iter().all(|v| v.is_finite());
            if finite && cfg.defect_control {
                let defect = stepper.midpoint_defect(&mut f, t, &y, h, tol)?;
                meta.rhs_evals += 1;
                finite = defect.norm.is_finite();
                attempt.norm = attempt.norm.max(defect.norm);
                attempt.abs = attempt.abs.max(defect.abs);
            }
            if !finite {
                meta.rejected_steps += 1;
                h *= 0.25;
                if h < hmin {
                    return Err(Error::NonFinite { t });
                }
                continue;
            }
            let forced = h <= hmin;
            let (accepted, hnew) = ctl.propose(attempt.norm, h);
            if accepted || forced {
                stepper.dense_coefficients(&y, h, &mut block);
                coeffs.extend_from_slice(&block);
                y.copy_from_slice(&stepper.ynew);
                stepper.promote_last_slope();
                meta.accepted_steps += 1;
                meta.local_error_sum += attempt.abs;
                t = if last { seg.t1 } else { t + h };
                mesh.push(t);
                if last {
                    h_carry = Some(if h < planned { hnew.max(planned) } else { hnew });
                    break;
                }
                h = hnew;
            } else {
                meta.rejected_steps += 1;
                h = hnew;
                if h < hmin {
                    return Err(Error::StepSizeUnderflow { t });
                }
            }
        }
    }
    Ok(DenseTrajectory {
        dim,
        interval,
        mesh,
        coeffs,
        meta,
    })
}

/// Integrates `y' = rhs(t, y, u(t), v(t))` on the control interval.
///
/// `rhs(t, y, u, v, out)`.
pub fn integrate<R>(
    rhs: R,
    y0: &[f64],
    u: &ImpulsiveControl,
    v: &OrdinaryControl,
    cfg: &IntegrationConfig,
) -> Result<DenseTrajectory>
where
    R: Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) -> Result<()>,
{
    let interval = u.interval();
    if v.interval() != interval {
        return Err(Error::InvalidControl(
            "u and v are defined on different intervals".into(),
        ));
    }
    cfg.validate(interval)?;
    let resolved = u.breakpoints().resolve(interval, cfg.eps_accumulation)?;
    let mut points = resolved.points.clone();
    points.extend_from_slice(v.switch_times());
    let segments = plan_segments(interval, &points, &resolved.gaps);

    let mut ubuf = vec![0.0; u.dim()];
    let mut wrapped = |t: f64, tc: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        u.eval_into(tc, &mut ubuf)?;
        rhs(t, y, &ubuf, v.value(tc), out)
    };
    let mut traj = run_segments(&mut wrapped, y0, interval, &segments, cfg)?;
    traj.meta.breakpoints_processed = points.len();

    // Frozen gaps: bound the integrand change over admissible u values.
    let corners = u.u_box().corners();
    let mut total = 0.0;
    for gap in &resolved.gaps {
        let seg = Segment {
            t0: gap.start,
            t1: gap.end,
            frozen: true,
        };
        let tc = seg.control_time(gap.start);
        let y = traj.evaluate(gap.start)?;
        let frozen_u = u.eval(tc)?;
        let vv = v.value(tc);
        let mut base = vec![0.0; y.len()];
        rhs(gap.start, &y, &frozen_u, vv, &mut base)?;
        let mut other = vec![0.0; y.len()];
        let mut spread = 0.0f64;
        for c in &corners {
            rhs(gap.start, &y, c, vv, &mut other)?;
            spread = spread.max(crate::chart::max_abs_diff(&base, &other));
        }
        let bound = 2.0 * spread * (gap.end - gap.start);
        total += bound;
        traj.meta.truncation.push(TruncationRecord {
            start: gap.start,
            end: gap.end,
            bound,
        });
    }
    traj.meta.truncation_bound = total;
    Ok(traj)
}

/// Integrates the system classically for an absolutely continuous `u`:
/// `x' = f(t, x, u, v) + sum_a g_a(x) u_a'`.
pub fn classical_solve(
    spec: &SystemSpec,
    x0: &[f64],
    u: &AcControl,
    v: &OrdinaryControl,
    cfg: &IntegrationConfig,
) -> Result<DenseTrajectory> {
    let interval = spec.interval();
    if u.interval() != interval || v.interval() != interval {
        return Err(Error::InvalidControl(
            "controls must live on the system interval".into(),
        ));
    }
    if x0.len() != spec.n() || u.dim() != spec.m() || v.dim() != spec.l() {
        return Err(Error::InvalidSpec(
            "dimension mismatch between system, state and controls".into(),
        ));
    }
    u.check_in(spec.u_box())?;
    cfg.validate(interval)?;
    let mut points: Vec<f64> = u.kinks().to_vec();
    points.extend_from_slice(v.switch_times());
    let segments = plan_segments(interval, &points, &[]);

    let (n, m) = (spec.n(), spec.m());
    let mut uval = vec![0.0; m];
    let mut udot = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut rhs = |t: f64, tc: f64, x: &[f64], out: &mut [f64]| -> Result<()> {
        u.value_into(t, &mut uval);
        u.derivative_into(tc, &mut udot);
        spec.drift(t, x, &uval, v.value(tc), out)?;
        for (alpha, field) in spec.fields().iter().enumerate() {
            if udot[alpha] != 0.0 {
                field.eval(x, &mut g)?;
                for i in 0..n {
                    out[i] += g[i] * udot[alpha];
                }
            }
        }
        Ok(())
    };
    let mut traj = run_segments(&mut rhs, x0, interval, &segments, cfg)?;
    traj.meta.breakpoints_processed = points.len();
    Ok(traj)
}
