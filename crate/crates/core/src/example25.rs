//! Minimum-time style example with infinitely many jumps.
//!
//! Dynamics on `[0, 2]` with state `(x, y, w)`:
//!
//! ```text
//! x' = 1 + u2',   y' = y v + y u1',   w' = d((x, y), R),   (x, y, w)(0) = (0, 1, 0)
//! ```
//!
//! with `u = (u1, u2) in [-1, 1] x [0, 1]` and `v in {0, 1}`. The impulse field
//! of `u1` is `(0, y, 0)`, the one of `u2` is `(1, 0, 0)`; they commute. The
//! target set `R` is the graph of `e^x` on `[0, 1/2)`, alternating plateaus at
//! heights `e^{-3/2}` and `e^{1/2}` on `[1 - 1/j, 1 - 1/(j+1))`, the point
//! `(1, e^{-1/2})` and the segment `[2, 3] x {e^{-1/2}}`.
//!
//! The payoff `w(2) + (y(1) - e^{-1/2})^2 + (x(2) - 3)^2` is nonnegative and
//! vanishes along the optimal control built by [`optimal_controls`].

use crate::control::{AccumulatingSequence, BreakpointStream, ImpulsiveControl, OrdinaryControl};
use crate::error::Result;
use crate::limit::LimitTrajectory;
use crate::system::{BoxSet, ControlSet, ImpulseField, Interval, SystemSpec};

const LOW: f64 = -1.5; // plateau exponent on even cells
const HIGH: f64 = 0.5; // plateau exponent on odd cells

fn plateau_low() -> f64 {
    LOW.exp()
}

fn plateau_high() -> f64 {
    HIGH.exp()
}

/// Breakpoint `1 - 1/j`, computed the same way everywhere.
pub fn cell_start(j: u64) -> f64 {
    1.0 - 1.0 / j as f64
}

/// Index `j >= 1` with `t in [1 - 1/j, 1 - 1/(j+1))`, for `t in [0, 1)`.
pub fn cell_index(t: f64) -> u64 {
    debug_assert!((0.0..1.0).contains(&t));
    // Largest j with cell_start(j) <= t. Near 1 the rounded breakpoints are
    // flat over huge index ranges, so bracket and bisect instead of stepping.
    let guess = (1.0 / (1.0 - t)).floor();
    let mut lo = if guess.is_finite() && guess >= 1.0 {
        guess as u64
    } else {
        1
    };
    let mut step = 1u64;
    while lo > 1 && t < cell_start(lo) {
        lo = lo.saturating_sub(step).max(1);
        step *= 2;
    }
    let mut hi = lo + 1;
    step = 1;
    while t >= cell_start(hi) {
        lo = hi;
        hi = hi.saturating_add(step);
        step *= 2;
    }
    // Invariant: cell_start(lo) <= t < cell_start(hi).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if cell_start(mid) <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// The system with its declared growth constant `A = 4`.
pub fn system() -> SystemSpec {
    SystemSpec::builder("example25", 3)
        .interval(0.0, 2.0)
        .drift(|_, x, _, v, out| {
            out[0] = 1.0;
            out[1] = x[1] * v[0];
            out[2] = distance_to_target(x[0], x[1]);
        })
        .field(ImpulseField::new(
            "y-scaling",
            |x, o| {
                o[0] = 0.0;
                o[1] = x[1];
                o[2] = 0.0;
            },
            |_, j| {
                j.fill(0.0);
                j[4] = 1.0;
            },
        ))
        .field(ImpulseField::new(
            "x-translation",
            |_, o| o.copy_from_slice(&[1.0, 0.0, 0.0]),
            |_, j| j.fill(0.0),
        ))
        .impulse_box(BoxSet::new(vec![-1.0, 0.0], vec![1.0, 1.0]).expect("valid box"))
        .ordinary_set(ControlSet::Finite(vec![vec![0.0], vec![1.0]]))
        .growth_constant(4.0)
        .build()
        .expect("valid system")
}

pub fn initial_state() -> Vec<f64> {
    vec![0.0, 1.0, 0.0]
}

fn u_value(t: f64, out: &mut [f64]) {
    out[0] = if t < 1.0 {
        if cell_index(t) % 2 == 1 {
            1.0
        } else {
            -1.0
        }
    } else {
        0.0
    };
    out[1] = if t <= 1.0 { 0.0 } else { 1.0 };
}

/// The optimal pair `(u, v)`: `u1 = (-1)^{j+1}` on `[1 - 1/j, 1 - 1/(j+1))`,
/// `u1 = 0` on `[1, 2]`, `u2 = 0` on `[0, 1]`, `u2 = 1` on `(1, 2]`,
/// `v = 1` on `[0, 1/2)` and `0` afterwards.
pub fn optimal_controls() -> (ImpulsiveControl, OrdinaryControl) {
    let spec = system();
    let iv = spec.interval();
    let stream = BreakpointStream::finite(vec![1.0])
        .with_sequence(AccumulatingSequence::new(2, 1.0, cell_start));
    let u = ImpulsiveControl::new(spec.u_box().clone(), iv, u_value, stream, vec![1.0, 0.0])
        .expect("valid control");
    let v = OrdinaryControl::new(iv, vec![0.0, 0.5], vec![vec![1.0], vec![0.0]], spec.v_set())
        .expect("valid ordinary control");
    (u, v)
}

/// The optimal control modified at the single instant `t = 1` (`u1(1) = 1`).
pub fn modified_controls() -> (ImpulsiveControl, OrdinaryControl) {
    let (u, v) = optimal_controls();
    (
        u.with_point_values(vec![(1.0, vec![1.0, 0.0])])
            .expect("valid override"),
        v,
    )
}

/// The optimal pair with the translation impulse removed (`u2 = 0`), so that
/// `x(2) = 2`.
pub fn controls_without_translation() -> (ImpulsiveControl, OrdinaryControl) {
    let (u, v) = optimal_controls();
    let base = u.clone();
    let stream = u.breakpoints().clone();
    let w = ImpulsiveControl::new(
        u.u_box().clone(),
        u.interval(),
        move |t, out| {
            base.eval_into(t, out)
                .expect("optimal control is valid on its interval");
            out[1] = 0.0;
        },
        stream,
        vec![1.0, 0.0],
    )
    .expect("valid control");
    (w, v)
}

/// Ordinary control of the optimal pair with its switch moved to `switch`.
pub fn ordinary_control_switching_at(switch: f64) -> Result<OrdinaryControl> {
    let spec = system();
    OrdinaryControl::new(
        spec.interval(),
        vec![0.0, switch],
        vec![vec![1.0], vec![0.0]],
        spec.v_set(),
    )
}

pub fn interval() -> Interval {
    system().interval()
}

/// Distance from `x` to the closure of a union of half-open cells, given the
/// parity of the cells in the union. Cells `j >= 2` cover `[1/2, 1)`.
fn distance_to_cells(px: f64, even: bool) -> f64 {
    let first = if even { 0.5 } else { cell_start(3) };
    if px <= first {
        return first - px;
    }
    if px >= 1.0 {
        return px - 1.0;
    }
    let j = cell_index(px);
    if j.is_multiple_of(2) == even {
        0.0
    } else {
        (px - cell_start(j)).min(cell_start(j + 1) - px)
    }
}

/// Distance from `(px, py)` to the graph `{(s, e^s): s in [0, 1/2]}`.
fn distance_to_graph(px: f64, py: f64) -> f64 {
    let phi = |s: f64| (s - px).powi(2) + (s.exp() - py).powi(2);
    let dphi = |s: f64| 2.0 * (s - px) + 2.0 * s.exp() * (s.exp() - py);
    let ddphi = |s: f64| 2.0 + 2.0 * s.exp() * (2.0 * s.exp() - py);
    const SEEDS: usize = 17;
    let seed = |i: usize| 0.5 * i as f64 / (SEEDS - 1) as f64;
    let best_s = (0..SEEDS)
        .map(seed)
        .min_by(|a, b| phi(*a).total_cmp(&phi(*b)))
        .unwrap_or(0.0);
    // Safeguarded Newton inside the bracketing grid cell around the best seed.
    let h = 0.5 / (SEEDS - 1) as f64;
    let mut lo = (best_s - h).max(0.0);
    let mut hi = (best_s + h).min(0.5);
    let mut s = best_s;
    for _ in 0..60 {
        let g = dphi(s);
        if g == 0.0 {
            break;
        }
        if g > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let c = ddphi(s);
        let mut next = if c > 0.0 { s - g / c } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() < 1e-15 {
            s = next;
            break;
        }
        s = next;
    }
    // Distances are taken directly rather than as square roots of phi, which
    // would lose half the digits near the graph.
    let dist = |s: f64| (s - px).hypot(s.exp() - py);
    let grid_best = (0..SEEDS)
        .map(|i| dist(seed(i)))
        .fold(f64::INFINITY, f64::min);
    grid_best.min(dist(s)).min(dist(lo)).min(dist(hi))
}

/// `d((px, py), R)`.
pub fn distance_to_target(px: f64, py: f64) -> f64 {
    let mid = (-0.5f64).exp();
    let graph = distance_to_graph(px, py);
    let low = distance_to_cells(px, true).hypot(py - plateau_low());
    let high = distance_to_cells(px, false).hypot(py - plateau_high());
    let point = (px - 1.0).hypot(py - mid);
    let seg = (px - px.clamp(2.0, 3.0)).hypot(py - mid);
    graph.min(low).min(high).min(point).min(seg)
}

/// `w(2) + (y(1) - e^{-1/2})^2 + (x(2) - 3)^2`, with `y(1)` the pointwise
/// value of the limit solution.
pub fn payoff(traj: &LimitTrajectory) -> Result<f64> {
    let end = traj.evaluate(2.0)?;
    let at_one = traj.evaluate(1.0)?;
    let target = (-0.5f64).exp();
    Ok(end[2] + (at_one[1] - target).powi(2) + (end[0] - 3.0).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cell_index_matches_breakpoints() {
        assert_eq!(cell_index(0.0), 1);
        assert_eq!(cell_index(0.49), 1);
        assert_eq!(cell_index(0.5), 2);
        for j in 2..5000u64 {
            let s = cell_start(j);
            assert_eq!(cell_index(s), j);
            assert_eq!(cell_index(s.next_down()), j - 1);
            assert_eq!(cell_index(s.next_up()), j);
        }
        let top = cell_index(1.0f64.next_down());
        assert!(cell_start(top) <= 1.0f64.next_down() && cell_start(top + 1) == 1.0);
    }

    #[test]
    fn optimal_control_values() {
        let (u, v) = optimal_controls();
        assert_eq!(u.eval(0.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(u.eval(0.5).unwrap(), vec![-1.0, 0.0]);
        assert_eq!(u.eval(0.7).unwrap(), vec![1.0, 0.0]);
        assert_eq!(u.eval(1.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(u.eval(1.0f64.next_up()).unwrap(), vec![0.0, 1.0]);
        assert_eq!(v.value(0.49), &[1.0]);
        assert_eq!(v.value(0.5), &[0.0]);
        let (w, _) = modified_controls();
        assert_eq!(w.eval(1.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(w.eval(0.7).unwrap(), vec![1.0, 0.0]);
    }

    /// Brute-force distance: dense sampling of every piece of R.
    fn brute_distance(px: f64, py: f64) -> f64 {
        let mut best = f64::INFINITY;
        let mut upd = |qx: f64, qy: f64| best = best.min((px - qx).hypot(py - qy));
        for i in 0..=20000 {
            let s = 0.5 * i as f64 / 20000.0;
            upd(s, s.exp());
        }
        for j in 2..400u64 {
            let (lo, hi) = (cell_start(j), cell_start(j + 1));
            let h = if j % 2 == 0 {
                plateau_low()
            } else {
                plateau_high()
            };
            for i in 0..=50 {
                upd(lo + (hi - lo) * i as f64 / 50.0, h);
            }
        }
        upd(1.0, plateau_low());
        upd(1.0, plateau_high());
        upd(1.0, (-0.5f64).exp());
        for i in 0..=2000 {
            upd(2.0 + i as f64 / 2000.0, (-0.5f64).exp());
        }
        best
    }

    #[test]
    fn distance_matches_brute_force() {
        let pts = [
            (0.0, 1.0),
            (0.2, 0.3),
            (0.25, 2.0),
            (0.55, 1.0),
            (0.7, 0.3),
            (0.9, 1.2),
            (1.2, 0.8),
            (1.5, 0.2),
            (2.5, 0.9),
            (3.5, -0.4),
            (-0.5, 0.5),
            (0.62, 1.64),
        ];
        for (px, py) in pts {
            let a = distance_to_target(px, py);
            let b = brute_distance(px, py);
            assert!(a <= b + 1e-12, "({px}, {py}): {a} > {b}");
            assert!(b - a < 2e-4, "({px}, {py}): {a} vs {b}");
        }
    }

    #[test]
    fn optimal_path_lies_on_target() {
        for i in 0..50 {
            let t = 0.5 * i as f64 / 50.0;
            assert_abs_diff_eq!(distance_to_target(t, t.exp()), 0.0, epsilon = 1e-12);
        }
        for j in 2..1000u64 {
            let t = 0.5 * (cell_start(j) + cell_start(j + 1));
            let y = if j % 2 == 1 {
                0.5f64.exp()
            } else {
                (-1.5f64).exp()
            };
            assert_eq!(distance_to_target(t, y), 0.0);
        }
        assert_eq!(distance_to_target(1.0, (-0.5f64).exp()), 0.0);
        assert_eq!(distance_to_target(2.5, (-0.5f64).exp()), 0.0);
    }
}
