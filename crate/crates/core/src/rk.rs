//! Dormand–Prince 5(4) stepping kernel shared by the flow evaluator and the
//! Carathéodory integrator.
//!
//! The kernel only knows how to attempt a single step, propose the next step
//! size (PI control) and build the quartic continuous extension of an
//! accepted step. Step sequencing lives with the callers because the two
//! users split time differently: flows integrate a scaled autonomous problem
//! on `[0, 1]`, the integrator walks a mesh of control breakpoints.

use crate::error::Result;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Continuous extension weights (Hairer & Wanner's contd5).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Number of dense-output coefficient blocks stored per accepted step.
pub(crate) const DENSE_BLOCKS: usize = 5;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

/// Outcome of one attempted step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Attempt {
    /// Scaled RMS error norm; the step is acceptable when `norm <= 1`.
    pub norm: f64,
    /// Largest absolute component of the embedded error estimate.
    pub abs: f64,
}

/// Stage storage for one problem dimension.
pub(crate) struct Dopri5 {
    dim: usize,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    pub ynew: Vec<f64>,
    dense: Vec<f64>,
    ymid: Vec<f64>,
    fmid: Vec<f64>,
}

impl Dopri5 {
    pub fn new(dim: usize) -> Self {
        Dopri5 {
            dim,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            ytmp: vec![0.0; dim],
            ynew: vec![0.0; dim],
            dense: vec![0.0; DENSE_BLOCKS * dim],
            ymid: vec![0.0; dim],
            fmid: vec![0.0; dim],
        }
    }

    /// Slope at the start of the next attempt.
    pub fn first_slope_mut(&mut self) -> &mut [f64] {
        &mut self.k[0]
    }

    pub fn first_slope(&self) -> &[f64] {
        &self.k[0]
    }

    /// After an accepted step the last stage is the slope at the new point.
    pub fn promote_last_slope(&mut self) {
        self.k.swap(0, 6);
    }

    /// Attempts a step of size `h` from `(t, y)`. `first_slope` must already
    /// hold `f(t, y)`. On return `ynew` holds the fifth-order solution and the
    /// last stage holds `f(t + h, ynew)`.
    pub fn attempt<F>(
        &mut self,
        f: &mut F,
        t: f64,
        y: &[f64],
        h: f64,
        tol: Tolerance,
    ) -> Result<Attempt>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = self.dim;
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let ytmp = &mut self.ytmp;

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, ytmp, k2)?;
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, ytmp, k3)?;
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, ytmp, k4)?;
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, ytmp, k5)?;
        for i in 0..n {
            ytmp[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, ytmp, k6)?;
        let ynew = &mut self.ynew;
        for i in 0..n {
            ynew[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, ynew, k7)?;

        let mut sum = 0.0;
        let mut abs: f64 = 0.0;
        for i in 0..n {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = tol.atol + tol.rtol * y[i].abs().max(ynew[i].abs());
            sum += (e / sk) * (e / sk);
            abs = abs.max(e.abs());
        }
        let norm = if n == 0 { 0.0 } else { (sum / n as f64).sqrt() };
        Ok(Attempt { norm, abs })
    }

    /// Defect of the continuous extension `p` of the last attempted step at
    /// its midpoint, `h (p'(t + h/2) - f(t + h/2, p(t + h/2)))`, in the same
    /// scaled norm as [`Dopri5::attempt`]. For smooth right-hand sides it is of
    /// the same order as the embedded estimate; across a kink of `f` it stays
    /// `O(h^2)` where the embedded pair can nearly cancel.
    pub fn midpoint_defect<F>(
        &mut self,
        f: &mut F,
        t: f64,
        y: &[f64],
        h: f64,
        tol: Tolerance,
    ) -> Result<Attempt>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = self.dim;
        let mut dense = std::mem::take(&mut self.dense);
        self.dense_coefficients(y, h, &mut dense);
        let theta = 0.5;
        let theta1 = 1.0 - theta;
        let mut slope = vec![0.0; n];
        for i in 0..n {
            let (r1, r2, r3, r4, r5) = (
                dense[i],
                dense[n + i],
                dense[2 * n + i],
                dense[3 * n + i],
                dense[4 * n + i],
            );
            let a = r4 + theta1 * r5;
            let b = r3 + theta * a;
            let db = a - theta * r5;
            let c = r2 + theta1 * b;
            let dc = -b + theta1 * db;
            self.ymid[i] = r1 + theta * c;
            slope[i] = (c + theta * dc) / h;
        }
        self.dense = dense;
        f(t + theta * h, &self.ymid, &mut self.fmid)?;
        let mut sum = 0.0;
        let mut abs: f64 = 0.0;
        for i in 0..n {
            let e = h * (slope[i] - self.fmid[i]);
            let sk = tol.atol + tol.rtol * y[i].abs().max(self.ynew[i].abs());
            sum += (e / sk) * (e / sk);
            abs = abs.max(e.abs());
        }
        let norm = if n == 0 { 0.0 } else { (sum / n as f64).sqrt() };
        Ok(Attempt { norm, abs })
    }

    /// Writes the continuous-extension coefficients of the last attempted step
    /// into `out` (length `DENSE_BLOCKS * dim`).
    pub fn dense_coefficients(&self, y: &[f64], h: f64, out: &mut [f64]) {
        let n = self.dim;
        let [k1, _k2, k3, k4, k5, k6, k7] = &self.k;
        let (r1, rest) = out.split_at_mut(n);
        let (r2, rest) = rest.split_at_mut(n);
        let (r3, rest) = rest.split_at_mut(n);
        let (r4, r5) = rest.split_at_mut(n);
        for i in 0..n {
            let ydiff = self.ynew[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            r1[i] = y[i];
            r2[i] = ydiff;
            r3[i] = bspl;
            r4[i] = ydiff - h * k7[i] - bspl;
            r5[i] =
                h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
    }
}

/// Evaluates a continuous extension at fraction `theta` of its step.
pub(crate) fn dense_eval(coeffs: &[f64], dim: usize, theta: f64, out: &mut [f64]) {
    let theta1 = 1.0 - theta;
    for i in 0..dim {
        let r1 = coeffs[i];
        let r2 = coeffs[dim + i];
        let r3 = coeffs[2 * dim + i];
        let r4 = coeffs[3 * dim + i];
        let r5 = coeffs[4 * dim + i];
        out[i] = r1 + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)));
    }
}

/// PI step-size controller.
#[derive(Debug, Clone)]
pub(crate) struct StepController {
    facold: f64,
    last_rejected: bool,
}

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

impl Default for StepController {
    fn default() -> Self {
        StepController {
            facold: 1e-4,
            last_rejected: false,
        }
    }
}

impl StepController {
    /// Returns `(accepted, next_h)`.
    pub fn propose(&mut self, err: f64, h: f64) -> (bool, f64) {
        let expo1 = 0.2 - BETA * 0.75;
        let fac11 = err.max(1e-300).powf(expo1);
        if err <= 1.0 {
            let mut fac = fac11 / self.facold.powf(BETA);
            fac = (fac / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut hnew = h / fac;
            if self.last_rejected {
                hnew = hnew.min(h);
            }
            self.facold = err.max(1e-4);
            self.last_rejected = false;
            (true, hnew)
        } else {
            let hnew = h / (fac11 / SAFE).min(1.0 / FAC_MIN);
            self.last_rejected = true;
            (false, hnew)
        }
    }
}

/// Initial step guess for `y' = f(t, y)` (Hairer's `hinit`), capped at `hmax`.
pub(crate) fn initial_step<F>(
    f: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    hmax: f64,
    tol: Tolerance,
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    if n == 0 {
        return Ok(hmax);
    }
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..n {
        let sk = tol.atol + tol.rtol * y[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(hmax);
    let y1: Vec<f64> = (0..n).map(|i| y[i] + h * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    f(t + h, &y1, &mut f1)?;
    let mut der2 = 0.0;
    for i in 0..n {
        let sk = tol.atol + tol.rtol * y[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.abs().max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    Ok((100.0 * h).min(h1).min(hmax))
}

/// Integrates the autonomous system `y' = f(y)` on `[0, 1]` and returns the
/// final state. Used for flows, where time has been rescaled to unit length.
pub(crate) fn solve_unit_interval<F>(
    f: &mut F,
    y0: &[f64],
    tol: Tolerance,
    max_steps: usize,
) -> std::result::Result<Vec<f64>, UnitFailure>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let mut stepper = Dopri5::new(n);
    let mut y = y0.to_vec();
    let mut t = 0.0;
    f(t, &y, stepper.first_slope_mut()).map_err(|_| UnitFailure::Blowup(t))?;
    let f0 = stepper.first_slope().to_vec();
    let mut h = initial_step(f, t, &y, &f0, 1.0, tol).map_err(|_| UnitFailure::Blowup(t))?;
    let mut ctl = StepController::default();
    let mut steps = 0;
    while t < 1.0 {
        if steps >= max_steps {
            return Err(UnitFailure::Blowup(t));
        }
        steps += 1;
        let last = t + h >= 1.0;
        if last {
            h = 1.0 - t;
        }
        let attempt = match stepper.attempt(f, t, &y, h, tol) {
            Ok(a) if a.norm.is_finite() && stepper.ynew.iter().all(|v| v.is_finite()) => a,
            _ => {
                // Non-finite stage: shrink and retry.
                h *= 0.25;
                if h < 1e-14 {
                    return Err(UnitFailure::Blowup(t));
                }
                continue;
            }
        };
        let (accepted, hnew) = ctl.propose(attempt.norm, h);
        if accepted {
            y.copy_from_slice(&stepper.ynew);
            stepper.promote_last_slope();
            t = if last { 1.0 } else { t + h };
        }
        h = hnew;
        if h < 1e-14 && t < 1.0 {
            return Err(UnitFailure::Blowup(t));
        }
    }
    Ok(y)
}

/// Failure of a unit-interval solve, carrying the scaled time reached.
#[derive(Debug, Clone, Copy)]
pub(crate) enum UnitFailure {
    Blowup(f64),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_on_unit_interval() {
        let tol = Tolerance {
            rtol: 1e-12,
            atol: 1e-12,
        };
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[0];
            Ok(())
        };
        let y = solve_unit_interval(&mut f, &[1.0], tol, 100_000).unwrap();
        assert!((y[0] - std::f64::consts::E).abs() < 1e-11);
    }

    #[test]
    fn dense_output_matches_endpoints() {
        let tol = Tolerance {
            rtol: 1e-10,
            atol: 1e-10,
        };
        let mut f = |t: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = t.cos();
            Ok(())
        };
        let mut st = Dopri5::new(1);
        let y = [0.0];
        f(0.0, &y, st.first_slope_mut()).unwrap();
        let h = 0.1;
        st.attempt(&mut f, 0.0, &y, h, tol).unwrap();
        let mut coeffs = vec![0.0; DENSE_BLOCKS];
        st.dense_coefficients(&y, h, &mut coeffs);
        let mut out = [0.0];
        dense_eval(&coeffs, 1, 0.0, &mut out);
        assert_eq!(out[0], 0.0);
        dense_eval(&coeffs, 1, 1.0, &mut out);
        assert!((out[0] - st.ynew[0]).abs() < 1e-16);
        dense_eval(&coeffs, 1, 0.5, &mut out);
        assert!((out[0] - 0.05f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn controller_shrinks_on_rejection() {
        let mut ctl = StepController::default();
        let (acc, h) = ctl.propose(10.0, 1.0);
        assert!(!acc);
        assert!(h < 1.0);
        let (acc, h2) = ctl.propose(0.5, h);
        assert!(acc);
        assert!(h2 <= h);
    }
}
