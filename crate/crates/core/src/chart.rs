//! Flow-box chart of a commuting family of impulse fields.
//!
//! `varphi(x, z)` pushes `x` backwards along every impulse field for the
//! times `z_1, .., z_m` (in that order). The map `phi(x, z) = (varphi(x, z), z)`
//! straightens the augmented fields `(g_a, e_a)` to the coordinate directions
//! `d/dz_a`, and its inverse is `phi^{-1}(xi, zeta) = (varphi(xi, -zeta), zeta)`.
//! In these coordinates the impulsive system becomes the ordinary
//! Carathéodory system `xi' = F(t, xi, u(t), v(t))` with
//! `F = D_x varphi(x, z) f(t, x, z, v)` evaluated at `(x, z) = phi^{-1}(xi, zeta)`.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rk::{self, Tolerance};
use crate::system::{halton_points, norm, BoxSet, ImpulseField, SystemSpec};

/// How `D_x varphi` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    /// Integrate `M' = Dg(x) M` alongside each flow.
    Variational,
    /// Central differences of `varphi`; kept as a cross-check.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartConfig {
    /// Local error tolerance (relative and absolute) of every flow solve.
    pub flow_tol: f64,
    pub jac_mode: JacobianMode,
    /// Largest admissible `|t|` for a single flow.
    pub max_flow_time: f64,
}

impl Default for ChartConfig {
    fn default() -> Self {
        ChartConfig {
            flow_tol: 1e-10,
            jac_mode: JacobianMode::Variational,
            max_flow_time: 1e3,
        }
    }
}

/// Point `(xi, zeta)` in flow-box coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub xi: Vec<f64>,
    pub z: Vec<f64>,
}

const FLOW_MAX_STEPS: usize = 200_000;
const CACHE_CAPACITY: usize = 1 << 14;

/// Flow `exp(t g)(x)` of a single field.
pub fn flow_field(field: &ImpulseField, t: f64, x: &[f64], flow_tol: f64) -> Result<Vec<f64>> {
    flow_with_tangent(field, 0, t, x, None, flow_tol).map(|(y, _)| y)
}

/// Integrates `x' = t g(x)` on `[0, 1]`, optionally carrying tangent columns
/// `M' = t Dg(x) M`. `tangent` is row-major `n x k`.
fn flow_with_tangent(
    field: &ImpulseField,
    index: usize,
    t: f64,
    x: &[f64],
    tangent: Option<(&[f64], usize)>,
    flow_tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let (m0, k) = match tangent {
        Some((m, k)) => (m.to_vec(), k),
        None => (Vec::new(), 0),
    };
    if t == 0.0 {
        return Ok((x.to_vec(), m0));
    }
    let mut y0 = Vec::with_capacity(n + n * k);
    y0.extend_from_slice(x);
    y0.extend_from_slice(&m0);
    let mut jac = vec![0.0; if k > 0 { n * n } else { 0 }];
    let mut rhs = |_s: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let (xs, ms) = y.split_at(n);
        let (dx, dm) = dy.split_at_mut(n);
        field.eval(xs, dx)?;
        for v in dx.iter_mut() {
            *v *= t;
        }
        if k > 0 {
            field.jacobian(xs, &mut jac)?;
            for i in 0..n {
                for c in 0..k {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += jac[i * n + j] * ms[j * k + c];
                    }
                    dm[i * k + c] = t * acc;
                }
            }
        }
        Ok(())
    };
    let tol = Tolerance {
        rtol: flow_tol,
        atol: flow_tol,
    };
    match rk::solve_unit_interval(&mut rhs, &y0, tol, FLOW_MAX_STEPS) {
        Ok(mut y) => {
            let m = y.split_off(n);
            Ok((y, m))
        }
        Err(rk::UnitFailure::Blowup(s)) => Err(Error::CompletenessViolation {
            field: index,
            escape_time: s * t,
        }),
    }
}

fn round_sig(v: f64) -> u64 {
    if v == 0.0 || !v.is_finite() {
        return v.to_bits();
    }
    let exp = v.abs().log10().floor() as i32;
    let scale = 10f64.powi(11 - exp);
    ((v * scale).round() / scale).to_bits()
}

#[derive(Hash, PartialEq, Eq)]
struct CacheKey {
    kind: u8,
    bits: Vec<u64>,
}

impl CacheKey {
    fn new(kind: u8, x: &[f64], z: &[f64]) -> Self {
        CacheKey {
            kind,
            bits: x.iter().chain(z).map(|v| round_sig(*v)).collect(),
        }
    }
}

/// Flow-box chart for a system's impulse fields.
pub struct Chart {
    spec: SystemSpec,
    cfg: ChartConfig,
    cache: Option<Mutex<HashMap<CacheKey, Vec<f64>>>>,
}

impl Clone for Chart {
    fn clone(&self) -> Self {
        Chart {
            spec: self.spec.clone(),
            cfg: self.cfg.clone(),
            cache: self.cache.as_ref().map(|_| Mutex::new(HashMap::new())),
        }
    }
}

impl std::fmt::Debug for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chart")
            .field("system", &self.spec.name())
            .field("cfg", &self.cfg)
            .finish()
    }
}

impl Chart {
    pub fn new(spec: &SystemSpec, cfg: ChartConfig) -> Result<Self> {
        if !(cfg.flow_tol > 0.0) {
            return Err(Error::InvalidConfig("flow_tol must be positive".into()));
        }
        let u = spec.u_box();
        let reach = u
            .lower
            .iter()
            .zip(&u.upper)
            .map(|(lo, hi)| (hi - lo).max(lo.abs()).max(hi.abs()))
            .fold(0.0, f64::max);
        if !(cfg.max_flow_time > reach) {
            return Err(Error::InvalidConfig(format!(
                "max_flow_time {} must exceed the extent {reach} of U",
                cfg.max_flow_time
            )));
        }
        Ok(Chart {
            spec: spec.clone(),
            cfg,
            cache: None,
        })
    }

    /// Enables memoization of `varphi` and `D_x varphi` keyed on `(x, z)`
    /// rounded to 12 significant digits.
    pub fn memoized(mut self) -> Self {
        self.cache = Some(Mutex::new(HashMap::new()));
        self
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn config(&self) -> &ChartConfig {
        &self.cfg
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t.abs() > self.cfg.max_flow_time || !t.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "flow time {t} exceeds max_flow_time {}",
                self.cfg.max_flow_time
            )));
        }
        Ok(())
    }

    fn check_dims(&self, x: &[f64], z: &[f64]) -> Result<()> {
        if x.len() != self.spec.n() || z.len() != self.spec.m() {
            return Err(Error::InvalidSpec(format!(
                "chart expects x in R^{} and z in R^{}",
                self.spec.n(),
                self.spec.m()
            )));
        }
        Ok(())
    }

    fn cached<F>(&self, kind: u8, x: &[f64], z: &[f64], compute: F) -> Result<Vec<f64>>
    where
        F: FnOnce() -> Result<Vec<f64>>,
    {
        let Some(cache) = &self.cache else {
            return compute();
        };
        let key = CacheKey::new(kind, x, z);
        if let Some(hit) = cache.lock().expect("chart cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let value = compute()?;
        let mut guard = cache.lock().expect("chart cache poisoned");
        if guard.len() >= CACHE_CAPACITY {
            guard.clear();
        }
        guard.insert(key, value.clone());
        Ok(value)
    }

    /// `exp(t g_alpha)(x)` (zero-based `alpha`).
    pub fn flow(&self, alpha: usize, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_time(t)?;
        if alpha >= self.spec.m() {
            return Err(Error::InvalidSpec(format!(
                "no impulse field with index {alpha}"
            )));
        }
        flow_with_tangent(self.spec.field(alpha), alpha, t, x, None, self.cfg.flow_tol)
            .map(|(y, _)| y)
    }

    /// `varphi(x, z)` with flows applied in index order.
    pub fn varphi(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, z)?;
        self.cached(0, x, z, || {
            let order: Vec<usize> = (0..self.spec.m()).collect();
            self.varphi_raw(x, z, &order)
        })
    }

    /// `varphi` with an explicit flow order, for order-sensitivity diagnostics.
    pub fn varphi_ordered(&self, x: &[f64], z: &[f64], order: &[usize]) -> Result<Vec<f64>> {
        self.check_dims(x, z)?;
        let mut seen = vec![false; self.spec.m()];
        for &a in order {
            if a >= seen.len() || seen[a] {
                return Err(Error::InvalidConfig(
                    "order must be a permutation of 0..m".into(),
                ));
            }
            seen[a] = true;
        }
        if order.len() != seen.len() {
            return Err(Error::InvalidConfig(
                "order must be a permutation of 0..m".into(),
            ));
        }
        self.varphi_raw(x, z, order)
    }

    fn varphi_raw(&self, x: &[f64], z: &[f64], order: &[usize]) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        for &alpha in order {
            let t = -z[alpha];
            self.check_time(t)?;
            y = flow_with_tangent(
                self.spec.field(alpha),
                alpha,
                t,
                &y,
                None,
                self.cfg.flow_tol,
            )?
            .0;
        }
        Ok(y)
    }

    pub fn phi(&self, x: &[f64], z: &[f64]) -> Result<ChartPoint> {
        Ok(ChartPoint {
            xi: self.varphi(x, z)?,
            z: z.to_vec(),
        })
    }

    pub fn phi_inverse(&self, p: &ChartPoint) -> Result<(Vec<f64>, Vec<f64>)> {
        let neg: Vec<f64> = p.z.iter().map(|v| -v).collect();
        Ok((self.varphi(&p.xi, &neg)?, p.z.clone()))
    }

    /// Row-major `D_x varphi(x, z)`.
    fn dvarphi_dx_flat(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, z)?;
        let n = self.spec.n();
        match self.cfg.jac_mode {
            JacobianMode::Variational => {
                self.cached(1, x, z, || Ok(self.compose_with_tangent(x, z)?.1))
            }
            JacobianMode::FiniteDifference => self.cached(2, x, z, || {
                let mut out = vec![0.0; n * n];
                let step = self.cfg.flow_tol.cbrt();
                let mut xp = x.to_vec();
                for j in 0..n {
                    let h = step * (1.0 + x[j].abs());
                    xp[j] = x[j] + h;
                    let fp = self.varphi_raw(&xp, z, &(0..self.spec.m()).collect::<Vec<_>>())?;
                    xp[j] = x[j] - h;
                    let fm = self.varphi_raw(&xp, z, &(0..self.spec.m()).collect::<Vec<_>>())?;
                    xp[j] = x[j];
                    for i in 0..n {
                        out[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
                Ok(out)
            }),
        }
    }

    /// Jacobian of `varphi` with respect to `x`.
    pub fn dvarphi_dx(&self, x: &[f64], z: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.spec.n();
        Ok(DMatrix::from_row_slice(n, n, &self.dvarphi_dx_flat(x, z)?))
    }

    /// Transformed drift `F(t, xi, zeta, v)`; the zeta-components vanish and
    /// are not returned.
    pub fn transformed_drift(&self, t: f64, p: &ChartPoint, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.spec.n()];
        self.transformed_drift_into(t, &p.xi, &p.z, v, &mut out)?;
        Ok(out)
    }

    pub(crate) fn transformed_drift_into(
        &self,
        t: f64,
        xi: &[f64],
        z: &[f64],
        v: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let n = self.spec.n();
        let neg: Vec<f64> = z.iter().map(|c| -c).collect();
        if self.cfg.jac_mode == JacobianMode::FiniteDifference {
            let x = self.varphi(xi, &neg)?;
            let mut f = vec![0.0; n];
            self.spec.drift(t, &x, z, v, &mut f)?;
            if f.iter().all(|c| *c == 0.0) {
                out.fill(0.0);
                return Ok(());
            }
            let jac = self.dvarphi_dx_flat(&x, z)?;
            for i in 0..n {
                out[i] = (0..n).map(|j| jac[i * n + j] * f[j]).sum();
            }
            return Ok(());
        }
        // One tangent-carrying pass from xi gives x = varphi(xi, -z) and
        // N = D_xi varphi(xi, -z). For commuting fields varphi(., z) inverts
        // varphi(., -z), so D_x varphi(x, z) f = N^{-1} f.
        self.check_dims(xi, z)?;
        let packed = self.cached(3, xi, z, || {
            let (x, m) = self.compose_with_tangent(xi, &neg)?;
            let mut packed = x;
            packed.extend_from_slice(&m);
            Ok(packed)
        })?;
        let (x, nmat) = packed.split_at(n);
        let mut f = vec![0.0; n];
        self.spec.drift(t, x, z, v, &mut f)?;
        if f.iter().all(|c| *c == 0.0) {
            out.fill(0.0);
            return Ok(());
        }
        solve_dense(nmat, &f, out).ok_or_else(|| Error::DomainFailure { point: x.to_vec() })
    }

    /// `varphi(x, z)` together with its row-major `x`-Jacobian.
    fn compose_with_tangent(&self, x: &[f64], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.spec.n();
        let mut y = x.to_vec();
        let mut m = identity(n);
        for alpha in 0..self.spec.m() {
            let t = -z[alpha];
            self.check_time(t)?;
            let (yn, mn) = flow_with_tangent(
                self.spec.field(alpha),
                alpha,
                t,
                &y,
                Some((&m, n)),
                self.cfg.flow_tol,
            )?;
            y = yn;
            m = mn;
        }
        Ok((y, m))
    }

    /// Largest change of `varphi(x, z)` over all flow orders (reversed order
    /// only when `m > 5`).
    pub fn order_sensitivity(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        let m = self.spec.m();
        let base = self.varphi(x, z)?;
        let orders: Vec<Vec<usize>> = if m <= 5 {
            permutations(m)
        } else {
            vec![(0..m).rev().collect()]
        };
        let mut worst = 0.0f64;
        for ord in orders {
            let y = self.varphi_ordered(x, z, &ord)?;
            worst = worst.max(max_abs_diff(&y, &base));
        }
        Ok(worst)
    }

    /// `D_z varphi` column `alpha` by a five-point difference.
    fn dvarphi_dz(&self, x: &[f64], z: &[f64], alpha: usize) -> Result<Vec<f64>> {
        let h = 1e-2 * (1.0 + z[alpha].abs());
        let mut zz = z.to_vec();
        let mut eval = |dz: f64| -> Result<Vec<f64>> {
            zz[alpha] = z[alpha] + dz;
            self.varphi_raw(x, &zz, &(0..self.spec.m()).collect::<Vec<_>>())
        };
        let p2 = eval(2.0 * h)?;
        let p1 = eval(h)?;
        let m1 = eval(-h)?;
        let m2 = eval(-2.0 * h)?;
        Ok((0..x.len())
            .map(|i| (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h))
            .collect())
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Solves the small dense system `a x = b` (row-major `a`) by Gaussian
/// elimination with partial pivoting; `None` if `a` is numerically singular.
fn solve_dense(a: &[f64], b: &[f64], x: &mut [f64]) -> Option<()> {
    let n = b.len();
    let mut m = a.to_vec();
    x.copy_from_slice(b);
    for col in 0..n {
        let piv =
            (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if !(m[piv * n + col].abs() > 0.0) {
            return None;
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let factor = m[r * n + col] / d;
            if factor != 0.0 {
                for c in col..n {
                    m[r * n + c] -= factor * m[col * n + c];
                }
                x[r] -= factor * x[col];
            }
        }
    }
    for r in (0..n).rev() {
        let mut acc = x[r];
        for c in r + 1..n {
            acc -= m[r * n + c] * x[c];
        }
        x[r] = acc / m[r * n + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(())
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

/// One sampled row of a pushforward check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushforwardRow {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub alpha: usize,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushforwardReport {
    pub samples: usize,
    pub max_deviation: f64,
    pub rows: Vec<PushforwardRow>,
}

/// Checks that `D phi` maps each augmented field `(g_a, e_a)` to `d/dz_a`,
/// i.e. that `D_x varphi g_a + D_{z_a} varphi = 0`, at Halton samples of
/// `region x U`.
pub fn pushforward_check(
    chart: &Chart,
    region: &BoxSet,
    samples: usize,
) -> Result<PushforwardReport> {
    use rayon::prelude::*;
    let spec = chart.spec();
    let (n, m) = (spec.n(), spec.m());
    if region.dim() != n || samples == 0 {
        return Err(Error::InvalidConfig(
            "pushforward check needs an n-dimensional region and samples >= 1".into(),
        ));
    }
    let mut lower = region.lower.clone();
    lower.extend_from_slice(&spec.u_box().lower);
    let mut upper = region.upper.clone();
    upper.extend_from_slice(&spec.u_box().upper);
    let product = BoxSet::new(lower, upper)?;
    let points = halton_points(&product, samples);
    let rows: Vec<Vec<PushforwardRow>> = points
        .par_iter()
        .map(|p| -> Result<Vec<PushforwardRow>> {
            let (x, z) = p.split_at(n);
            let jac = chart.dvarphi_dx_flat(x, z)?;
            let mut g = vec![0.0; n];
            let mut rows = Vec::with_capacity(m);
            for alpha in 0..m {
                spec.field(alpha).eval(x, &mut g)?;
                let dz = chart.dvarphi_dz(x, z, alpha)?;
                let dev: Vec<f64> = (0..n)
                    .map(|i| (0..n).map(|j| jac[i * n + j] * g[j]).sum::<f64>() + dz[i])
                    .collect();
                rows.push(PushforwardRow {
                    x: x.to_vec(),
                    z: z.to_vec(),
                    alpha,
                    deviation: norm(&dev),
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<PushforwardRow> = rows.into_iter().flatten().collect();
    let max_deviation = rows.iter().map(|r| r.deviation).fold(0.0, f64::max);
    Ok(PushforwardReport {
        samples,
        max_deviation,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::ImpulseField;
    use approx::assert_abs_diff_eq;

    fn scalar_linear() -> SystemSpec {
        SystemSpec::builder("scalar", 1)
            .drift(|_, _, _, v, o| o[0] = v[0])
            .field(ImpulseField::new(
                "x",
                |x, o| o[0] = x[0],
                |_, j| j[0] = 1.0,
            ))
            .impulse_box(BoxSet::cube(1, -1.0, 1.0).unwrap())
            .ordinary_set(crate::system::ControlSet::Box(
                BoxSet::cube(1, -1.0, 1.0).unwrap(),
            ))
            .build()
            .unwrap()
    }

    fn constant_fields() -> SystemSpec {
        SystemSpec::builder("const", 2)
            .field(ImpulseField::new(
                "c1",
                |_, o| o.copy_from_slice(&[1.0, 2.0]),
                |_, j| j.fill(0.0),
            ))
            .field(ImpulseField::new(
                "c2",
                |_, o| o.copy_from_slice(&[-0.5, 3.0]),
                |_, j| j.fill(0.0),
            ))
            .impulse_box(BoxSet::cube(2, -2.0, 2.0).unwrap())
            .build()
            .unwrap()
    }

    #[test]
    fn linear_flow_is_exponential() {
        let chart = Chart::new(&scalar_linear(), ChartConfig::default()).unwrap();
        let y = chart.flow(0, 1.0, &[1.0]).unwrap();
        assert_abs_diff_eq!(y[0], std::f64::consts::E, epsilon = 1e-9);
        assert_eq!(chart.flow(0, 0.0, &[0.37]).unwrap(), vec![0.37]);
    }

    #[test]
    fn scalar_chart_closed_forms() {
        let chart = Chart::new(&scalar_linear(), ChartConfig::default()).unwrap();
        let e = std::f64::consts::E;
        let p = chart.phi(&[2.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(p.xi[0], 2.0 / e, epsilon = 1e-9);
        let (x, z) = chart
            .phi_inverse(&ChartPoint {
                xi: vec![2.0 / e],
                z: vec![1.0],
            })
            .unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-9);
        assert_eq!(z, vec![1.0]);
        let j = chart.dvarphi_dx(&[0.4], &[0.7]).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], (-0.7f64).exp(), epsilon = 1e-9);
        // f = v gives F = e^{-z} v.
        let f = chart
            .transformed_drift(
                0.0,
                &ChartPoint {
                    xi: vec![0.3],
                    z: vec![0.5],
                },
                &[0.8],
            )
            .unwrap();
        assert_abs_diff_eq!(f[0], (-0.5f64).exp() * 0.8, epsilon = 1e-9);
    }

    #[test]
    fn constant_fields_translate() {
        let chart = Chart::new(&constant_fields(), ChartConfig::default()).unwrap();
        let x = [0.3, -1.2];
        let z = [0.7, -1.5];
        let y = chart.varphi(&x, &z).unwrap();
        assert_abs_diff_eq!(y[0], 0.3 - 0.7 * 1.0 - (-1.5) * (-0.5), epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], -1.2 - 0.7 * 2.0 - (-1.5) * 3.0, epsilon = 1e-12);
        let j = chart.dvarphi_dx(&x, &z).unwrap();
        assert_abs_diff_eq!(
            (j - DMatrix::identity(2, 2)).abs().max(),
            0.0,
            epsilon = 1e-14
        );
        assert_eq!(chart.varphi(&x, &[0.0, 0.0]).unwrap(), x.to_vec());
        let r = pushforward_check(&chart, &BoxSet::cube(2, -1.0, 1.0).unwrap(), 20).unwrap();
        assert!(r.max_deviation < 1e-12, "{}", r.max_deviation);
    }

    #[test]
    fn zero_drift_gives_zero_transformed_drift() {
        let chart = Chart::new(&constant_fields(), ChartConfig::default()).unwrap();
        let f = chart
            .transformed_drift(
                0.2,
                &ChartPoint {
                    xi: vec![1.0, 2.0],
                    z: vec![0.1, 0.2],
                },
                &[],
            )
            .unwrap();
        assert_eq!(f, vec![0.0, 0.0]);
    }

    #[test]
    fn finite_difference_mode_agrees_with_variational() {
        let spec = scalar_linear();
        let var = Chart::new(&spec, ChartConfig::default()).unwrap();
        let fd = Chart::new(
            &spec,
            ChartConfig {
                jac_mode: JacobianMode::FiniteDifference,
                ..Default::default()
            },
        )
        .unwrap();
        let a = var.dvarphi_dx(&[1.3], &[-0.4]).unwrap();
        let b = fd.dvarphi_dx(&[1.3], &[-0.4]).unwrap();
        assert_abs_diff_eq!(a[(0, 0)], b[(0, 0)], epsilon = 1e-6);
    }

    #[test]
    fn memoized_chart_matches_plain_chart() {
        let spec = scalar_linear();
        let plain = Chart::new(&spec, ChartConfig::default()).unwrap();
        let memo = Chart::new(&spec, ChartConfig::default())
            .unwrap()
            .memoized();
        for i in 0..20 {
            let x = [0.1 * i as f64];
            let z = [0.05 * i as f64 - 0.5];
            let a = plain.varphi(&x, &z).unwrap();
            let b = memo.varphi(&x, &z).unwrap();
            let c = memo.varphi(&x, &z).unwrap();
            assert_eq!(b, c);
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_excessive_flow_time() {
        let spec = scalar_linear();
        assert!(Chart::new(
            &spec,
            ChartConfig {
                max_flow_time: 1.5,
                ..Default::default()
            }
        )
        .is_err());
        let chart = Chart::new(
            &spec,
            ChartConfig {
                max_flow_time: 5.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(matches!(
            chart.flow(0, 6.0, &[1.0]),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn finite_escape_is_completeness_violation() {
        let spec = SystemSpec::builder("blowup", 1)
            .field(ImpulseField::new(
                "sq",
                |x, o| o[0] = x[0] * x[0],
                |x, j| j[0] = 2.0 * x[0],
            ))
            .impulse_box(BoxSet::cube(1, -1.0, 1.0).unwrap())
            .build()
            .unwrap();
        let chart = Chart::new(&spec, ChartConfig::default()).unwrap();
        // x' = x^2 from 1 escapes at t = 1.
        match chart.flow(0, 2.0, &[1.0]) {
            Err(Error::CompletenessViolation { escape_time, .. }) => {
                assert!(
                    escape_time > 0.9 && escape_time <= 1.0 + 1e-6,
                    "{escape_time}"
                )
            }
            other => panic!("expected completeness violation, got {other:?}"),
        }
    }

    #[test]
    fn permutations_are_complete() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert!(p.contains(&vec![2, 0, 1]));
    }
}
