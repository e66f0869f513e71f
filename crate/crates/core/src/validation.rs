//! Empirical checks of the limit-solution concept.
//!
//! A limit solution at an anchor time `tau` is the limit of classical
//! solutions driven by absolutely continuous controls `u_k` that converge to
//! `u` in `L^1` and satisfy `u_k(tau) = u(tau)`, `u_k(a) = u(a)`. The checks
//! here build such sequences, solve classically, and compare with the
//! representation-based solver. Only finitely many anchors can be tested; the
//! reports say which ones were.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{AcControl, ImpulsiveControl, OrdinaryControl};
use crate::error::{Error, Result};
use crate::integrator::{classical_solve, DenseTrajectory};
use crate::limit::{limit_solve, LimitTrajectory, SolveConfig};
use crate::system::{norm, ControlSet, Interval, SystemSpec};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "IMPULSEFLOW_THREADS";

/// Runs `f` on a pool sized by [`THREADS_ENV`] when set, otherwise on the
/// global pool.
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|n| *n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// Piecewise-linear interpolation of pointwise values on an anchored mesh.
    MeshInterpolation,
    /// Triangular-kernel smoothing, re-anchored at `a` and `tau`.
    Mollification,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::MeshInterpolation => "mesh-interpolation",
            SchemeKind::Mollification => "mollification",
        }
    }
}

/// A family of absolutely continuous approximations anchored at `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationScheme {
    pub kind: SchemeKind,
    pub mesh_counts: Vec<usize>,
    pub anchor: f64,
}

impl ApproximationScheme {
    pub fn new(kind: SchemeKind, mesh_counts: Vec<usize>, anchor: f64) -> Result<Self> {
        if mesh_counts.is_empty()
            || mesh_counts[0] == 0
            || mesh_counts.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidConfig(
                "mesh counts must be positive and strictly increasing".into(),
            ));
        }
        if !anchor.is_finite() {
            return Err(Error::InvalidConfig("anchor must be finite".into()));
        }
        Ok(ApproximationScheme {
            kind,
            mesh_counts,
            anchor,
        })
    }
}

/// `k + 1` uniform nodes with the interior node nearest `tau` moved onto it.
/// For `k = 1` and interior `tau` the mesh is `[a, tau, b]`.
fn anchored_mesh(iv: Interval, tau: f64, k: usize) -> Vec<f64> {
    let h = iv.length() / k as f64;
    let mut nodes: Vec<f64> = (0..=k).map(|i| iv.a + h * i as f64).collect();
    nodes[k] = iv.b;
    if tau == iv.a || tau == iv.b || nodes.contains(&tau) {
        return nodes;
    }
    if k == 1 {
        return vec![iv.a, tau, iv.b];
    }
    let i = (((tau - iv.a) / h).round() as usize).clamp(1, k - 1);
    nodes[i] = tau;
    nodes
}

/// Sorted breakpoints of `u` inside `[a, b]` resolved at radius `eps`; each
/// frozen gap is subdivided into `gap_pieces` cells.
fn control_splits(u: &ImpulsiveControl, eps: f64, gap_pieces: usize) -> Result<Vec<f64>> {
    let iv = u.interval();
    let res = u.breakpoints().resolve(iv, eps)?;
    let mut pts = res.points;
    for g in &res.gaps {
        for i in 0..=gap_pieces {
            pts.push(g.start + (g.end - g.start) * i as f64 / gap_pieces as f64);
        }
    }
    pts.push(iv.a);
    pts.push(iv.b);
    Ok(sorted_unique(pts, iv))
}

fn sorted_unique(mut pts: Vec<f64>, iv: Interval) -> Vec<f64> {
    pts.retain(|t| t.is_finite() && *t >= iv.a && *t <= iv.b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

const GAUSS4_X: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS4_W: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Composite four-point Gauss-Legendre rule on the cells between `splits`.
#[derive(Debug, Clone)]
struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    fn on(splits: &[f64]) -> Self {
        let mut nodes = Vec::with_capacity(4 * splits.len());
        let mut weights = Vec::with_capacity(4 * splits.len());
        for w in splits.windows(2) {
            let (c, r) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            if r <= 0.0 {
                continue;
            }
            for (x, wt) in GAUSS4_X.iter().zip(GAUSS4_W) {
                nodes.push(c + r * x);
                weights.push(r * wt);
            }
        }
        Quadrature { nodes, weights }
    }

    fn integrate(&self, values: impl Iterator<Item = f64>) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Triangular-kernel average of `u` (constantly extended) at `t`, with
/// half-width `w`. `splits` are the sorted discontinuities of `u`.
fn convolve(u: &ImpulsiveControl, splits: &[f64], t: f64, w: f64, out: &mut [f64]) -> Result<()> {
    let iv = u.interval();
    let m = u.dim();
    out.fill(0.0);
    // Kernel mass of (w - |r|)/w^2 over r in [lo, hi] with lo <= hi inside [-w, w].
    let mass = |lo: f64, hi: f64| -> f64 {
        let prim = |r: f64| {
            let r = r.clamp(-w, w);
            if r <= 0.0 {
                (w * r + 0.5 * r * r) / (w * w)
            } else {
                (w * r - 0.5 * r * r) / (w * w)
            }
        };
        prim(hi) - prim(lo)
    };
    let ua = u.eval(iv.a)?;
    let ub = u.eval(iv.b)?;
    // s < a contributes u(a); s > b contributes u(b). With r = t - s.
    if t - w < iv.a {
        let c = mass(t - iv.a, w);
        for (o, v) in out.iter_mut().zip(&ua) {
            *o += c * v;
        }
    }
    if t + w > iv.b {
        let c = mass(-w, t - iv.b);
        for (o, v) in out.iter_mut().zip(&ub) {
            *o += c * v;
        }
    }
    let lo = (t - w).max(iv.a);
    let hi = (t + w).min(iv.b);
    if hi <= lo {
        return Ok(());
    }
    let first = splits.partition_point(|s| *s <= lo);
    let last = splits.partition_point(|s| *s < hi);
    let mut cuts = Vec::with_capacity(last.saturating_sub(first) + 3);
    cuts.push(lo);
    cuts.extend_from_slice(&splits[first..last]);
    if t > lo && t < hi {
        cuts.push(t);
    }
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    let mut val = vec![0.0; m];
    for c in cuts.windows(2) {
        let (mid, half) = (0.5 * (c[0] + c[1]), 0.5 * (c[1] - c[0]));
        if half <= 0.0 {
            continue;
        }
        for (x, wt) in GAUSS4_X.iter().zip(GAUSS4_W) {
            let s = mid + half * x;
            u.eval_into(s, &mut val)?;
            let k = (w - (t - s).abs()).max(0.0) / (w * w);
            for (o, v) in out.iter_mut().zip(&val) {
                *o += half * wt * k * v;
            }
        }
    }
    Ok(())
}

fn hat(t: f64, centre: f64, half_width: f64) -> f64 {
    (1.0 - (t - centre).abs() / half_width).max(0.0)
}

fn mollified(u: &ImpulsiveControl, tau: f64, k: usize) -> Result<AcControl> {
    let iv = u.interval();
    let w = iv.length() / k as f64;
    let splits = control_splits(u, (w * 1e-3).max(1e-9), 8)?;
    let omega = if tau > iv.a { w.min(tau - iv.a) } else { w };
    let per_cell = 16 * k;
    let mut grid: Vec<f64> = (0..=per_cell)
        .map(|i| iv.a + iv.length() * i as f64 / per_cell as f64)
        .collect();
    grid.extend([iv.a + omega, tau - omega, tau, tau + omega]);
    let grid = sorted_unique(grid, iv);

    let m = u.dim();
    let ua = u.eval(iv.a)?;
    let ut = u.eval(tau)?;
    let mut smooth_a = vec![0.0; m];
    let mut smooth_t = vec![0.0; m];
    convolve(u, &splits, iv.a, w, &mut smooth_a)?;
    convolve(u, &splits, tau, w, &mut smooth_t)?;

    let mut values: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&t| {
            let mut v = vec![0.0; m];
            convolve(u, &splits, t, w, &mut v)?;
            let ha = hat(t, iv.a, omega);
            let ht = if tau > iv.a { hat(t, tau, omega) } else { 0.0 };
            for c in 0..m {
                v[c] += ha * (ua[c] - smooth_a[c]) + ht * (ut[c] - smooth_t[c]);
            }
            u.u_box().clamp(&mut v);
            Ok(v)
        })
        .collect::<Result<_>>()?;
    // Exact anchoring, independent of rounding in the corrections.
    values[0] = ua;
    if let Ok(i) = grid.binary_search_by(|s| s.total_cmp(&tau)) {
        values[i] = ut;
    }
    AcControl::piecewise_linear(iv, grid, values)
}

/// The `k`-th approximation of `u` in `scheme`. Values stay in `U` and equal
/// `u` exactly at `a` and at the anchor.
pub fn build_ac_approximation(
    u: &ImpulsiveControl,
    scheme: &ApproximationScheme,
    k: usize,
) -> Result<AcControl> {
    if !scheme.mesh_counts.contains(&k) {
        return Err(Error::InvalidConfig(format!(
            "k = {k} is not one of the scheme's mesh counts"
        )));
    }
    let iv = u.interval();
    let tau = scheme.anchor;
    iv.check(tau)?;
    match scheme.kind {
        SchemeKind::MeshInterpolation => {
            let nodes = anchored_mesh(iv, tau, k);
            let values = nodes
                .iter()
                .map(|t| u.eval(*t))
                .collect::<Result<Vec<_>>>()?;
            AcControl::piecewise_linear(iv, nodes, values)
        }
        SchemeKind::Mollification => mollified(u, tau, k),
    }
}

/// One row of a convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    /// `|x_k(tau) - x(tau)| + |u_k(tau) - u(tau)|`.
    pub pointwise_error: f64,
    pub control_l1_error: f64,
    pub state_l1_error: f64,
    pub endpoint_error: f64,
    /// Sum of the pointwise and both `L^1` errors.
    pub combined: f64,
    /// Classical solution at the anchor.
    pub state_at_anchor: Vec<f64>,
    /// Set when the classical solve failed; the numeric fields are NaN.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub scheme: ApproximationScheme,
    pub rows: Vec<ConvergenceRow>,
    /// Limit solution at the anchor.
    pub limit_at_anchor: Vec<f64>,
    pub target: f64,
    pub passed: bool,
}

impl ConvergenceReport {
    pub fn final_combined(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.combined)
    }
}

/// True when the last value is at most `target` and the last three values do
/// not increase.
pub fn trend_verdict(values: &[f64], target: f64) -> bool {
    let Some(&last) = values.last() else {
        return false;
    };
    if values.iter().any(|v| !v.is_finite()) || !(last <= target) {
        return false;
    }
    let tail = &values[values.len().saturating_sub(3)..];
    tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15)
}

/// Default target for the final combined error of a convergence study.
pub const DEFAULT_CONVERGENCE_TARGET: f64 = 5e-2;

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Limit solution sampled once on a quadrature grid.
struct SampledLimit {
    quad: Quadrature,
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

fn sample_limit(traj: &LimitTrajectory, splits: &[f64]) -> Result<SampledLimit> {
    let quad = Quadrature::on(splits);
    let x = quad
        .nodes
        .par_iter()
        .map(|t| traj.evaluate(*t))
        .collect::<Result<Vec<_>>>()?;
    let u = quad
        .nodes
        .par_iter()
        .map(|t| traj.u().eval(*t))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampledLimit { quad, x, u })
}

fn convergence_row(
    traj: &LimitTrajectory,
    sampled: &SampledLimit,
    uk: &AcControl,
    k: usize,
    tau: f64,
    cfg: &SolveConfig,
) -> ConvergenceRow {
    let attempt = || -> Result<ConvergenceRow> {
        let spec = traj.spec();
        let xk = classical_solve(spec, traj.x_bar(), uk, traj.v(), &cfg.integration)?;
        let x_tau = traj.evaluate(tau)?;
        let xk_tau = xk.evaluate(tau)?;
        let pointwise =
            diff_norm(&xk_tau, &x_tau) + diff_norm(&uk.value(tau)?, &traj.u().eval(tau)?);
        let q = &sampled.quad;
        let mut buf = vec![0.0; spec.n()];
        let mut ubuf = vec![0.0; spec.m()];
        let mut state_err = Vec::with_capacity(q.nodes.len());
        let mut control_err = Vec::with_capacity(q.nodes.len());
        for (i, t) in q.nodes.iter().enumerate() {
            xk.evaluate_into(*t, &mut buf)?;
            state_err.push(diff_norm(&buf, &sampled.x[i]));
            uk.value_into(*t, &mut ubuf);
            control_err.push(diff_norm(&ubuf, &sampled.u[i]));
        }
        let state_l1 = q.integrate(state_err.into_iter());
        let control_l1 = q.integrate(control_err.into_iter());
        let b = spec.interval().b;
        let endpoint = diff_norm(&xk.evaluate(b)?, &traj.evaluate(b)?);
        Ok(ConvergenceRow {
            k,
            pointwise_error: pointwise,
            control_l1_error: control_l1,
            state_l1_error: state_l1,
            endpoint_error: endpoint,
            combined: pointwise + control_l1 + state_l1,
            state_at_anchor: xk_tau,
            failure: None,
        })
    };
    attempt().unwrap_or_else(|e| ConvergenceRow {
        k,
        pointwise_error: f64::NAN,
        control_l1_error: f64::NAN,
        state_l1_error: f64::NAN,
        endpoint_error: f64::NAN,
        combined: f64::NAN,
        state_at_anchor: Vec::new(),
        failure: Some(e.to_string()),
    })
}

/// Convergence study against an already computed limit solution.
pub fn convergence_against(
    traj: &LimitTrajectory,
    scheme: &ApproximationScheme,
    cfg: &SolveConfig,
    target: f64,
) -> Result<ConvergenceReport> {
    let u = traj.u();
    let iv = u.interval();
    iv.check(scheme.anchor)?;
    let approximations = scheme
        .mesh_counts
        .par_iter()
        .map(|&k| build_ac_approximation(u, scheme, k))
        .collect::<Result<Vec<_>>>()?;
    let mut splits = control_splits(u, cfg.integration.eps_accumulation, 16)?;
    splits.push(scheme.anchor);
    splits.extend(traj.v().switch_times());
    for ak in &approximations {
        if let Some((nodes, _)) = ak.nodes() {
            splits.extend_from_slice(nodes);
        }
    }
    let splits = sorted_unique(splits, iv);
    let sampled = sample_limit(traj, &splits)?;
    let rows: Vec<ConvergenceRow> = scheme
        .mesh_counts
        .par_iter()
        .zip(approximations.par_iter())
        .map(|(&k, uk)| convergence_row(traj, &sampled, uk, k, scheme.anchor, cfg))
        .collect();
    let combined: Vec<f64> = rows.iter().map(|r| r.combined).collect();
    let passed = rows.iter().all(|r| r.failure.is_none()) && trend_verdict(&combined, target);
    Ok(ConvergenceReport {
        scheme: scheme.clone(),
        rows,
        limit_at_anchor: traj.evaluate(scheme.anchor)?,
        target,
        passed,
    })
}

/// Compares classical solutions for the scheme's approximations with the
/// limit solution, one row per `k`.
pub fn convergence_check(
    spec: &SystemSpec,
    x_bar: &[f64],
    u: &ImpulsiveControl,
    v: &OrdinaryControl,
    scheme: &ApproximationScheme,
    cfg: &SolveConfig,
    target: f64,
) -> Result<ConvergenceReport> {
    with_thread_cap(|| {
        let traj = limit_solve(spec, x_bar, u, v, cfg)?;
        convergence_against(&traj, scheme, cfg, target)
    })
}

/// Anchors checked by default: `a`, `b`, the midpoint, every declared finite
/// breakpoint and its `eps`-neighbours, and every accumulation point with its
/// neighbour on the approach side.
pub fn default_anchor_sample(u: &ImpulsiveControl, eps: f64) -> Vec<f64> {
    let iv = u.interval();
    let mut taus = vec![iv.a, iv.b, 0.5 * (iv.a + iv.b)];
    for t in &u.breakpoints().finite {
        taus.extend([*t - eps, *t, *t + eps]);
    }
    for s in &u.breakpoints().sequences {
        taus.extend([s.limit() - eps, s.limit(), s.limit() + eps]);
    }
    sorted_unique(taus, iv)
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessRow {
    pub anchor: f64,
    pub mesh_value: Vec<f64>,
    pub mollified_value: Vec<f64>,
    pub difference: f64,
    /// Sum of both schemes' final combined errors.
    pub allowance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub rows: Vec<UniquenessRow>,
    pub passed: bool,
}

/// Runs both approximation schemes at every anchor and checks that their
/// final classical values agree within the sum of their reported errors.
pub fn uniqueness_check(
    spec: &SystemSpec,
    x_bar: &[f64],
    u: &ImpulsiveControl,
    v: &OrdinaryControl,
    anchors: &[f64],
    mesh_counts: &[usize],
    cfg: &SolveConfig,
) -> Result<UniquenessReport> {
    with_thread_cap(|| {
        let traj = limit_solve(spec, x_bar, u, v, cfg)?;
        let rows = anchors
            .iter()
            .map(|&tau| {
                let mesh = ApproximationScheme::new(
                    SchemeKind::MeshInterpolation,
                    mesh_counts.to_vec(),
                    tau,
                )?;
                let moll =
                    ApproximationScheme::new(SchemeKind::Mollification, mesh_counts.to_vec(), tau)?;
                let rm = convergence_against(&traj, &mesh, cfg, f64::INFINITY)?;
                let rq = convergence_against(&traj, &moll, cfg, f64::INFINITY)?;
                let (lm, lq) = (rm.rows.last().expect("rows"), rq.rows.last().expect("rows"));
                let difference = diff_norm(&lm.state_at_anchor, &lq.state_at_anchor);
                let allowance = lm.combined + lq.combined;
                // Rounding slack for the triangle inequality.
                let scale = norm(&lm.state_at_anchor).max(1.0);
                let passed = lm.failure.is_none()
                    && lq.failure.is_none()
                    && difference.is_finite()
                    && difference <= allowance + 16.0 * f64::EPSILON * scale;
                Ok(UniquenessRow {
                    anchor: tau,
                    mesh_value: lm.state_at_anchor.clone(),
                    mollified_value: lq.state_at_anchor.clone(),
                    difference,
                    allowance,
                    passed,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let passed = !rows.is_empty() && rows.iter().all(|r| r.passed);
        Ok(UniquenessReport { rows, passed })
    })
}

/// Two initial states and impulse controls to compare.
#[derive(Debug, Clone)]
pub struct ControlPair {
    pub x1: Vec<f64>,
    pub u1: ImpulsiveControl,
    pub x2: Vec<f64>,
    pub u2: ImpulsiveControl,
}

#[derive(Debug, Clone, Serialize)]
pub struct DependenceRow {
    pub pair: usize,
    pub anchor: f64,
    /// `|x1(tau) - x2(tau)| + ||x1 - x2||_1`.
    pub numerator: f64,
    /// `|x1(a) - x2(a)| + |u1(a) - u2(a)| + |u1(tau) - u2(tau)| + ||u1 - u2||_1`.
    pub denominator: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DependenceReport {
    pub m_hat: f64,
    pub m_hat_refined: f64,
    pub relative_change: f64,
    pub refinement_factor: f64,
    pub rows: Vec<DependenceRow>,
    /// Pair/anchor cells with a vanishing denominator.
    pub skipped: usize,
    pub passed: bool,
}

fn dependence_rows(
    spec: &SystemSpec,
    pairs: &[ControlPair],
    v: &OrdinaryControl,
    anchors: &[f64],
    cfg: &SolveConfig,
) -> Result<(Vec<DependenceRow>, usize)> {
    let per_pair = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<(Vec<DependenceRow>, usize)> {
            let t1 = limit_solve(spec, &p.x1, &p.u1, v, cfg)?;
            let t2 = limit_solve(spec, &p.x2, &p.u2, v, cfg)?;
            let iv = spec.interval();
            let mut splits = control_splits(&p.u1, cfg.integration.eps_accumulation, 16)?;
            splits.extend(control_splits(&p.u2, cfg.integration.eps_accumulation, 16)?);
            splits.extend_from_slice(anchors);
            splits.extend(v.switch_times());
            let quad = Quadrature::on(&sorted_unique(splits, iv));
            let mut x_err = Vec::with_capacity(quad.nodes.len());
            let mut u_err = Vec::with_capacity(quad.nodes.len());
            for t in &quad.nodes {
                x_err.push(diff_norm(&t1.evaluate(*t)?, &t2.evaluate(*t)?));
                u_err.push(diff_norm(&p.u1.eval(*t)?, &p.u2.eval(*t)?));
            }
            let x_l1 = quad.integrate(x_err.into_iter());
            let u_l1 = quad.integrate(u_err.into_iter());
            let base =
                diff_norm(&p.x1, &p.x2) + diff_norm(p.u1.value_at_a(), p.u2.value_at_a()) + u_l1;
            let mut rows = Vec::new();
            let mut skipped = 0;
            for &tau in anchors {
                let denominator = base + diff_norm(&p.u1.eval(tau)?, &p.u2.eval(tau)?);
                if !(denominator > 1e-14) {
                    skipped += 1;
                    continue;
                }
                let numerator = diff_norm(&t1.evaluate(tau)?, &t2.evaluate(tau)?) + x_l1;
                rows.push(DependenceRow {
                    pair: i,
                    anchor: tau,
                    numerator,
                    denominator,
                    ratio: numerator / denominator,
                });
            }
            Ok((rows, skipped))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (r, s) in per_pair {
        rows.extend(r);
        skipped += s;
    }
    Ok((rows, skipped))
}

fn max_ratio(rows: &[DependenceRow]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    rows.iter()
        .map(|r| r.ratio)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Empirical Lipschitz constant of the solution map in the sense
///
/// ```text
/// |x1(tau) - x2(tau)| + ||x1 - x2||_1
///     <= M (|x1(a) - x2(a)| + |u1(a) - u2(a)| + |u1(tau) - u2(tau)| + ||u1 - u2||_1)
/// ```
///
/// maximised over pairs and anchors,
/// then recomputed with every tolerance tightened by `refinement_factor`.
/// Passes when the estimate is finite and moves by less than 20%.
pub fn continuous_dependence_check(
    spec: &SystemSpec,
    pairs: &[ControlPair],
    v: &OrdinaryControl,
    anchors: &[f64],
    cfg: &SolveConfig,
    refinement_factor: f64,
) -> Result<DependenceReport> {
    if anchors.is_empty() || pairs.is_empty() {
        return Err(Error::InvalidConfig(
            "need at least one pair and one anchor".into(),
        ));
    }
    with_thread_cap(|| {
        let (rows, skipped) = dependence_rows(spec, pairs, v, anchors, cfg)?;
        let (fine, _) =
            dependence_rows(spec, pairs, v, anchors, &cfg.tightened(refinement_factor))?;
        let m_hat = max_ratio(&rows);
        let m_hat_refined = max_ratio(&fine);
        let relative_change = (m_hat_refined - m_hat).abs() / m_hat.abs();
        let passed = m_hat.is_finite() && m_hat_refined.is_finite() && relative_change < 0.2;
        Ok(DependenceReport {
            m_hat,
            m_hat_refined,
            relative_change,
            refinement_factor,
            rows,
            skipped,
            passed,
        })
    })
}

fn random_state<R: Rng>(rng: &mut R, n: usize, radius: f64) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-radius..=radius)).collect();
        if norm(&x) <= radius {
            return x;
        }
    }
}

/// Random piecewise-constant impulse control with up to three jumps.
pub fn random_piecewise_constant<R: Rng>(
    spec: &SystemSpec,
    rng: &mut R,
) -> Result<ImpulsiveControl> {
    let iv = spec.interval();
    let jumps = rng.gen_range(0..=3);
    let mut times: Vec<f64> = (0..jumps)
        .map(|_| rng.gen_range(iv.a..iv.b))
        .filter(|t| *t > iv.a)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let values = (0..=times.len())
        .map(|_| spec.u_box().sample(rng))
        .collect();
    ImpulsiveControl::piecewise_constant(spec.u_box().clone(), iv, times, values, Vec::new())
}

/// Random piecewise-linear control with `pieces` cells and values in `U`.
pub fn random_piecewise_linear<R: Rng>(
    spec: &SystemSpec,
    pieces: usize,
    rng: &mut R,
) -> Result<AcControl> {
    let iv = spec.interval();
    let mut nodes: Vec<f64> = (1..pieces)
        .map(|_| rng.gen_range(iv.a..iv.b))
        .filter(|t| *t > iv.a)
        .collect();
    nodes.extend([iv.a, iv.b]);
    let nodes = sorted_unique(nodes, iv);
    let values = nodes.iter().map(|_| spec.u_box().sample(rng)).collect();
    AcControl::piecewise_linear(iv, nodes, values)
}

/// Seeded random pairs with initial states in the ball of radius `radius`.
/// Every fourth pair is a pure translation (`u2 = u1`), which is where the
/// translation part of the estimate is sharp; the rest mix independent
/// controls and small perturbations of `u1`.
pub fn random_pairs(
    spec: &SystemSpec,
    radius: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<ControlPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n();
    (0..count)
        .map(|i| {
            let x1 = random_state(&mut rng, n, 0.8 * radius);
            let u1 = random_piecewise_constant(spec, &mut rng)?;
            let (x2, u2) = match i % 4 {
                0 => {
                    let d = random_state(&mut rng, n, 0.2 * radius);
                    (x1.iter().zip(&d).map(|(a, b)| a + b).collect(), u1.clone())
                }
                1 => (
                    random_state(&mut rng, n, radius),
                    random_piecewise_constant(spec, &mut rng)?,
                ),
                _ => {
                    let iv = spec.interval();
                    let at = rng.gen_range(iv.a..iv.b);
                    let bump = spec.u_box().sample(&mut rng);
                    let base = u1.clone();
                    let b2 = spec.u_box().clone();
                    let mid = 0.5 * (at + iv.b);
                    let perturbed = ImpulsiveControl::new(
                        b2,
                        iv,
                        move |t, out| {
                            if t > at && t < mid {
                                out.copy_from_slice(&bump);
                            } else {
                                base.eval_into(t, out)
                                    .expect("base control valid on its interval");
                            }
                        },
                        {
                            let mut bp = u1.breakpoints().clone();
                            bp.finite.extend([at, mid]);
                            bp
                        },
                        u1.value_at_a().to_vec(),
                    )?;
                    (x1.clone(), perturbed)
                }
            };
            Ok(ControlPair { x1, u1, x2, u2 })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityRow {
    pub l1_distance: f64,
    pub sup_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub rows: Vec<ContinuityRow>,
    pub passed: bool,
}

/// Ordinary controls equal to `v` with every switch time shifted by each
/// of `shifts`.
pub fn shifted_switches(
    v: &OrdinaryControl,
    v_set: &ControlSet,
    shifts: &[f64],
) -> Result<Vec<OrdinaryControl>> {
    let iv = v.interval();
    shifts
        .iter()
        .map(|d| {
            let mut starts = vec![iv.a];
            let mut values = Vec::new();
            for (i, (s, _, val)) in v.pieces().enumerate() {
                if i > 0 {
                    starts.push((s + d).clamp(iv.a, iv.b));
                }
                values.push(val.to_vec());
            }
            OrdinaryControl::new(iv, starts, values, v_set)
        })
        .collect()
}

/// Sup-norm distance between the solutions for `v` and each `v_k`, sampled
/// on a uniform grid of 2001 points plus all switch times. Passes when the
/// last three errors do not increase.
pub fn ordinary_control_continuity_check(
    spec: &SystemSpec,
    x_bar: &[f64],
    u: &ImpulsiveControl,
    v: &OrdinaryControl,
    v_seq: &[OrdinaryControl],
    cfg: &SolveConfig,
) -> Result<ContinuityReport> {
    if v_seq.is_empty() {
        return Err(Error::InvalidConfig(
            "need at least one ordinary control in the sequence".into(),
        ));
    }
    with_thread_cap(|| {
        let iv = spec.interval();
        let base = limit_solve(spec, x_bar, u, v, cfg)?;
        let mut grid: Vec<f64> = (0..=2000)
            .map(|i| iv.a + iv.length() * i as f64 / 2000.0)
            .collect();
        grid.extend(v.switch_times());
        for vk in v_seq {
            grid.extend(vk.switch_times());
        }
        let grid = sorted_unique(grid, iv);
        let reference = grid
            .par_iter()
            .map(|t| base.evaluate(*t))
            .collect::<Result<Vec<_>>>()?;
        let rows = v_seq
            .par_iter()
            .map(|vk| {
                let traj = limit_solve(spec, x_bar, u, vk, cfg)?;
                let mut sup = 0.0f64;
                for (t, r) in grid.iter().zip(&reference) {
                    sup = sup.max(diff_norm(&traj.evaluate(*t)?, r));
                }
                Ok(ContinuityRow {
                    l1_distance: vk.l1_distance(v),
                    sup_error: sup,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sups: Vec<f64> = rows.iter().map(|r| r.sup_error).collect();
        let passed = trend_verdict(&sups, f64::INFINITY);
        Ok(ContinuityReport { rows, passed })
    })
}

/// `|| x_limit - x_classical ||_inf` on a uniform grid for an absolutely
/// continuous control, where both solvers must agree.
pub fn representation_gap(
    spec: &SystemSpec,
    x_bar: &[f64],
    u: &AcControl,
    v: &OrdinaryControl,
    cfg: &SolveConfig,
    samples: usize,
) -> Result<f64> {
    let ui = ImpulsiveControl::from_ac(u, spec.u_box().clone())?;
    let lim = limit_solve(spec, x_bar, &ui, v, cfg)?;
    let cls: DenseTrajectory = classical_solve(spec, x_bar, u, v, &cfg.integration)?;
    let iv = spec.interval();
    let mut worst = 0.0f64;
    for i in 0..=samples {
        let t = iv.a + iv.length() * i as f64 / samples as f64;
        worst = worst.max(diff_norm(&lim.evaluate(t)?, &cls.evaluate(t)?));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    #[test]
    fn anchored_mesh_contains_anchor_and_ends() {
        let iv = Interval::new(0.0, 1.0).unwrap();
        for k in [1, 2, 3, 7, 64] {
            for tau in [0.0, 0.01, 0.3, 0.5, 0.99, 1.0] {
                let m = anchored_mesh(iv, tau, k);
                assert_eq!(m[0], 0.0);
                assert_eq!(*m.last().unwrap(), 1.0);
                assert!(m.contains(&tau));
                assert!(m.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn chord_at_one_cell() {
        let s = scenarios::scalar_exp();
        let u = ImpulsiveControl::constant(s.spec.u_box().clone(), s.spec.interval(), vec![0.3])
            .unwrap();
        let sch = ApproximationScheme::new(SchemeKind::MeshInterpolation, vec![1], 0.0).unwrap();
        let a = build_ac_approximation(&u, &sch, 1).unwrap();
        assert_eq!(a.nodes().unwrap().0, &[0.0, 1.0]);
    }

    #[test]
    fn single_jump_l1_error_is_half_a_cell() {
        let s = scenarios::trivial();
        let u = &s.default_controls().u;
        for k in [4, 8, 16] {
            let sch =
                ApproximationScheme::new(SchemeKind::MeshInterpolation, vec![k], 0.75).unwrap();
            let a = build_ac_approximation(u, &sch, k).unwrap();
            assert_eq!(a.value(0.75).unwrap(), u.eval(0.75).unwrap());
            let splits = sorted_unique(a.nodes().unwrap().0.to_vec(), s.spec.interval());
            let q = Quadrature::on(&splits);
            let err = q.integrate(
                q.nodes
                    .iter()
                    .map(|t| (a.value(*t).unwrap()[0] - u.eval(*t).unwrap()[0]).abs()),
            );
            approx::assert_abs_diff_eq!(err, 0.5 / k as f64, epsilon = 1e-14);
        }
    }

    #[test]
    fn mollification_is_anchored_and_in_box() {
        let s = scenarios::polar();
        let u = &s.default_controls().u;
        for tau in [0.0, 0.25, 0.6, 0.8, 1.0] {
            let sch =
                ApproximationScheme::new(SchemeKind::Mollification, vec![4, 16], tau).unwrap();
            for k in [4, 16] {
                let a = build_ac_approximation(u, &sch, k).unwrap();
                assert_eq!(a.value(tau).unwrap(), u.eval(tau).unwrap());
                assert_eq!(a.value(0.0).unwrap(), u.eval(0.0).unwrap());
                a.check_in(u.u_box()).unwrap();
            }
        }
    }

    #[test]
    fn mollified_constant_is_constant() {
        let s = scenarios::scalar_exp();
        let u = ImpulsiveControl::constant(s.spec.u_box().clone(), s.spec.interval(), vec![0.4])
            .unwrap();
        let sch = ApproximationScheme::new(SchemeKind::Mollification, vec![8], 0.3).unwrap();
        let a = build_ac_approximation(&u, &sch, 8).unwrap();
        for (_, v) in a.nodes().unwrap().0.iter().zip(a.nodes().unwrap().1) {
            approx::assert_abs_diff_eq!(v[0], 0.4, epsilon = 1e-14);
        }
    }

    #[test]
    fn rejects_unknown_k() {
        let s = scenarios::trivial();
        let sch = ApproximationScheme::new(SchemeKind::MeshInterpolation, vec![4, 8], 0.5).unwrap();
        assert!(build_ac_approximation(&s.default_controls().u, &sch, 5).is_err());
        assert!(ApproximationScheme::new(SchemeKind::MeshInterpolation, vec![8, 4], 0.5).is_err());
    }

    #[test]
    fn trend_verdict_cases() {
        assert!(trend_verdict(&[3.0, 1.0, 0.5, 0.25], 0.3));
        assert!(!trend_verdict(&[3.0, 1.0, 0.5, 0.6], 1.0));
        assert!(!trend_verdict(&[0.5, 0.4], 0.1));
        assert!(trend_verdict(&[0.0, 0.0, 0.0], 0.0));
        assert!(!trend_verdict(&[], 1.0));
    }

    #[test]
    fn identical_controls_give_zero_rows() {
        let s = scenarios::scalar_drift();
        let c = s.default_controls();
        let seq = shifted_switches(&c.v, s.spec.v_set(), &[0.0, 0.0, 0.0]).unwrap();
        let r =
            ordinary_control_continuity_check(&s.spec, &s.x0, &c.u, &c.v, &seq, &s.solve).unwrap();
        assert!(r
            .rows
            .iter()
            .all(|r| r.sup_error == 0.0 && r.l1_distance == 0.0));
        assert!(r.passed);
    }
}
