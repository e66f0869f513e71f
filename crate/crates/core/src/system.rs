//! Problem data of an impulsive control system
//!
//! ```text
//! x' = f(t, x, u, v) + sum_a g_a(x) u_a',   x(a) = x0,
//! ```
//!
//! together with sampling audits of the standing hypotheses: vanishing Lie
//! brackets of the impulse fields and linear growth of the data.
//!
//! Audits are sampling based. A clean report means no violation was found at
//! the sampled points; it is not a certificate.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `f(t, x, u, v, out)`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `g(x, out)`.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `Dg(x, out)` with `out` the row-major `n x n` Jacobian.
pub type JacobianFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Closed time interval `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidSpec(format!(
                "interval [{a}, {b}] must satisfy a < b"
            )));
        }
        Ok(Interval { a, b })
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.a && t <= self.b
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutOfInterval {
                t,
                a: self.a,
                b: self.b,
            })
        }
    }
}

/// Axis-aligned compact box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidSpec(
                "box bounds have different lengths".into(),
            ));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidSpec(format!(
                    "box side [{lo}, {hi}] is not a compact interval"
                )));
            }
        }
        Ok(BoxSet { lower, upper })
    }

    /// Cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        BoxSet::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Membership with absolute slack `tol`.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    pub fn clamp(&self, p: &mut [f64]) {
        for (v, (lo, hi)) in p.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// All `2^dim` vertices (deduplicated for degenerate sides).
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(1 << d.min(16));
        for mask in 0..(1usize << d) {
            let c: Vec<f64> = (0..d)
                .map(|i| {
                    if mask & (1 << i) != 0 {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                })
                .collect();
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, s: &[f64]) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(s)
            .map(|((lo, hi), s)| lo + (hi - lo) * s)
            .collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                if hi > lo {
                    rng.gen_range(*lo..=*hi)
                } else {
                    *lo
                }
            })
            .collect()
    }
}

/// Ordinary-control value set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlSet {
    Finite(Vec<Vec<f64>>),
    Box(BoxSet),
}

impl ControlSet {
    /// The set `{()}` used when there is no ordinary control.
    pub fn empty() -> Self {
        ControlSet::Finite(vec![Vec::new()])
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Finite(points) => points.first().map_or(0, Vec::len),
            ControlSet::Box(b) => b.dim(),
        }
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        match self {
            ControlSet::Finite(points) => points
                .iter()
                .any(|p| p.len() == v.len() && p.iter().zip(v).all(|(a, b)| (a - b).abs() <= tol)),
            ControlSet::Box(b) => b.contains(v, tol),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ControlSet::Finite(points) => points[rng.gen_range(0..points.len())].clone(),
            ControlSet::Box(b) => b.sample(rng),
        }
    }

    /// Representative points: the finite set itself or the box corners.
    pub fn representatives(&self) -> Vec<Vec<f64>> {
        match self {
            ControlSet::Finite(points) => points.clone(),
            ControlSet::Box(b) => b.corners(),
        }
    }
}

/// One impulse vector field with its Jacobian.
#[derive(Clone)]
pub struct ImpulseField {
    name: String,
    value: FieldFn,
    jacobian: Option<JacobianFn>,
}

impl fmt::Debug for ImpulseField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImpulseField")
            .field("name", &self.name)
            .field("declared_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl ImpulseField {
    pub fn new<G, J>(name: impl Into<String>, value: G, jacobian: J) -> Self
    where
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        J: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        ImpulseField {
            name: name.into(),
            value: Arc::new(value),
            jacobian: Some(Arc::new(jacobian)),
        }
    }

    /// Field whose Jacobian is taken by central differences.
    pub fn with_fd_jacobian<G>(name: impl Into<String>, value: G) -> Self
    where
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        ImpulseField {
            name: name.into(),
            value: Arc::new(value),
            jacobian: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_declared_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Evaluates `g(x)`; non-finite output is reported as a domain failure.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.value)(x, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::DomainFailure { point: x.to_vec() })
        }
    }

    /// Row-major Jacobian of `g` at `x`.
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.jacobian {
            Some(jac) => jac(x, out),
            None => self.fd_jacobian(x, out)?,
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::DomainFailure { point: x.to_vec() })
        }
    }

    fn fd_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = x.len();
        let h = 1e-6 * (1.0 + norm(x));
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        for j in 0..n {
            xp[j] = x[j] + h;
            self.eval(&xp, &mut gp)?;
            xp[j] = x[j] - h;
            self.eval(&xp, &mut gm)?;
            xp[j] = x[j];
            for i in 0..n {
                out[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        Ok(())
    }
}

/// Full problem data. Cheap to clone; evaluators are shared.
#[derive(Clone)]
pub struct SystemSpec {
    name: String,
    n: usize,
    m: usize,
    l: usize,
    interval: Interval,
    drift: DriftFn,
    fields: Vec<ImpulseField>,
    u_box: BoxSet,
    v_set: ControlSet,
    growth_constant: f64,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("l", &self.l)
            .field("interval", &self.interval)
            .field("fields", &self.fields)
            .field("u_box", &self.u_box)
            .field("v_set", &self.v_set)
            .field("growth_constant", &self.growth_constant)
            .finish()
    }
}

/// Builder for [`SystemSpec`]; `build` checks the structural invariants.
pub struct SystemSpecBuilder {
    name: String,
    n: usize,
    interval: (f64, f64),
    drift: Option<DriftFn>,
    fields: Vec<ImpulseField>,
    u_box: Option<BoxSet>,
    v_set: ControlSet,
    growth_constant: f64,
}

impl SystemSpecBuilder {
    pub fn interval(mut self, a: f64, b: f64) -> Self {
        self.interval = (a, b);
        self
    }

    pub fn drift<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn field(mut self, g: ImpulseField) -> Self {
        self.fields.push(g);
        self
    }

    pub fn impulse_box(mut self, u_box: BoxSet) -> Self {
        self.u_box = Some(u_box);
        self
    }

    pub fn ordinary_set(mut self, v_set: ControlSet) -> Self {
        self.v_set = v_set;
        self
    }

    pub fn growth_constant(mut self, a: f64) -> Self {
        self.growth_constant = a;
        self
    }

    pub fn build(self) -> Result<SystemSpec> {
        if self.n == 0 {
            return Err(Error::InvalidSpec(
                "state dimension must be at least 1".into(),
            ));
        }
        let m = self.fields.len();
        if m == 0 {
            return Err(Error::InvalidSpec(
                "at least one impulse field is required".into(),
            ));
        }
        let interval = Interval::new(self.interval.0, self.interval.1)?;
        let u_box = self
            .u_box
            .ok_or_else(|| Error::InvalidSpec("impulse control box U is required".into()))?;
        if u_box.dim() != m {
            return Err(Error::InvalidSpec(format!(
                "U has dimension {} but there are {m} impulse fields",
                u_box.dim()
            )));
        }
        if let ControlSet::Finite(points) = &self.v_set {
            if points.is_empty() {
                return Err(Error::InvalidSpec("V must be nonempty".into()));
            }
            let l = points[0].len();
            if points.iter().any(|p| p.len() != l) {
                return Err(Error::InvalidSpec(
                    "V points have inconsistent dimensions".into(),
                ));
            }
        }
        if !(self.growth_constant > 0.0 && self.growth_constant.is_finite()) {
            return Err(Error::InvalidSpec(
                "growth constant A must be positive".into(),
            ));
        }
        let n = self.n;
        let drift = self
            .drift
            .unwrap_or_else(|| Arc::new(move |_, _, _, _, out: &mut [f64]| out.fill(0.0)));
        Ok(SystemSpec {
            name: self.name,
            n,
            m,
            l: self.v_set.dim(),
            interval,
            drift,
            fields: self.fields,
            u_box,
            v_set: self.v_set,
            growth_constant: self.growth_constant,
        })
    }
}

impl SystemSpec {
    /// Starts a builder for a system with state dimension `n`. Defaults:
    /// zero drift, no ordinary control, interval `[0, 1]`, `A = 1`.
    pub fn builder(name: impl Into<String>, n: usize) -> SystemSpecBuilder {
        SystemSpecBuilder {
            name: name.into(),
            n,
            interval: (0.0, 1.0),
            drift: None,
            fields: Vec::new(),
            u_box: None,
            v_set: ControlSet::empty(),
            growth_constant: 1.0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn l(&self) -> usize {
        self.l
    }
    pub fn interval(&self) -> Interval {
        self.interval
    }
    pub fn u_box(&self) -> &BoxSet {
        &self.u_box
    }
    pub fn v_set(&self) -> &ControlSet {
        &self.v_set
    }
    pub fn growth_constant(&self) -> f64 {
        self.growth_constant
    }
    pub fn fields(&self) -> &[ImpulseField] {
        &self.fields
    }
    pub fn field(&self, alpha: usize) -> &ImpulseField {
        &self.fields[alpha]
    }

    /// Same system on a different time interval.
    pub fn with_interval(&self, a: f64, b: f64) -> Result<SystemSpec> {
        let mut s = self.clone();
        s.interval = Interval::new(a, b)?;
        Ok(s)
    }

    /// Same system with another declared growth constant.
    pub fn with_growth_constant(&self, a: f64) -> Result<SystemSpec> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidSpec(
                "growth constant A must be positive".into(),
            ));
        }
        let mut s = self.clone();
        s.growth_constant = a;
        Ok(s)
    }

    /// Evaluates the drift `f(t, x, u, v)`.
    pub fn drift(&self, t: f64, x: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        (self.drift)(t, x, u, v, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::DomainFailure { point: x.to_vec() })
        }
    }

    /// True when every field carries a declared Jacobian.
    pub fn jacobians_declared(&self) -> bool {
        self.fields.iter().all(ImpulseField::has_declared_jacobian)
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::InvalidSpec(format!(
                "state has length {} but n = {}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Lie bracket `[g_alpha, g_beta](x) = Dg_beta(x) g_alpha(x) - Dg_alpha(x) g_beta(x)`.
/// Indices are zero-based.
pub fn lie_bracket(spec: &SystemSpec, alpha: usize, beta: usize, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_state(x)?;
    if alpha >= spec.m || beta >= spec.m {
        return Err(Error::InvalidSpec(format!(
            "field index out of range (m = {})",
            spec.m
        )));
    }
    let n = spec.n;
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; n];
    let mut ja = vec![0.0; n * n];
    let mut jb = vec![0.0; n * n];
    spec.fields[alpha].eval(x, &mut ga)?;
    spec.fields[beta].eval(x, &mut gb)?;
    spec.fields[alpha].jacobian(x, &mut ja)?;
    spec.fields[beta].jacobian(x, &mut jb)?;
    let out = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| jb[i * n + j] * ga[j] - ja[i * n + j] * gb[j])
                .sum::<f64>()
        })
        .collect();
    Ok(out)
}

/// Point where the audit found a violation, with the offending magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Aggregated result of a hypothesis audit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub samples: usize,
    pub tolerance: f64,
    pub max_bracket_norm: f64,
    pub bracket_argmax_point: Vec<f64>,
    /// Sample points where a bracket norm exceeded the tolerance.
    pub bracket_violations: Vec<Violation>,
    /// Largest observed `|(f, g_1..g_m)| / (1 + |(x, u)|)`.
    pub max_growth_ratio: f64,
    /// Samples whose growth ratio exceeded the declared constant.
    pub growth_violations: Vec<Violation>,
    pub domain_failures: Vec<Vec<f64>>,
    /// At least one Jacobian came from finite differences.
    pub jacobian_fallback: bool,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.bracket_violations.is_empty()
            && self.growth_violations.is_empty()
            && self.domain_failures.is_empty()
    }

    /// Merges a shard into `self` (max / concatenation).
    pub fn merge(&mut self, other: HypothesisReport) {
        self.samples += other.samples;
        if (other.max_bracket_norm > self.max_bracket_norm || self.bracket_argmax_point.is_empty())
            && !other.bracket_argmax_point.is_empty()
        {
            self.max_bracket_norm = other.max_bracket_norm;
            self.bracket_argmax_point = other.bracket_argmax_point;
        }
        self.max_growth_ratio = self.max_growth_ratio.max(other.max_growth_ratio);
        self.bracket_violations.extend(other.bracket_violations);
        self.growth_violations.extend(other.growth_violations);
        self.domain_failures.extend(other.domain_failures);
        self.jacobian_fallback |= other.jacobian_fallback;
    }
}

const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

/// `count` Halton points in `region` (index starting at 1).
pub fn halton_points(region: &BoxSet, count: usize) -> Vec<Vec<f64>> {
    let d = region.dim();
    (1..=count as u64)
        .map(|i| {
            let s: Vec<f64> = (0..d)
                .map(|j| radical_inverse(i, PRIMES[j % PRIMES.len()]))
                .collect();
            region.from_unit(&s)
        })
        .collect()
}

/// Extra probes: box centre, vertices, and copies of early samples with every
/// coordinate whose range straddles zero snapped to zero. Singular sets of
/// textbook fields tend to sit on coordinate subspaces, which random samples
/// never hit exactly.
fn structural_probes(region: &BoxSet, samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut probes = vec![region.center()];
    if region.dim() <= 10 {
        probes.extend(region.corners());
    }
    let straddles: Vec<bool> = region
        .lower
        .iter()
        .zip(&region.upper)
        .map(|(lo, hi)| *lo <= 0.0 && *hi >= 0.0)
        .collect();
    if straddles.iter().any(|&s| s) {
        for p in samples.iter().take(16) {
            let q: Vec<f64> = p
                .iter()
                .zip(&straddles)
                .map(|(v, s)| if *s { 0.0 } else { *v })
                .collect();
            probes.push(q);
        }
    }
    probes
}

/// Samples `|[g_alpha, g_beta]|` over `region` for every pair `alpha < beta`.
pub fn audit_commutativity(
    spec: &SystemSpec,
    region: &BoxSet,
    samples: usize,
    tol: f64,
) -> Result<HypothesisReport> {
    if samples == 0 || !(tol > 0.0) {
        return Err(Error::InvalidConfig(
            "audit needs samples >= 1 and tol > 0".into(),
        ));
    }
    if region.dim() != spec.n {
        return Err(Error::InvalidConfig(
            "audit region must have dimension n".into(),
        ));
    }
    let mut points = halton_points(region, samples);
    let probes = structural_probes(region, &points);
    points.extend(probes);

    let m = spec.m;
    let shards: Vec<HypothesisReport> = points
        .par_iter()
        .map(|x| {
            let mut r = HypothesisReport {
                samples: 1,
                tolerance: tol,
                jacobian_fallback: !spec.jacobians_declared(),
                ..Default::default()
            };
            let mut local_max = 0.0f64;
            for alpha in 0..m {
                for beta in (alpha + 1)..m {
                    match lie_bracket(spec, alpha, beta, x) {
                        Ok(br) => local_max = local_max.max(norm(&br)),
                        Err(_) => {
                            r.domain_failures.push(x.clone());
                            return r;
                        }
                    }
                }
            }
            // A single field has no distinct pair, but its domain still matters.
            if m == 1 {
                let mut g = vec![0.0; spec.n];
                let mut j = vec![0.0; spec.n * spec.n];
                if spec.fields[0].eval(x, &mut g).is_err()
                    || spec.fields[0].jacobian(x, &mut j).is_err()
                {
                    r.domain_failures.push(x.clone());
                    return r;
                }
            }
            r.max_bracket_norm = local_max;
            r.bracket_argmax_point = x.clone();
            if local_max > tol {
                r.bracket_violations.push(Violation {
                    point: x.clone(),
                    value: local_max,
                });
            }
            r
        })
        .collect();

    let mut report = HypothesisReport {
        tolerance: tol,
        ..Default::default()
    };
    for s in shards {
        report.merge(s);
    }
    report.jacobian_fallback = !spec.jacobians_declared();
    Ok(report)
}

/// Samples the linear growth bound `|(f, g_1..g_m)| <= A (1 + |(x, u)|)`.
///
/// With `region = None` states are drawn with log-uniform radii in
/// `[1e-3, 1e6]` so that superlinear growth is exposed.
pub fn audit_growth(
    spec: &SystemSpec,
    region: Option<&BoxSet>,
    samples: usize,
    seed: u64,
) -> Result<HypothesisReport> {
    if samples == 0 {
        return Err(Error::InvalidConfig("audit needs samples >= 1".into()));
    }
    if let Some(r) = region {
        if r.dim() != spec.n {
            return Err(Error::InvalidConfig(
                "audit region must have dimension n".into(),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n;
    let iv = spec.interval;
    let draws: Vec<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = (0..samples)
        .map(|_| {
            let t = rng.gen_range(iv.a..=iv.b);
            let x = match region {
                Some(r) => r.sample(&mut rng),
                None => {
                    let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let len = norm(&dir).max(1e-12);
                    let radius = 10f64.powf(rng.gen_range(-3.0..6.0));
                    dir.iter().map(|d| d / len * radius).collect()
                }
            };
            let u = spec.u_box.sample(&mut rng);
            let v = spec.v_set.sample(&mut rng);
            (t, x, u, v)
        })
        .collect();

    let a_const = spec.growth_constant;
    let shards: Vec<HypothesisReport> = draws
        .par_iter()
        .map(|(t, x, u, v)| {
            let mut r = HypothesisReport {
                samples: 1,
                ..Default::default()
            };
            let mut f = vec![0.0; n];
            let mut g = vec![0.0; n];
            let mut sq = 0.0;
            if spec.drift(*t, x, u, v, &mut f).is_err() {
                r.domain_failures.push(x.clone());
                return r;
            }
            sq += f.iter().map(|c| c * c).sum::<f64>();
            for field in &spec.fields {
                if field.eval(x, &mut g).is_err() {
                    r.domain_failures.push(x.clone());
                    return r;
                }
                sq += g.iter().map(|c| c * c).sum::<f64>();
            }
            let xu: f64 = x.iter().chain(u.iter()).map(|c| c * c).sum::<f64>().sqrt();
            let ratio = sq.sqrt() / (1.0 + xu);
            r.max_growth_ratio = ratio;
            if ratio > a_const {
                let mut point = vec![*t];
                point.extend_from_slice(x);
                point.extend_from_slice(u);
                point.extend_from_slice(v);
                r.growth_violations.push(Violation {
                    point,
                    value: ratio,
                });
            }
            r
        })
        .collect();

    let mut report = HypothesisReport {
        tolerance: a_const,
        ..Default::default()
    };
    for s in shards {
        report.merge(s);
    }
    report.jacobian_fallback = !spec.jacobians_declared();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_pair() -> SystemSpec {
        // g1 = x (Euler field), g2 = J x (rotation): they commute.
        SystemSpec::builder("linear-pair", 2)
            .field(ImpulseField::new(
                "radial",
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
            .impulse_box(BoxSet::cube(2, -1.0, 1.0).unwrap())
            .build()
            .unwrap()
    }

    fn shear_pair() -> SystemSpec {
        // g1 = (1, 0), g2 = (0, x1): [g1, g2] = (0, 1).
        SystemSpec::builder("shear", 2)
            .field(ImpulseField::new(
                "e1",
                |_, o| o.copy_from_slice(&[1.0, 0.0]),
                |_, j| j.fill(0.0),
            ))
            .field(ImpulseField::new(
                "shear",
                |x, o| {
                    o[0] = 0.0;
                    o[1] = x[0];
                },
                |_, j| j.copy_from_slice(&[0.0, 0.0, 1.0, 0.0]),
            ))
            .impulse_box(BoxSet::cube(2, -1.0, 1.0).unwrap())
            .build()
            .unwrap()
    }

    #[test]
    fn builder_rejects_bad_data() {
        assert!(SystemSpec::builder("x", 0).build().is_err());
        assert!(SystemSpec::builder("x", 1).build().is_err());
        let g = ImpulseField::new("c", |_, o| o[0] = 1.0, |_, j| j[0] = 0.0);
        assert!(SystemSpec::builder("x", 1)
            .field(g.clone())
            .impulse_box(BoxSet::cube(2, 0.0, 1.0).unwrap())
            .build()
            .is_err());
        assert!(SystemSpec::builder("x", 1)
            .field(g.clone())
            .interval(1.0, 1.0)
            .impulse_box(BoxSet::cube(1, 0.0, 1.0).unwrap())
            .build()
            .is_err());
        assert!(BoxSet::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn bracket_of_shear_pair() {
        let s = shear_pair();
        let br = lie_bracket(&s, 0, 1, &[0.3, -2.0]).unwrap();
        assert_eq!(br, vec![0.0, 1.0]);
        let rev = lie_bracket(&s, 1, 0, &[0.3, -2.0]).unwrap();
        assert_eq!(rev, vec![0.0, -1.0]);
    }

    #[test]
    fn bracket_with_itself_vanishes() {
        let s = shear_pair();
        for a in 0..2 {
            let br = lie_bracket(&s, a, a, &[0.7, 1.1]).unwrap();
            assert!(br.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn commuting_linear_pair_audit() {
        let s = linear_pair();
        let r = audit_commutativity(&s, &BoxSet::cube(2, -3.0, 3.0).unwrap(), 500, 1e-12).unwrap();
        assert_eq!(r.max_bracket_norm, 0.0);
        assert!(r.passed());
        let r = audit_commutativity(
            &shear_pair(),
            &BoxSet::cube(2, -3.0, 3.0).unwrap(),
            50,
            1e-12,
        )
        .unwrap();
        assert!(!r.passed());
        assert!((r.max_bracket_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fd_jacobian_fallback_is_flagged() {
        let s = SystemSpec::builder("fd", 2)
            .field(ImpulseField::with_fd_jacobian("radial", |x, o| {
                o.copy_from_slice(x)
            }))
            .field(ImpulseField::with_fd_jacobian("rotation", |x, o| {
                o[0] = -x[1];
                o[1] = x[0];
            }))
            .impulse_box(BoxSet::cube(2, -1.0, 1.0).unwrap())
            .build()
            .unwrap();
        let r = audit_commutativity(&s, &BoxSet::cube(2, -1.0, 1.0).unwrap(), 100, 1e-8).unwrap();
        assert!(r.jacobian_fallback);
        assert!(r.max_bracket_norm < 1e-8);
    }

    #[test]
    fn growth_audit_detects_quadratic_drift() {
        let s = SystemSpec::builder("quadratic", 1)
            .drift(|_, x, _, _, o| o[0] = x[0] * x[0])
            .field(ImpulseField::new("c", |_, o| o[0] = 1.0, |_, j| j[0] = 0.0))
            .impulse_box(BoxSet::cube(1, -1.0, 1.0).unwrap())
            .growth_constant(50.0)
            .build()
            .unwrap();
        let r = audit_growth(&s, None, 500, 7).unwrap();
        assert!(!r.growth_violations.is_empty());
        assert!(r.growth_violations.iter().all(|v| v.point[1].abs() > 10.0));
    }

    #[test]
    fn growth_audit_trivial_bound_holds() {
        let c = 1.5;
        let s = SystemSpec::builder("const", 1)
            .field(ImpulseField::new(
                "c",
                move |_, o| o[0] = c,
                |_, j| j[0] = 0.0,
            ))
            .impulse_box(BoxSet::cube(1, -1.0, 1.0).unwrap())
            .growth_constant(c + 1.0)
            .build()
            .unwrap();
        let r = audit_growth(&s, None, 1000, 3).unwrap();
        assert!(r.growth_violations.is_empty());
        assert!(r.max_growth_ratio <= c + 1e-15);
    }

    #[test]
    fn halton_points_stay_in_region() {
        let b = BoxSet::new(vec![-1.0, 2.0, 0.0], vec![1.0, 3.0, 0.0]).unwrap();
        for p in halton_points(&b, 200) {
            assert!(b.contains(&p, 0.0));
        }
    }
}
