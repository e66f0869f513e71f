//! Control signals.
//!
//! * [`ImpulsiveControl`]: an everywhere-defined `u: [a, b] -> U`, possibly with
//!   infinitely many discontinuities accumulating at declared points. The
//!   pointwise value matters: two controls that agree almost everywhere
//!   produce different limit solutions at the points where they differ.
//! * [`OrdinaryControl`]: a piecewise-constant `v: [a, b] -> V`.
//! * [`AcControl`]: a piecewise-C¹ (hence absolutely continuous) impulse
//!   control, the class for which the system is a classical ODE.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{BoxSet, ControlSet, Interval};

/// `u(t, out)`.
pub type ControlFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

const SET_TOL: f64 = 1e-12;

/// Breakpoints `t_k` converging monotonically to `limit` as `k` grows.
#[derive(Clone)]
pub struct AccumulatingSequence {
    term: Arc<dyn Fn(u64) -> f64 + Send + Sync>,
    first_index: u64,
    limit: f64,
}

impl fmt::Debug for AccumulatingSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AccumulatingSequence")
            .field("first_index", &self.first_index)
            .field("limit", &self.limit)
            .finish()
    }
}

impl AccumulatingSequence {
    pub fn new<F>(first_index: u64, limit: f64, term: F) -> Self
    where
        F: Fn(u64) -> f64 + Send + Sync + 'static,
    {
        AccumulatingSequence {
            term: Arc::new(term),
            first_index,
            limit,
        }
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    /// Terms farther than `eps` from the limit, and the side from which the
    /// sequence approaches (`true` = from below).
    fn truncated(&self, eps: f64) -> Result<(Vec<f64>, bool)> {
        const MAX_TERMS: u64 = 100_000_000;
        let mut out = Vec::new();
        let first = (self.term)(self.first_index);
        let from_below = first < self.limit;
        let mut k = self.first_index;
        loop {
            let t = (self.term)(k);
            if (t - self.limit).abs() < eps {
                break;
            }
            if let Some(&prev) = out.last() {
                let monotone = if from_below { t > prev } else { t < prev };
                if !monotone {
                    return Err(Error::InvalidControl(format!(
                        "breakpoint sequence is not strictly monotone at index {k}"
                    )));
                }
            }
            out.push(t);
            k += 1;
            if k - self.first_index > MAX_TERMS {
                return Err(Error::InvalidControl(
                    "breakpoint sequence does not reach its limit; increase eps_accumulation"
                        .into(),
                ));
            }
        }
        Ok((out, from_below))
    }
}

/// Declared discontinuity times of a control.
#[derive(Debug, Clone, Default)]
pub struct BreakpointStream {
    pub finite: Vec<f64>,
    pub sequences: Vec<AccumulatingSequence>,
}

/// Neighbourhood of an accumulation point inside which breakpoints are not
/// resolved and the control is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenGap {
    pub start: f64,
    pub end: f64,
}

/// Breakpoints resolved at a given truncation radius.
#[derive(Debug, Clone, Default)]
pub struct ResolvedBreakpoints {
    pub points: Vec<f64>,
    pub gaps: Vec<FrozenGap>,
}

impl BreakpointStream {
    pub fn finite(points: Vec<f64>) -> Self {
        BreakpointStream {
            finite: points,
            sequences: Vec::new(),
        }
    }

    pub fn with_sequence(mut self, seq: AccumulatingSequence) -> Self {
        self.sequences.push(seq);
        self
    }

    pub fn accumulation_points(&self) -> Vec<f64> {
        self.sequences.iter().map(|s| s.limit).collect()
    }

    /// Resolves every breakpoint at distance at least `eps` from the
    /// accumulation points; the `eps`-neighbourhoods on the approach side
    /// become frozen gaps. Accumulation points are themselves breakpoints.
    pub fn resolve(&self, interval: Interval, eps: f64) -> Result<ResolvedBreakpoints> {
        let mut points: Vec<f64> = self.finite.clone();
        let mut gaps = Vec::new();
        for seq in &self.sequences {
            let (terms, from_below) = seq.truncated(eps)?;
            points.extend(terms);
            points.push(seq.limit);
            let gap = if from_below {
                FrozenGap {
                    start: (seq.limit - eps).max(interval.a),
                    end: seq.limit,
                }
            } else {
                FrozenGap {
                    start: seq.limit,
                    end: (seq.limit + eps).min(interval.b),
                }
            };
            if gap.end > gap.start {
                gaps.push(gap);
            }
        }
        points.retain(|t| *t > interval.a && *t < interval.b);
        points.retain(|t| !gaps.iter().any(|g| *t > g.start && *t < g.end));
        points.sort_by(f64::total_cmp);
        points.dedup();
        gaps.sort_by(|a, b| a.start.total_cmp(&b.start));
        Ok(ResolvedBreakpoints { points, gaps })
    }
}

/// Everywhere-defined impulse control with values in the box `U`.
#[derive(Clone)]
pub struct ImpulsiveControl {
    eval: ControlFn,
    breakpoints: BreakpointStream,
    value_at_a: Vec<f64>,
    u_box: BoxSet,
    interval: Interval,
}

impl fmt::Debug for ImpulsiveControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImpulsiveControl")
            .field("interval", &self.interval)
            .field("value_at_a", &self.value_at_a)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

impl ImpulsiveControl {
    /// Wraps an evaluator. `value_at_a` must agree with `eval(a)`.
    pub fn new<F>(
        u_box: BoxSet,
        interval: Interval,
        eval: F,
        breakpoints: BreakpointStream,
        value_at_a: Vec<f64>,
    ) -> Result<Self>
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        for t in &breakpoints.finite {
            if !interval.contains(*t) {
                return Err(Error::InvalidControl(format!(
                    "breakpoint {t} outside [{}, {}]",
                    interval.a, interval.b
                )));
            }
        }
        for s in &breakpoints.sequences {
            if !interval.contains(s.limit) {
                return Err(Error::InvalidControl(format!(
                    "accumulation point {} outside the interval",
                    s.limit
                )));
            }
        }
        let ctl = ImpulsiveControl {
            eval: Arc::new(eval),
            breakpoints,
            value_at_a,
            u_box,
            interval,
        };
        let ua = ctl.eval(interval.a)?;
        if ua.len() != ctl.value_at_a.len() || ua.iter().zip(&ctl.value_at_a).any(|(x, y)| x != y) {
            return Err(Error::InvalidControl(format!(
                "u(a) = {ua:?} differs from the declared value_at_a {:?}",
                ctl.value_at_a
            )));
        }
        Ok(ctl)
    }

    /// Piecewise-constant control: value `values[i]` on `[knots[i], knots[i+1])`
    /// with the last piece closed at `b`; `overrides` replace the value at
    /// isolated instants.
    pub fn piecewise_constant(
        u_box: BoxSet,
        interval: Interval,
        switch_times: Vec<f64>,
        values: Vec<Vec<f64>>,
        overrides: Vec<(f64, Vec<f64>)>,
    ) -> Result<Self> {
        if values.len() != switch_times.len() + 1 {
            return Err(Error::InvalidControl(
                "need exactly one more value than switch times".into(),
            ));
        }
        if switch_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidControl(
                "switch times must be strictly increasing".into(),
            ));
        }
        for (t, _) in &overrides {
            if !interval.contains(*t) {
                return Err(Error::InvalidControl(format!(
                    "override time {t} outside the interval"
                )));
            }
        }
        let m = u_box.dim();
        if values
            .iter()
            .chain(overrides.iter().map(|(_, v)| v))
            .any(|v| v.len() != m)
        {
            return Err(Error::InvalidControl(format!(
                "control values must have length {m}"
            )));
        }
        let mut bps = switch_times.clone();
        bps.extend(overrides.iter().map(|(t, _)| *t));
        let st = switch_times.clone();
        let eval = move |t: f64, out: &mut [f64]| {
            if let Some((_, v)) = overrides.iter().find(|(s, _)| *s == t) {
                out.copy_from_slice(v);
                return;
            }
            let idx = st.partition_point(|s| *s <= t);
            out.copy_from_slice(&values[idx]);
        };
        let mut ua = vec![0.0; m];
        eval(interval.a, &mut ua);
        ImpulsiveControl::new(u_box, interval, eval, BreakpointStream::finite(bps), ua)
    }

    /// Constant control.
    pub fn constant(u_box: BoxSet, interval: Interval, value: Vec<f64>) -> Result<Self> {
        ImpulsiveControl::piecewise_constant(u_box, interval, Vec::new(), vec![value], Vec::new())
    }

    /// Views an absolutely continuous control as an impulsive one; its kinks
    /// become breakpoints.
    pub fn from_ac(ac: &AcControl, u_box: BoxSet) -> Result<Self> {
        let inner = ac.clone();
        let ua = ac.value(ac.interval().a)?;
        ImpulsiveControl::new(
            u_box,
            ac.interval(),
            move |t, out| inner.value_into(t, out),
            BreakpointStream::finite(ac.kinks().to_vec()),
            ua,
        )
    }

    /// Same control with the value replaced at isolated instants.
    pub fn with_point_values(&self, overrides: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let base = self.eval.clone();
        let mut bps = self.breakpoints.clone();
        bps.finite.extend(overrides.iter().map(|(t, _)| *t));
        let ov = overrides.clone();
        let eval = move |t: f64, out: &mut [f64]| {
            if let Some((_, v)) = ov.iter().find(|(s, _)| *s == t) {
                out.copy_from_slice(v);
            } else {
                base(t, out);
            }
        };
        let a = self.interval.a;
        let ua = overrides
            .iter()
            .find(|(s, _)| *s == a)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| self.value_at_a.clone());
        ImpulsiveControl::new(self.u_box.clone(), self.interval, eval, bps, ua)
    }

    pub fn dim(&self) -> usize {
        self.u_box.dim()
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn u_box(&self) -> &BoxSet {
        &self.u_box
    }

    pub fn value_at_a(&self) -> &[f64] {
        &self.value_at_a
    }

    pub fn breakpoints(&self) -> &BreakpointStream {
        &self.breakpoints
    }

    /// `u(t)`, checked against `U`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.interval.check(t)?;
        (self.eval)(t, out);
        if !self.u_box.contains(out, SET_TOL) || out.iter().any(|v| !v.is_finite()) {
            return Err(Error::ControlOutOfSet {
                t,
                value: out.to_vec(),
            });
        }
        Ok(())
    }
}

/// Piecewise-constant ordinary control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinaryControl {
    interval: Interval,
    /// Start time of each piece; the first is `a`.
    starts: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl OrdinaryControl {
    /// Pieces `[starts[i], starts[i+1])`, last one closed at `b`.
    pub fn new(
        interval: Interval,
        starts: Vec<f64>,
        values: Vec<Vec<f64>>,
        v_set: &ControlSet,
    ) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() {
            return Err(Error::InvalidControl(
                "ordinary control needs one value per piece".into(),
            ));
        }
        if starts[0] != interval.a {
            return Err(Error::InvalidControl("first piece must start at a".into()));
        }
        if starts.windows(2).any(|w| w[0] >= w[1]) || *starts.last().unwrap() >= interval.b {
            return Err(Error::InvalidControl(
                "piece start times must increase inside [a, b)".into(),
            ));
        }
        for v in &values {
            if !v_set.contains(v, SET_TOL) {
                return Err(Error::ControlOutOfSet {
                    t: f64::NAN,
                    value: v.clone(),
                });
            }
        }
        Ok(OrdinaryControl {
            interval,
            starts,
            values,
        })
    }

    pub fn constant(interval: Interval, value: Vec<f64>, v_set: &ControlSet) -> Result<Self> {
        OrdinaryControl::new(interval, vec![interval.a], vec![value], v_set)
    }

    /// Constant control for systems without ordinary inputs (`l = 0`).
    pub fn none(interval: Interval) -> Self {
        OrdinaryControl {
            interval,
            starts: vec![interval.a],
            values: vec![Vec::new()],
        }
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Interior switch times.
    pub fn switch_times(&self) -> &[f64] {
        &self.starts[1..]
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, &[f64])> {
        let b = self.interval.b;
        self.starts.iter().enumerate().map(move |(i, s)| {
            let end = self.starts.get(i + 1).copied().unwrap_or(b);
            (*s, end, self.values[i].as_slice())
        })
    }

    pub fn value(&self, t: f64) -> &[f64] {
        let idx = self.starts.partition_point(|s| *s <= t).max(1) - 1;
        &self.values[idx]
    }

    /// `||v - w||_1` (Euclidean norm inside the integral).
    pub fn l1_distance(&self, other: &OrdinaryControl) -> f64 {
        let mut cuts: Vec<f64> = self.starts.iter().chain(&other.starts).copied().collect();
        cuts.push(self.interval.b);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let d: f64 = self
                    .value(mid)
                    .iter()
                    .zip(other.value(mid))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                d * (w[1] - w[0])
            })
            .sum()
    }
}

#[derive(Clone)]
enum AcKind {
    PiecewiseLinear {
        nodes: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    Smooth {
        value: ControlFn,
        derivative: ControlFn,
        kinks: Vec<f64>,
    },
}

/// Piecewise-C¹ impulse control with known derivative.
#[derive(Clone)]
pub struct AcControl {
    interval: Interval,
    dim: usize,
    kind: AcKind,
}

impl fmt::Debug for AcControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            AcKind::PiecewiseLinear { nodes, .. } => {
                format!("piecewise-linear ({} nodes)", nodes.len())
            }
            AcKind::Smooth { kinks, .. } => format!("smooth ({} kinks)", kinks.len()),
        };
        f.debug_struct("AcControl")
            .field("interval", &self.interval)
            .field("kind", &kind)
            .finish()
    }
}

impl AcControl {
    /// Linear interpolation of `values` at `nodes`; nodes must start at `a`
    /// and end at `b`.
    pub fn piecewise_linear(
        interval: Interval,
        nodes: Vec<f64>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(Error::InvalidControl(
                "piecewise-linear control needs >= 2 nodes with values".into(),
            ));
        }
        if nodes[0] != interval.a || *nodes.last().unwrap() != interval.b {
            return Err(Error::InvalidControl(
                "nodes must start at a and end at b".into(),
            ));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidControl(
                "nodes must be strictly increasing".into(),
            ));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidControl(
                "inconsistent control dimension".into(),
            ));
        }
        Ok(AcControl {
            interval,
            dim,
            kind: AcKind::PiecewiseLinear { nodes, values },
        })
    }

    /// Smooth pieces given by closures; derivative jumps only at `kinks`.
    pub fn smooth<F, D>(
        interval: Interval,
        dim: usize,
        value: F,
        derivative: D,
        kinks: Vec<f64>,
    ) -> Self
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
        D: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        AcControl {
            interval,
            dim,
            kind: AcKind::Smooth {
                value: Arc::new(value),
                derivative: Arc::new(derivative),
                kinks,
            },
        }
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Interior times where the derivative may jump.
    pub fn kinks(&self) -> &[f64] {
        match &self.kind {
            AcKind::PiecewiseLinear { nodes, .. } => &nodes[1..nodes.len() - 1],
            AcKind::Smooth { kinks, .. } => kinks,
        }
    }

    /// Nodes and values of a piecewise-linear control.
    pub fn nodes(&self) -> Option<(&[f64], &[Vec<f64>])> {
        match &self.kind {
            AcKind::PiecewiseLinear { nodes, values } => Some((nodes, values)),
            AcKind::Smooth { .. } => None,
        }
    }

    fn cell(nodes: &[f64], t: f64) -> usize {
        nodes.partition_point(|s| *s <= t).clamp(1, nodes.len() - 1) - 1
    }

    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        match &self.kind {
            AcKind::PiecewiseLinear { nodes, values } => {
                let i = Self::cell(nodes, t);
                let w = (t - nodes[i]) / (nodes[i + 1] - nodes[i]);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = values[i][k] + w * (values[i + 1][k] - values[i][k]);
                }
                // Exact at nodes.
                if t == nodes[i + 1] {
                    out.copy_from_slice(&values[i + 1]);
                }
            }
            AcKind::Smooth { value, .. } => value(t, out),
        }
    }

    pub fn value(&self, t: f64) -> Result<Vec<f64>> {
        self.interval.check(t)?;
        let mut out = vec![0.0; self.dim];
        self.value_into(t, &mut out);
        Ok(out)
    }

    /// Right derivative (left derivative at `b`).
    pub fn derivative_into(&self, t: f64, out: &mut [f64]) {
        match &self.kind {
            AcKind::PiecewiseLinear { nodes, values } => {
                let i = Self::cell(nodes, t);
                let h = nodes[i + 1] - nodes[i];
                for (k, o) in out.iter_mut().enumerate() {
                    *o = (values[i + 1][k] - values[i][k]) / h;
                }
            }
            AcKind::Smooth { derivative, .. } => derivative(t, out),
        }
    }

    /// Checks that the control stays in `U` at its nodes (sufficient for
    /// piecewise-linear controls on a box) or on a fine grid otherwise.
    pub fn check_in(&self, u_box: &BoxSet) -> Result<()> {
        if u_box.dim() != self.dim {
            return Err(Error::InvalidControl(
                "control dimension differs from U".into(),
            ));
        }
        let times: Vec<f64> = match &self.kind {
            AcKind::PiecewiseLinear { nodes, .. } => nodes.clone(),
            AcKind::Smooth { .. } => {
                let iv = self.interval;
                (0..=1000)
                    .map(|i| iv.a + iv.length() * i as f64 / 1000.0)
                    .collect()
            }
        };
        let mut out = vec![0.0; self.dim];
        for t in times {
            self.value_into(t, &mut out);
            if !u_box.contains(&out, SET_TOL) {
                return Err(Error::ControlOutOfSet { t, value: out });
            }
        }
        Ok(())
    }
}
