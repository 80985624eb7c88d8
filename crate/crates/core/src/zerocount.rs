//! Counting, locating and matching zeros of holomorphic functions.
//!
//! Functions are handled in scaled form `f = value · e^{log_scale}` so that
//! the exponentially large and small terms of `G` never overflow; `|value|`
//! is the size of `f` relative to its local scale (for `G`, relative to the
//! largest term). Counting uses the argument principle by phase tracking:
//! increments of `arg f` along the contour are accumulated after refining
//! every step until the wrapped increment is below `π/4`.

use crate::error::{Error, Result};
use crate::quantization::{
    eval_g, ActionModel, Scaled, SemiclassicalParams, TermLabel, TermSet,
};
use crate::skeleton::Body;
use crate::specfun::ComplexValue;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Largest accepted wrapped phase increment per step.
const PHASE_STEP: f64 = PI / 4.0;

/// Recursion depth of the phase tracker before a zero on the path is assumed.
const MAX_DEPTH: u32 = 48;

/// Outward shifts tried when the function vanishes on a contour.
pub const CONTOUR_RETRIES: usize = 3;

/// Cell budget of one [`locate_zeros`] call.
pub const CELL_BUDGET: usize = 100_000;

/// Relative residual required of a polished zero.
pub const ZERO_RESIDUAL: f64 = 1e-9;

/// Dominance samples per `J` interval of an admissible curve.
pub const DOMINANCE_SAMPLES: usize = 20;

/// `f` as a plain complex function in scaled form.
pub fn plain<F>(f: F) -> impl Fn(ComplexValue) -> Scaled + Sync
where
    F: Fn(ComplexValue) -> ComplexValue + Sync,
{
    move |z| Scaled {
        value: f(z),
        log_scale: 0.0,
    }
}

/// `G(μ;h)` normalised by its largest term.
pub fn g_function<'a>(
    p: &'a SemiclassicalParams,
    am: &'a ActionModel,
) -> impl Fn(ComplexValue) -> Scaled + Sync + 'a {
    move |mu| {
        let g = eval_g(mu, p, am);
        Scaled {
            value: g.value,
            log_scale: g.offset / p.h,
        }
    }
}

/// `a` wrapped into `(−π, π]`.
fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Total unwrapped change of `angle(s)` for `s` from `s0` to `s1`. `angle`
/// returns `None` where the function vanishes.
fn unwrap_along<A>(angle: &A, s0: f64, s1: f64, max_step: f64) -> Result<f64>
where
    A: Fn(f64) -> Option<f64> + Sync,
{
    fn rec<A: Fn(f64) -> Option<f64> + Sync>(
        angle: &A,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        depth: u32,
    ) -> Result<f64> {
        let d = wrap(fb - fa);
        if d.abs() < PHASE_STEP {
            return Ok(d);
        }
        if depth >= MAX_DEPTH {
            return Err(Error::OnContourZero { retries: 0 });
        }
        let m = 0.5 * (a + b);
        let fm = angle(m).ok_or(Error::OnContourZero { retries: 0 })?;
        Ok(rec(angle, a, fa, m, fm, depth + 1)? + rec(angle, m, fm, b, fb, depth + 1)?)
    }
    let n = (((s1 - s0).abs() / max_step).ceil() as usize).max(1);
    let pts: Vec<f64> = (0..=n).map(|k| s0 + (s1 - s0) * k as f64 / n as f64).collect();
    let vals: Vec<Option<f64>> = pts.iter().map(|&s| angle(s)).collect();
    if vals.iter().any(|v| v.is_none()) {
        return Err(Error::OnContourZero { retries: 0 });
    }
    let vals: Vec<f64> = vals.into_iter().map(|v| v.unwrap()).collect();
    let mut total = 0.0;
    for k in 0..n {
        total += rec(angle, pts[k], vals[k], pts[k + 1], vals[k + 1], 0)?;
    }
    Ok(total)
}

/// Phase of a scaled value; `None` at (numerical) zeros.
fn phase(v: Scaled) -> Option<f64> {
    let a = v.value.norm();
    (a > 1e-300 && a.is_finite()).then(|| v.value.arg())
}

/// A closed, positively oriented polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub vertices: Vec<ComplexValue>,
}

fn segments_intersect(a: ComplexValue, b: ComplexValue, c: ComplexValue, d: ComplexValue) -> bool {
    let cross = |o: ComplexValue, p: ComplexValue, q: ComplexValue| {
        (p - o).re * (q - o).im - (p - o).im * (q - o).re
    };
    let (d1, d2) = (cross(c, d, a), cross(c, d, b));
    let (d3, d4) = (cross(a, b, c), cross(a, b, d));
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

impl Contour {
    /// Validate simplicity, positive orientation and nonzero edges.
    pub fn new(vertices: Vec<ComplexValue>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidInput("contour needs at least 3 vertices".into()));
        }
        for k in 0..n {
            if (vertices[(k + 1) % n] - vertices[k]).norm() == 0.0 {
                return Err(Error::InvalidInput(format!("edge {k} has zero length")));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_intersect(
                    vertices[i],
                    vertices[(i + 1) % n],
                    vertices[j],
                    vertices[(j + 1) % n],
                ) {
                    return Err(Error::InvalidInput(format!("edges {i} and {j} intersect")));
                }
            }
        }
        let area: f64 = (0..n)
            .map(|k| {
                let (a, b) = (vertices[k], vertices[(k + 1) % n]);
                a.re * b.im - b.re * a.im
            })
            .sum();
        if area <= 0.0 {
            return Err(Error::InvalidInput("contour is not positively oriented".into()));
        }
        Ok(Self { vertices })
    }

    /// The boundary of `[lo.re, hi.re] × i[lo.im, hi.im]`.
    pub fn rectangle(lo: ComplexValue, hi: ComplexValue) -> Result<Self> {
        Self::new(vec![
            lo,
            Complex64::new(hi.re, lo.im),
            hi,
            Complex64::new(lo.re, hi.im),
        ])
    }

    /// Every edge moved outward by `d` (vertices on the miter lines).
    pub fn offset(&self, d: f64) -> Self {
        let n = self.vertices.len();
        let normal = |k: usize| {
            let e = self.vertices[(k + 1) % n] - self.vertices[k];
            Complex64::new(e.im, -e.re) / e.norm()
        };
        let vertices = (0..n)
            .map(|k| {
                let (n1, n2) = (normal((k + n - 1) % n), normal(k));
                let dot = n1.re * n2.re + n1.im * n2.im;
                self.vertices[k] + (n1 + n2) * (d / (1.0 + dot))
            })
            .collect();
        Self { vertices }
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|k| (self.vertices[(k + 1) % n] - self.vertices[k]).norm())
            .sum()
    }
}

/// Unwrapped change of `arg f` around the contour at a given resolution.
fn total_phase<F>(f: &F, c: &Contour, max_step: f64) -> Result<f64>
where
    F: Fn(ComplexValue) -> Scaled + Sync,
{
    let n = c.vertices.len();
    let mut total = 0.0;
    for k in 0..n {
        let (a, b) = (c.vertices[k], c.vertices[(k + 1) % n]);
        let len = (b - a).norm();
        let angle = |s: f64| phase(f(a + (b - a) * (s / len)));
        total += unwrap_along(&angle, 0.0, len, max_step)?;
    }
    Ok(total)
}

/// Winding number on a fixed contour, refined until two successive
/// resolutions agree.
fn winding_once<F>(f: &F, c: &Contour, max_step: f64) -> Result<i64>
where
    F: Fn(ComplexValue) -> Scaled + Sync,
{
    let mut step = max_step;
    let mut prev = total_phase(f, c, step)?;
    for _ in 0..8 {
        step *= 0.5;
        let cur = total_phase(f, c, step)?;
        let (a, b) = ((prev / TAU).round(), (cur / TAU).round());
        if a == b && (cur / TAU - b).abs() < 1e-6 {
            return Ok(b as i64);
        }
        prev = cur;
    }
    Err(Error::NoConvergence {
        last: c.vertices[0],
        residual: (prev / TAU - (prev / TAU).round()).abs(),
        iterations: 8,
    })
}

/// Number of zeros of `f` inside `c`. `max_step` bounds the initial sample
/// spacing; when `f` vanishes on `c` the contour is moved outward by `shift`
/// up to [`CONTOUR_RETRIES`] times.
pub fn winding_count<F>(f: &F, c: &Contour, max_step: f64, shift: f64) -> Result<i64>
where
    F: Fn(ComplexValue) -> Scaled + Sync,
{
    let mut contour = c.clone();
    for retry in 0..=CONTOUR_RETRIES {
        match winding_once(f, &contour, max_step) {
            Err(Error::OnContourZero { .. }) if retry < CONTOUR_RETRIES => {
                contour = contour.offset(shift);
            }
            Err(Error::OnContourZero { .. }) => {
                return Err(Error::OnContourZero { retries: retry })
            }
            other => return other,
        }
    }
    unreachable!("the loop returns on its last iteration")
}

/// Axis-parallel rectangle `[lo.re, hi.re] × i[lo.im, hi.im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: ComplexValue,
    pub hi: ComplexValue,
}

impl Rect {
    pub fn new(lo: ComplexValue, hi: ComplexValue) -> Self {
        Self { lo, hi }
    }

    pub fn diameter(&self) -> f64 {
        (self.hi - self.lo).norm()
    }

    pub fn center(&self) -> ComplexValue {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, z: ComplexValue) -> bool {
        z.re >= self.lo.re && z.re <= self.hi.re && z.im >= self.lo.im && z.im <= self.hi.im
    }

    fn grown(&self, by: f64) -> Self {
        let d = Complex64::new(by, by);
        Self::new(self.lo - d, self.hi + d)
    }

    fn contour(&self) -> Result<Contour> {
        Contour::rectangle(self.lo, self.hi)
    }

    /// Four children split at the fractions `(tx, ty)`.
    fn split(&self, tx: f64, ty: f64) -> [Rect; 4] {
        let xm = self.lo.re + tx * (self.hi.re - self.lo.re);
        let ym = self.lo.im + ty * (self.hi.im - self.lo.im);
        let c = Complex64::new;
        [
            Rect::new(self.lo, c(xm, ym)),
            Rect::new(c(xm, self.lo.im), c(self.hi.re, ym)),
            Rect::new(c(self.lo.re, ym), c(xm, self.hi.im)),
            Rect::new(c(xm, ym), self.hi),
        ]
    }
}

/// How a zero set was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZeroMethod {
    Winding,
    GridNewton,
}

/// One located zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zero {
    pub location: ComplexValue,
    /// Newton converged to the residual tolerance inside its cell and the
    /// cell held a single zero.
    pub validated: bool,
    /// `|value|` at the zero, i.e. relative to the local scale.
    pub residual: f64,
}

/// A set of zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroSet {
    pub zeros: Vec<Zero>,
    pub method: ZeroMethod,
}

impl ZeroSet {
    pub fn locations(&self) -> Vec<ComplexValue> {
        self.zeros.iter().map(|z| z.location).collect()
    }

    /// Rows `(re, im, residual, method)` for CSV export.
    pub fn csv_rows(&self) -> Vec<(f64, f64, f64, String)> {
        self.zeros
            .iter()
            .map(|z| (z.location.re, z.location.im, z.residual, format!("{:?}", self.method)))
            .collect()
    }
}

/// Newton's method with a central-difference derivative of step `delta`;
/// returns the final iterate and its relative residual.
pub fn newton_polish<F>(f: &F, z0: ComplexValue, delta: f64) -> (ComplexValue, f64)
where
    F: Fn(ComplexValue) -> Scaled + Sync,
{
    let mut z = z0;
    let mut best = (z0, f64::INFINITY);
    for _ in 0..60 {
        let v = f(z);
        let r = v.value.norm();
        if r < best.1 {
            best = (z, r);
        }
        if r == 0.0 || !r.is_finite() {
            break;
        }
        let (vp, vm) = (f(z + delta), f(z - delta));
        let rel = |w: Scaled| w.value * (w.log_scale - v.log_scale).exp();
        let df = (rel(vp) - rel(vm)) / (2.0 * delta);
        if df.norm() == 0.0 || !df.norm().is_finite() {
            break;
        }
        let step = v.value / df;
        z -= step;
        if step.norm() <= 1e-15 * z.norm().max(delta) {
            let r = f(z).value.norm();
            if r < best.1 {
                best = (z, r);
            }
            break;
        }
    }
    best
}

/// Locate all zeros of `f` in `region` by recursive quadrisection down to
/// cells of diameter `h/50`, then Newton polishing.
pub fn locate_zeros<F>(f: &F, region: Rect, h: f64) -> Result<ZeroSet>
where
    F: Fn(ComplexValue) -> Scaled + Sync,
{
    let max_step = h / 20.0;
    let count = |r: &Rect| -> Result<i64> { winding_once(f, &r.contour()?, max_step.min(r.diameter() / 8.0)) };
    let mut region = region;
    let mut root = None;
    for retry in 0..=CONTOUR_RETRIES {
        match count(&region) {
            Ok(n) => {
                root = Some(n);
                break;
            }
            Err(Error::OnContourZero { .. }) if retry < CONTOUR_RETRIES => {
                region = region.grown(h / 100.0);
            }
            Err(Error::OnContourZero { .. }) => return Err(Error::OnContourZero { retries: retry }),
            Err(e) => return Err(e),
        }
    }
    let root = root.expect("set on success");
    let mut cells = vec![(region, root)];
    let mut finals: Vec<(Rect, i64)> = vec![];
    let mut used = 1usize;
    let splits = [(0.5137, 0.4871), (0.4789, 0.5213), (0.5411, 0.4593), (0.4461, 0.5529)];
    while !cells.is_empty() {
        let (done, todo): (Vec<_>, Vec<_>) = cells
            .into_iter()
            .filter(|(_, n)| *n > 0)
            .partition(|(r, n)| r.diameter() <= h / 50.0 && (*n == 1 || r.diameter() <= h * 1e-6));
        finals.extend(done);
        used += 4 * todo.len();
        if used > CELL_BUDGET {
            return Err(Error::CellBudget {
                budget: CELL_BUDGET,
                found: finals.iter().map(|c| c.1 as usize).sum(),
            });
        }
        let children: Vec<Result<Vec<(Rect, i64)>>> = todo
            .par_iter()
            .map(|(r, n)| {
                let mut last = Error::Mismatch("no split tried".into());
                for &(tx, ty) in &splits {
                    let kids = r.split(tx, ty);
                    let counts: Result<Vec<i64>> = kids.iter().map(&count).collect();
                    match counts {
                        Ok(cs) if cs.iter().sum::<i64>() == *n => {
                            return Ok(kids.into_iter().zip(cs).collect());
                        }
                        Ok(cs) => {
                            last = Error::Mismatch(format!(
                                "children counts {cs:?} do not add up to {n}"
                            ))
                        }
                        Err(e) => last = e,
                    }
                }
                Err(last)
            })
            .collect();
        cells = vec![];
        for c in children {
            cells.extend(c?);
        }
    }
    let zeros: Vec<Zero> = finals
        .par_iter()
        .flat_map_iter(|(r, n)| {
            let (z, res) = newton_polish(f, r.center(), h * 1e-3);
            let inside = r.grown(0.1 * r.diameter()).contains(z);
            let validated = *n == 1 && inside && res <= ZERO_RESIDUAL;
            let loc = if inside { z } else { r.center() };
            let residual = if inside { res } else { f(loc).value.norm() };
            (0..*n).map(move |_| Zero {
                location: loc,
                validated,
                residual,
            })
        })
        .collect();
    Ok(ZeroSet {
        zeros,
        method: ZeroMethod::Winding,
    })
}

/// Zeros found by Newton's method from an `n × n` grid of starting points,
/// deduplicated and restricted to `region`.
pub fn grid_newton_zeros<F>(f: &F, region: Rect, h: f64, n: usize) -> ZeroSet
where
    F: Fn(ComplexValue) -> Scaled + Sync,
{
    let starts: Vec<ComplexValue> = (0..n)
        .flat_map(|i| {
            (0..n).map(move |j| {
                let t = |k: usize| (k as f64 + 0.5) / n as f64;
                Complex64::new(
                    region.lo.re + t(i) * (region.hi.re - region.lo.re),
                    region.lo.im + t(j) * (region.hi.im - region.lo.im),
                )
            })
        })
        .collect();
    let found: Vec<(ComplexValue, f64)> = starts
        .par_iter()
        .map(|&z| newton_polish(f, z, h * 1e-3))
        .filter(|(z, r)| *r <= ZERO_RESIDUAL && region.contains(*z))
        .collect();
    let mut zeros: Vec<Zero> = vec![];
    for (z, r) in found {
        if zeros.iter().all(|q| (q.location - z).norm() > h * 1e-6) {
            zeros.push(Zero {
                location: z,
                validated: true,
                residual: r,
            });
        }
    }
    zeros.sort_by(|a, b| {
        (a.location.re, a.location.im)
            .partial_cmp(&(b.location.re, b.location.im))
            .unwrap()
    });
    ZeroSet {
        zeros,
        method: ZeroMethod::GridNewton,
    }
}

/// Dominance class of a label: the split terms `4±` (or `1±`) form one class.
fn class_of(l: TermLabel) -> TermLabel {
    match l {
        TermLabel::FourPlus | TermLabel::FourMinus => TermLabel::Four,
        TermLabel::OnePlus | TermLabel::OneMinus => TermLabel::One,
        other => other,
    }
}

/// Rate of a dominance class: the larger rate of a split pair.
fn class_rate(ts: &TermSet, class: TermLabel) -> f64 {
    ts.terms
        .iter()
        .filter(|t| class_of(t.label) == class)
        .map(|t| t.rate)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn dominant_class(ts: &TermSet) -> TermLabel {
    let best = ts
        .terms
        .iter()
        .max_by(|a, b| a.rate.partial_cmp(&b.rate).unwrap())
        .expect("nonempty term set");
    class_of(best.label)
}

/// Phase of the term (or recombined split term) of a class.
fn class_phase(ts: &TermSet, class: TermLabel) -> f64 {
    let split = ts.terms.iter().filter(|t| class_of(t.label) == class).count() > 1;
    if split {
        ts.log_combined().im
    } else {
        ts.terms
            .iter()
            .find(|t| t.label == class)
            .expect("class present")
            .log_value
            .im
    }
}

/// Part of an admissible curve, in arclength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SegmentKind {
    /// A single term (class) dominates.
    J { label: TermLabel },
    /// A short crossing interval.
    I { touches_be: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSegment {
    pub s_start: f64,
    pub s_end: f64,
    pub kind: SegmentKind,
}

/// A polyline parametrised by arclength with a partition `J₀ I₁ J₁ … I_M J_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleCurve {
    pub path: Vec<ComplexValue>,
    pub partition: Vec<CurveSegment>,
}

fn ln_inv(t: f64) -> f64 {
    (1.0 / t).ln().max(std::f64::consts::LN_2)
}

impl AdmissibleCurve {
    pub fn length(&self) -> f64 {
        self.path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Point at arclength `s` (clamped to the ends).
    pub fn point_at(&self, s: f64) -> ComplexValue {
        let mut rest = s.max(0.0);
        for w in self.path.windows(2) {
            let l = (w[1] - w[0]).norm();
            if rest <= l {
                return w[0] + (w[1] - w[0]) * (rest / l);
            }
            rest -= l;
        }
        *self.path.last().expect("nonempty path")
    }

    /// Partition a path automatically: sample at spacing `ds`, label every
    /// sample by its dominant class, and make each change of class a
    /// crossing interval between the neighbouring samples.
    pub fn auto_partition<P>(
        path: Vec<ComplexValue>,
        provider: &P,
        ds: f64,
        body: Option<&Body>,
    ) -> Result<Self>
    where
        P: Fn(ComplexValue) -> TermSet + Sync,
    {
        if path.len() < 2 {
            return Err(Error::InvalidInput("path needs two points".into()));
        }
        let mut curve = Self {
            path,
            partition: vec![],
        };
        let len = curve.length();
        let n = ((len / ds).ceil() as usize).max(1);
        let ss: Vec<f64> = (0..=n).map(|k| len * k as f64 / n as f64).collect();
        let labels: Vec<TermLabel> = ss
            .par_iter()
            .map(|&s| dominant_class(&provider(curve.point_at(s))))
            .collect();
        let mut start = 0.0;
        for k in 0..n {
            if labels[k + 1] != labels[k] {
                curve.partition.push(CurveSegment {
                    s_start: start,
                    s_end: ss[k],
                    kind: SegmentKind::J { label: labels[k] },
                });
                let mid = curve.point_at(0.5 * (ss[k] + ss[k + 1]));
                curve.partition.push(CurveSegment {
                    s_start: ss[k],
                    s_end: ss[k + 1],
                    kind: SegmentKind::I {
                        touches_be: body.is_some_and(|b| b.in_be(mid)),
                    },
                });
                start = ss[k + 1];
            }
        }
        curve.partition.push(CurveSegment {
            s_start: start,
            s_end: len,
            kind: SegmentKind::J { label: labels[n] },
        });
        Ok(curve)
    }

    /// Check the admissibility clauses with crossing-length constant `c`.
    pub fn validate<P>(&self, provider: &P, h: f64, c: f64) -> Result<()>
    where
        P: Fn(ComplexValue) -> TermSet + Sync,
    {
        let len = self.length();
        let parts = &self.partition;
        if parts.is_empty() {
            return Err(Error::NotAdmissible("empty partition".into()));
        }
        if parts[0].s_start != 0.0 || (parts[parts.len() - 1].s_end - len).abs() > 1e-12 * len.max(1.0) {
            return Err(Error::NotAdmissible("partition does not cover the curve".into()));
        }
        for w in parts.windows(2) {
            if w[0].s_end != w[1].s_start {
                return Err(Error::NotAdmissible("partition is not contiguous".into()));
            }
        }
        let is_j = |s: &CurveSegment| matches!(s.kind, SegmentKind::J { .. });
        if !is_j(&parts[0]) || !is_j(&parts[parts.len() - 1]) {
            return Err(Error::NotAdmissible("endpoints lie in a crossing interval".into()));
        }
        for (k, w) in parts.windows(2).enumerate() {
            if is_j(&w[0]) == is_j(&w[1]) {
                return Err(Error::NotAdmissible(format!("segments {k} and {} do not alternate", k + 1)));
            }
        }
        let slack = h * ln_inv(h).ln();
        for seg in parts {
            match seg.kind {
                SegmentKind::I { touches_be } => {
                    let mid = self.point_at(0.5 * (seg.s_start + seg.s_end));
                    let l = ln_inv(h.hypot(mid.norm()));
                    let bound = if touches_be {
                        c * h * l.ln().max(1.0) / l
                    } else {
                        c * h / l
                    };
                    if seg.s_end - seg.s_start > bound {
                        return Err(Error::NotAdmissible(format!(
                            "crossing interval at {mid} has length {} > {bound}",
                            seg.s_end - seg.s_start
                        )));
                    }
                }
                SegmentKind::J { label } => {
                    for k in 0..DOMINANCE_SAMPLES {
                        let t = k as f64 / (DOMINANCE_SAMPLES - 1) as f64;
                        let mu = self.point_at(seg.s_start + t * (seg.s_end - seg.s_start));
                        let ts = provider(mu);
                        let own = class_rate(&ts, label);
                        let other = ts
                            .terms
                            .iter()
                            .filter(|x| class_of(x.label) != label)
                            .map(|x| x.rate)
                            .fold(f64::NEG_INFINITY, f64::max);
                        if own < other - slack {
                            return Err(Error::NotAdmissible(format!(
                                "term {label} does not dominate at {mu}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Result of [`phase_sum_count`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSum {
    /// `(1/2πh) Re Σ_k (φ_ν(μ_{k,e}) − φ_ν(μ_{k,s}))` with `φ_ν = (h/i) ln a_ν`.
    pub estimate: f64,
    /// `Re (1/2πi) ∫ G′/G` along the curve.
    pub direct: f64,
    pub discrepancy: f64,
}

/// Compare the dominant-term phase sum with the direct phase increment of
/// `G` along an admissible curve.
pub fn phase_sum_count<P>(curve: &AdmissibleCurve, provider: &P, h: f64) -> Result<PhaseSum>
where
    P: Fn(ComplexValue) -> TermSet + Sync,
{
    curve.validate(provider, h, 10.0)?;
    let step = |a: f64, b: f64| {
        let mid = curve.point_at(0.5 * (a + b));
        (h / (8.0 * ln_inv(h.hypot(mid.norm())))).min((b - a).max(1e-300))
    };
    let mut estimate = 0.0;
    for seg in &curve.partition {
        if let SegmentKind::J { label } = seg.kind {
            let angle = |s: f64| {
                let v = class_phase(&provider(curve.point_at(s)), label);
                v.is_finite().then_some(v)
            };
            estimate += unwrap_along(&angle, seg.s_start, seg.s_end, step(seg.s_start, seg.s_end))?;
        }
    }
    let len = curve.length();
    let angle = |s: f64| {
        let g = provider(curve.point_at(s)).sum();
        let a = g.value.norm();
        (a > 1e-300 && a.is_finite()).then(|| g.value.arg())
    };
    let direct = unwrap_along(&angle, 0.0, len, step(0.0, len))?;
    let (estimate, direct) = (estimate / TAU, direct / TAU);
    Ok(PhaseSum {
        estimate,
        direct,
        discrepancy: (estimate - direct).abs(),
    })
}

/// One matched pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub found: ComplexValue,
    pub predicted: ComplexValue,
    pub distance: f64,
    pub bound: f64,
}

/// Outcome of [`match_points`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_found: Vec<ComplexValue>,
    pub unmatched_predicted: Vec<ComplexValue>,
}

impl MatchReport {
    pub fn is_bijection(&self) -> bool {
        self.unmatched_found.is_empty() && self.unmatched_predicted.is_empty()
    }

    /// Largest `distance / bound` over the pairs.
    pub fn worst_ratio(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.distance / p.bound)
            .fold(0.0, f64::max)
    }
}

/// Greedy nearest-neighbour matching: pairs are taken in order of
/// increasing distance and accepted when both points are free and the
/// distance is within `rate` at the predicted point.
pub fn match_points<R>(found: &[ComplexValue], predicted: &[ComplexValue], rate: R) -> MatchReport
where
    R: Fn(ComplexValue) -> f64,
{
    let bounds: Vec<f64> = predicted.iter().map(|&z| rate(z)).collect();
    let mut cand: Vec<(f64, usize, usize)> = vec![];
    for (i, &f) in found.iter().enumerate() {
        for (j, &q) in predicted.iter().enumerate() {
            let d = (f - q).norm();
            if d <= bounds[j] {
                cand.push((d, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut used_f = vec![false; found.len()];
    let mut used_p = vec![false; predicted.len()];
    let mut pairs = vec![];
    for (d, i, j) in cand {
        if !used_f[i] && !used_p[j] {
            used_f[i] = true;
            used_p[j] = true;
            pairs.push(MatchedPair {
                found: found[i],
                predicted: predicted[j],
                distance: d,
                bound: bounds[j],
            });
        }
    }
    MatchReport {
        pairs,
        unmatched_found: found.iter().zip(&used_f).filter(|(_, u)| !**u).map(|(z, _)| *z).collect(),
        unmatched_predicted: predicted
            .iter()
            .zip(&used_p)
            .filter(|(_, u)| !**u)
            .map(|(z, _)| *z)
            .collect(),
    }
}

/// [`match_points`], failing unless the matching is a bijection.
pub fn match_bijection<R>(
    found: &ZeroSet,
    predicted: &ZeroSet,
    rate: R,
) -> Result<MatchReport>
where
    R: Fn(ComplexValue) -> f64,
{
    let report = match_points(&found.locations(), &predicted.locations(), rate);
    if report.is_bijection() {
        Ok(report)
    } else {
        Err(Error::Bijection {
            unmatched_found: report.unmatched_found.len(),
            unmatched_predicted: report.unmatched_predicted.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapping() {
        assert_eq!(wrap(0.5), 0.5);
        assert!((wrap(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap(-3.0 * PI / 2.0) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn contour_validation() {
        let c = |a: f64, b: f64| Complex64::new(a, b);
        assert!(Contour::new(vec![c(0., 0.), c(1., 0.), c(1., 1.), c(0., 1.)]).is_ok());
        // Clockwise.
        assert!(Contour::new(vec![c(0., 0.), c(0., 1.), c(1., 1.), c(1., 0.)]).is_err());
        // Bow tie.
        assert!(Contour::new(vec![c(0., 0.), c(1., 1.), c(1., 0.), c(0., 1.)]).is_err());
        let sq = Contour::rectangle(c(0., 0.), c(1., 1.)).unwrap();
        let big = sq.offset(0.5);
        assert!((big.vertices[0] - c(-0.5, -0.5)).norm() < 1e-15);
        assert!((big.perimeter() - 8.0).abs() < 1e-14);
    }
}
