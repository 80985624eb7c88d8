//! Curves where two terms of `G` balance, the skeleton built from them and
//! its thickening (the body).
//!
//! Every balance curve `Γ_{j,k} = {r_j = r_k}` is written as an implicit
//! equation
//!
//! ```text
//! (Im μ) ln(1/|μ|) = F_{j,k}(μ),
//! ```
//!
//! which is solved for `y = Im μ` at fixed `x = Re μ` by a damped Newton
//! iteration. The rates `r_j` carry the term `(Im μ)ln(1/|μ|)` with
//! coefficient `+1` for the `a₁` family, `−1` for the `a₄` family and `0` for
//! `a₂`, `a₃`, so `F_{j,k} = y ln(1/|μ|) − (r_j − r_k)/(c_j − c_k)`. Since
//! all regimes of `G` are exact, `F_{j,k}` does not depend on the regime
//! chosen at a sample; only the admissibility of that regime does.

use crate::calibration::{SECTOR_C, SMALL_C1};
use crate::error::{Error, Result};
use crate::poly::CPoly;
use crate::quantization::{
    regime_admissible, term_set_unchecked, ActionModel, Regime, SemiclassicalParams, TermLabel,
};
use crate::specfun::ComplexValue;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

/// Largest `|Re μ|` handled by the curve solver.
pub const WORKING_EXTENT: f64 = 0.3;

/// Smallest nonzero `|Re μ|` handled by the curve solver.
pub const MIN_ABS_X: f64 = 1e-8;

/// Damped-Newton step budget of [`solve_curve`].
pub const CURVE_MAX_ITER: usize = 60;

/// Right end of the bisection bracket for the crossing points.
pub const CROSSING_BRACKET_RIGHT: f64 = 0.05;

/// Default diamond and body constant.
pub const DEFAULT_BODY_C: f64 = 10.0;

/// `ln(1/t)`, floored at `ln 2` so that widths stay finite for `t` near 1.
fn ln_inv(t: f64) -> f64 {
    (1.0 / t).ln().max(LN_2)
}

/// `⟨μ⟩_h = √(h² + |μ|²)`.
pub fn bracket_h(mu: ComplexValue, h: f64) -> f64 {
    h.hypot(mu.norm())
}

/// Which boundary of the body a curve is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Upper,
    Lower,
}

/// The implicit equation `y ln(1/|x+iy|) = F(x+iy)`.
pub struct ImplicitCurveProblem<F: Fn(ComplexValue) -> f64> {
    pub f: F,
    pub side: Side,
}

impl<F: Fn(ComplexValue) -> f64> ImplicitCurveProblem<F> {
    pub fn new(f: F, side: Side) -> Self {
        Self { f, side }
    }

    /// Largest `|F|` and a sampled Lipschitz constant on the rectangle
    /// `[−x_ext, x_ext] × [−y_ext, y_ext]` (a `n × n` grid).
    pub fn sample_bounds(&self, x_ext: f64, y_ext: f64, n: usize) -> (f64, f64) {
        let pts: Vec<ComplexValue> = (0..n)
            .flat_map(|i| {
                (0..n).map(move |j| {
                    let s = |k: usize, e: f64| -e + 2.0 * e * k as f64 / (n - 1) as f64;
                    Complex64::new(s(i, x_ext), s(j, y_ext))
                })
            })
            .collect();
        let vals: Vec<f64> = pts.iter().map(|&z| (self.f)(z)).collect();
        let max_f = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut lip = 0.0_f64;
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                let d = (pts[a] - pts[b]).norm();
                if d > 0.0 {
                    lip = lip.max((vals[a] - vals[b]).abs() / d);
                }
            }
        }
        (max_f, lip)
    }
}

/// `y ln(1/|x+iy|)`, continuous at the origin.
fn y_log_term(x: f64, y: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        -y * 0.5 * (x * x + y * y).ln()
    }
}

/// Smallest positive root of `y ln(1/y) = z` for `0 < z < 1/e`, via the
/// fixed point `Y = Z + ln Y` with `Y = ln(1/y)`, `Z = ln(1/z)`.
pub fn small_root_y_log(z: f64) -> Result<f64> {
    if !(z > 0.0 && z < (-1.0_f64).exp()) {
        return Err(Error::InvalidInput(format!(
            "y ln(1/y) = {z} has no small root (need 0 < z < 1/e)"
        )));
    }
    let zz = -z.ln();
    let mut yy = zz;
    for _ in 0..200 {
        let next = zz + yy.ln();
        if (next - yy).abs() <= 1e-15 * next {
            yy = next;
            break;
        }
        yy = next;
    }
    Ok((-yy).exp())
}

/// Initial guess: `F/ln(1/|x|)` when `|F| ≤ |x| ln(1/|x|)`, else the small
/// root of `y ln(1/|y|) = F`.
pub fn curve_seed(fx: f64, x: f64) -> Result<f64> {
    if fx == 0.0 {
        return Ok(0.0);
    }
    let ax = x.abs();
    if ax > 0.0 && fx.abs() <= ax * (1.0 / ax).ln() {
        return Ok(fx / (1.0 / ax).ln());
    }
    Ok(fx.signum() * small_root_y_log(fx.abs())?)
}

/// Solve `y ln(1/|x+iy|) = F(x+iy)` for `y` at fixed `x`.
pub fn solve_curve<F: Fn(ComplexValue) -> f64>(prob: &ImplicitCurveProblem<F>, x: f64) -> Result<f64> {
    if x != 0.0 && !(MIN_ABS_X..=WORKING_EXTENT).contains(&x.abs()) {
        return Err(Error::InvalidInput(format!(
            "x = {x} outside 1e-8 <= |x| <= {WORKING_EXTENT}"
        )));
    }
    let f_at = |y: f64| (prob.f)(Complex64::new(x, y));
    let g = |y: f64| {
        let fy = f_at(y);
        (y_log_term(x, y) - fy, fy)
    };
    let f0 = f_at(0.0);
    if x == 0.0 && f0 == 0.0 {
        return Ok(0.0);
    }
    let mut y = curve_seed(f0, x)?;
    let (mut gy, mut fy) = g(y);
    for _ in 0..CURVE_MAX_ITER {
        if gy.abs() <= 1e-12 * fy.abs().max(1.0) {
            return Ok(y);
        }
        let scale = x.abs().max(y.abs()).max(1e-14);
        let d = 1e-6 * scale;
        let dg = (g(y + d).0 - g(y - d).0) / (2.0 * d);
        if !dg.is_finite() || dg == 0.0 {
            break;
        }
        let step = -gy / dg;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = y + t * step;
            // At x = 0 stay on the branch with |y| < 1/e.
            if x == 0.0 && (cand.abs() >= 0.35 || cand.signum() != y.signum()) {
                t *= 0.5;
                continue;
            }
            let (gc, fc) = g(cand);
            if gc.abs() < gy.abs() || gc.abs() <= 1e-12 * fc.abs().max(1.0) {
                y = cand;
                gy = gc;
                fy = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if gy.abs() <= 1e-12 * fy.abs().max(1.0) {
        return Ok(y);
    }
    Err(Error::NoConvergence {
        last: Complex64::new(x, y),
        residual: gy.abs(),
        iterations: CURVE_MAX_ITER,
    })
}

/// Coefficient of `(Im μ)ln(1/|μ|)` in the rate of a term.
fn log_coefficient(l: TermLabel) -> i32 {
    match l {
        TermLabel::One | TermLabel::OnePlus | TermLabel::OneMinus => 1,
        TermLabel::Two | TermLabel::Three => 0,
        TermLabel::Four | TermLabel::FourPlus | TermLabel::FourMinus => -1,
    }
}

/// `Some(true)` for labels only present in Case 1, `Some(false)` for Case 2.
fn label_case(l: TermLabel) -> Option<bool> {
    match l {
        TermLabel::One | TermLabel::FourPlus | TermLabel::FourMinus => Some(true),
        TermLabel::OnePlus | TermLabel::OneMinus | TermLabel::Four => Some(false),
        TermLabel::Two | TermLabel::Three => None,
    }
}

/// Which `±` split a label belongs to (`Some(true)` for `+`).
fn label_sign(l: TermLabel) -> Option<bool> {
    match l {
        TermLabel::OnePlus | TermLabel::FourPlus => Some(true),
        TermLabel::OneMinus | TermLabel::FourMinus => Some(false),
        _ => None,
    }
}

/// An unordered pair of term labels defining `Γ_{j,k}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CurvePair(pub TermLabel, pub TermLabel);

impl CurvePair {
    /// Whether the pair uses Case 1 terms; errors for inconsistent pairs.
    pub fn case1(self) -> Result<bool> {
        let (a, b) = (label_case(self.0), label_case(self.1));
        if log_coefficient(self.0) == log_coefficient(self.1) {
            return Err(Error::InvalidInput(format!(
                "pair ({},{}) does not define a curve",
                self.0, self.1
            )));
        }
        match (a, b) {
            (Some(x), Some(y)) if x != y => Err(Error::InvalidInput(format!(
                "pair ({},{}) mixes the two cases",
                self.0, self.1
            ))),
            (Some(x), _) | (_, Some(x)) => Ok(x),
            (None, None) => unreachable!("labels 2 and 3 share a coefficient"),
        }
    }

    /// Check that the pair may be traced over `[x_min, x_max]`.
    pub fn check_range(self, x_min: f64, x_max: f64) -> Result<bool> {
        let case1 = self.case1()?;
        for l in [self.0, self.1] {
            match label_sign(l) {
                Some(true) if x_min < 0.0 => {
                    return Err(Error::InvalidInput(format!(
                        "label {l} requires Re mu >= 0, range starts at {x_min}"
                    )))
                }
                Some(false) if x_max > 0.0 => {
                    return Err(Error::InvalidInput(format!(
                        "label {l} requires Re mu <= 0, range ends at {x_max}"
                    )))
                }
                _ => {}
            }
        }
        Ok(case1)
    }

    pub fn label(self) -> String {
        format!("{},{}", self.0, self.1)
    }
}

/// Regime used to evaluate the rates of a pair at μ.
fn sample_regime(mu: ComplexValue, h: f64, case1: bool) -> Regime {
    let small = mu.norm() <= SMALL_C1 * h;
    match (case1, small) {
        (true, true) => Regime::Case1Small,
        (true, false) => Regime::Case1Large,
        (false, true) => Regime::Case2Small,
        (false, false) => Regime::Case2Large,
    }
}

/// `F_{j,k}(μ)` such that `Γ_{j,k} = {(Im μ) ln(1/|μ|) = F_{j,k}(μ)}`.
pub fn pair_f(pair: CurvePair, mu: ComplexValue, h: f64, am: &ActionModel) -> f64 {
    let case1 = pair.case1().expect("valid pair");
    let ts = term_set_unchecked(mu, h, am, sample_regime(mu, h, case1));
    let dc = (log_coefficient(pair.0) - log_coefficient(pair.1)) as f64;
    y_log_term(mu.re, mu.im) - (ts.rate(pair.0) - ts.rate(pair.1)) / dc
}

/// Spacing rule of the x-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    /// Base step is `factor · h / ln(1/⟨x⟩_h)`.
    pub factor: f64,
    /// Points near which the step is refined.
    pub refine_near: Vec<f64>,
    /// Refinement divisor.
    pub refine_by: f64,
    /// Refinement applies within this many base steps of a refine point.
    pub refine_within: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            factor: 0.25,
            refine_near: vec![],
            refine_by: 4.0,
            refine_within: 10.0,
        }
    }
}

impl StepRule {
    pub fn refined_near(points: Vec<f64>) -> Self {
        Self {
            refine_near: points,
            ..Self::default()
        }
    }

    /// Grid from `x_min` to `x_max` inclusive; nonzero points closer to 0
    /// than [`MIN_ABS_X`] are moved to 0.
    pub fn grid(&self, x_min: f64, x_max: f64, h: f64) -> Vec<f64> {
        let mut out = vec![];
        let mut x = x_min;
        loop {
            let snapped = if x != 0.0 && x.abs() < MIN_ABS_X { 0.0 } else { x };
            if out.last().map_or(true, |&l: &f64| snapped > l) {
                out.push(snapped);
            }
            if x >= x_max {
                break;
            }
            let mut s = self.factor * h / ln_inv(h.hypot(x));
            if self
                .refine_near
                .iter()
                .any(|&r| (x - r).abs() <= self.refine_within * s)
            {
                s /= self.refine_by;
            }
            // Land exactly on 0 when crossing it.
            let next = x + s;
            x = if x < 0.0 && next > 0.0 { 0.0 } else { next.min(x_max) };
        }
        out
    }
}

/// One accepted point of a traced curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub x: f64,
    pub y: f64,
    pub regime: Regime,
}

/// A run of dropped grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub x_from: f64,
    pub x_to: f64,
    pub reason: String,
}

/// A traced balance curve `y = γ_{j,k}(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonCurve {
    pub pair: CurvePair,
    pub samples: Vec<CurveSample>,
    pub gaps: Vec<Gap>,
}

impl SkeletonCurve {
    /// Linear interpolation of `γ` at `x`, `None` outside the samples or
    /// across a gap.
    pub fn y_at(&self, x: f64) -> Option<f64> {
        let s = &self.samples;
        let k = s.partition_point(|p| p.x < x);
        if k < s.len() && s[k].x == x {
            return Some(s[k].y);
        }
        if k == 0 || k == s.len() {
            return None;
        }
        let (a, b) = (s[k - 1], s[k]);
        if self.gaps.iter().any(|g| g.x_from > a.x && g.x_to < b.x) {
            return None;
        }
        Some(a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x))
    }

    /// Largest `|Δy/Δx| · ln(1/|μ|)` between consecutive samples.
    pub fn max_scaled_slope(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| {
                let slope = ((w[1].y - w[0].y) / (w[1].x - w[0].x)).abs();
                let r = Complex64::new(w[0].x, w[0].y)
                    .norm()
                    .max(Complex64::new(w[1].x, w[1].y).norm());
                slope * ln_inv(r)
            })
            .fold(0.0, f64::max)
    }
}

/// Solve `γ_{j,k}(x)` at one point and the regime used there.
pub fn gamma_at(
    pair: CurvePair,
    x: f64,
    p: &SemiclassicalParams,
    am: &ActionModel,
) -> Result<CurveSample> {
    let case1 = pair.case1()?;
    let h = p.h;
    let prob = ImplicitCurveProblem::new(|mu| pair_f(pair, mu, h, am), Side::Upper);
    let y = solve_curve(&prob, x)?;
    let mu = Complex64::new(x, y);
    let regime = sample_regime(mu, h, case1);
    regime_admissible(mu, p, regime)?;
    Ok(CurveSample { x, y, regime })
}

/// Trace `Γ_{j,k}` over `[x_min, x_max]`.
pub fn trace_gamma(
    pair: CurvePair,
    p: &SemiclassicalParams,
    am: &ActionModel,
    x_range: (f64, f64),
    step_rule: &StepRule,
) -> Result<SkeletonCurve> {
    let (x_min, x_max) = x_range;
    if !(x_min <= x_max && x_min >= -WORKING_EXTENT && x_max <= WORKING_EXTENT) {
        return Err(Error::InvalidInput(format!(
            "x range [{x_min}, {x_max}] outside the working interval"
        )));
    }
    pair.check_range(x_min, x_max)?;
    let grid = step_rule.grid(x_min, x_max, p.h);
    let results: Vec<_> = grid
        .par_iter()
        .map(|&x| gamma_at(pair, x, p, am))
        .collect();
    let mut samples = vec![];
    let mut gaps: Vec<Gap> = vec![];
    let mut open: Option<Gap> = None;
    for (&x, r) in grid.iter().zip(results) {
        match r {
            Ok(s) => {
                if let Some(g) = open.take() {
                    gaps.push(g);
                }
                samples.push(s);
            }
            Err(e) => {
                let reason = match e {
                    Error::Regime { .. } => "forbidden region".to_string(),
                    other => other.to_string(),
                };
                match open.as_mut() {
                    Some(g) => g.x_to = x,
                    None => {
                        open = Some(Gap {
                            x_from: x,
                            x_to: x,
                            reason,
                        })
                    }
                }
            }
        }
    }
    if let Some(g) = open {
        gaps.push(g);
    }
    Ok(SkeletonCurve {
        pair,
        samples,
        gaps,
    })
}

/// `Im S₁₂(μ) − Im S₃₄(μ)`.
fn im_action_difference(mu: ComplexValue, am: &ActionModel) -> f64 {
    let (a, b) = am.eval(mu);
    a.im - b.im
}

/// Bisection for `−2π x = sign·(Im S₁₂ − Im S₃₄)(x + iγ₁,₄⁻(x))`.
fn crossing_on_gamma14(p: &SemiclassicalParams, am: &ActionModel, sign: f64) -> Option<ComplexValue> {
    let pair = CurvePair(TermLabel::One, TermLabel::FourMinus);
    let h = p.h;
    let point = |x: f64| -> Option<(f64, ComplexValue)> {
        let x = if x != 0.0 && x.abs() < MIN_ABS_X { 0.0 } else { x };
        let prob = ImplicitCurveProblem::new(|mu| pair_f(pair, mu, h, am), Side::Upper);
        let y = solve_curve(&prob, x).ok()?;
        let mu = Complex64::new(x, y);
        Some((-2.0 * PI * x - sign * im_action_difference(mu, am), mu))
    };
    // Γ₁,₄⁻ continued to Re μ > 0 has F ≈ −πRe μ, so the bracket stays
    // where |F| is below the 1/e limit of the equation.
    let (mut lo, mut hi) = (-WORKING_EXTENT, CROSSING_BRACKET_RIGHT);
    let (mut flo, _) = point(lo)?;
    let (fhi, _) = point(hi)?;
    if flo == 0.0 {
        return Some(point(lo)?.1);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let (fm, _) = point(mid)?;
        if fm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    let (_, mu) = point(0.5 * (lo + hi))?;
    let regime = sample_regime(mu, h, true);
    regime_admissible(mu, p, regime).ok()?;
    Some(mu)
}

/// The crossing points `μ_A`, `μ_B` of `Γ₁,₄⁻` with the curves
/// `−2πRe μ = ±(Im S₁₂ − Im S₃₄)`; `None` when hidden in a forbidden region
/// or absent from the working interval.
pub fn find_crossings(
    p: &SemiclassicalParams,
    am: &ActionModel,
) -> (Option<ComplexValue>, Option<ComplexValue>) {
    (
        crossing_on_gamma14(p, am, 1.0),
        crossing_on_gamma14(p, am, -1.0),
    )
}

/// Which case the skeleton was assembled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkeletonCase {
    /// Vertical part `Γ₄` on the positive imaginary axis.
    Case1,
    /// Vertical part `Γ₁` on the negative imaginary axis.
    Case2,
}

/// Construction used in the left half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeftRule {
    /// `Γ₁,₄⁻` left of `Re μ_A`, then `Γ₃,₄⁻` and `Γ₁,₃` up to 0.
    AroundA,
    /// `Γ₁,₄⁻` left of `Re μ_B`, then `Γ₂,₄⁻` and `Γ₁,₂` up to 0.
    AroundB,
    /// No crossing in the closed left half-plane: `Γ₁,₄⁻` throughout.
    Gamma14Only,
}

/// A piece of `S′`; consecutive pieces with the same `chain` are joined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonPiece {
    pub chain: usize,
    pub curve: SkeletonCurve,
}

/// The vertical part of the skeleton on `Re μ = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerticalSegment {
    pub y_from: f64,
    pub y_to: f64,
}

/// Diamond `|Re μ| + |Im μ − Im c| ≤ half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diamond {
    pub center: ComplexValue,
    pub half_width: f64,
}

impl Diamond {
    pub fn contains(&self, mu: ComplexValue) -> bool {
        let d = mu - self.center;
        d.re.abs() + d.im.abs() <= self.half_width
    }
}

/// The skeleton `S = S′ ∪ Γ₄` (or `Γ₁`), its diamonds and crossing points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub case: SkeletonCase,
    pub left_rule: LeftRule,
    pub h: f64,
    pub s_prime: Vec<SkeletonPiece>,
    pub gamma_vertical: Option<VerticalSegment>,
    pub diamonds: Vec<Diamond>,
    pub mu_a: Option<ComplexValue>,
    pub mu_b: Option<ComplexValue>,
    pub body_constant: f64,
}

/// Options of [`assemble_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonOptions {
    /// The skeleton is traced over `|Re μ| ≤ extent`.
    pub extent: f64,
    /// Base step factor of the x-grid.
    pub step_factor: f64,
}

impl Default for SkeletonOptions {
    fn default() -> Self {
        Self {
            extent: WORKING_EXTENT,
            step_factor: 0.25,
        }
    }
}

/// Swap the roles under `μ ↦ μ̄`: `1± ↔ 4±`, `1 ↔ 4`, `2 ↔ 3`.
fn mirror_label(l: TermLabel) -> TermLabel {
    match l {
        TermLabel::One => TermLabel::Four,
        TermLabel::Four => TermLabel::One,
        TermLabel::OnePlus => TermLabel::FourPlus,
        TermLabel::FourPlus => TermLabel::OnePlus,
        TermLabel::OneMinus => TermLabel::FourMinus,
        TermLabel::FourMinus => TermLabel::OneMinus,
        TermLabel::Two => TermLabel::Three,
        TermLabel::Three => TermLabel::Two,
    }
}

fn mirror_regime(r: Regime) -> Regime {
    match r {
        Regime::Case1Large => Regime::Case2Large,
        Regime::Case1Small => Regime::Case2Small,
        Regime::Case2Large => Regime::Case1Large,
        Regime::Case2Small => Regime::Case1Small,
    }
}

/// The model with conjugated coefficients, `S̄(μ) = conj(S(μ̄))`; the zeros
/// of `G` for `S̄` are the conjugates of those for `S`.
pub fn conjugate_model(am: &ActionModel) -> ActionModel {
    let c = |q: &CPoly| CPoly::new(q.coeffs.iter().map(|z| z.conj()).collect());
    ActionModel {
        s12: c(&am.s12),
        s34: c(&am.s34),
        description: am.description.clone(),
        physical: am.physical,
    }
}

/// Sample-wise maximum (`upper`) or minimum of two curves on a common grid,
/// split into runs taken from one curve.
fn envelope(a: &SkeletonCurve, b: &SkeletonCurve, upper: bool) -> Vec<SkeletonCurve> {
    let mut runs: Vec<SkeletonCurve> = vec![];
    for sa in &a.samples {
        let Some(yb) = b.samples.iter().find(|s| s.x == sa.x) else {
            continue;
        };
        let take_a = if upper { sa.y >= yb.y } else { sa.y <= yb.y };
        let (src, s) = if take_a { (a, *sa) } else { (b, *yb) };
        match runs.last_mut() {
            Some(r) if r.pair == src.pair => r.samples.push(s),
            _ => runs.push(SkeletonCurve {
                pair: src.pair,
                samples: vec![s],
                gaps: vec![],
            }),
        }
    }
    let gaps: Vec<Gap> = a.gaps.iter().chain(&b.gaps).cloned().collect();
    for r in &mut runs {
        let (lo, hi) = (r.samples[0].x, r.samples[r.samples.len() - 1].x);
        r.gaps = gaps
            .iter()
            .filter(|g| g.x_to >= lo && g.x_from <= hi)
            .cloned()
            .collect();
    }
    runs
}

/// x-positions where `a − b` changes sign on the common grid.
fn sign_changes(a: &SkeletonCurve, b: &SkeletonCurve) -> Vec<f64> {
    let mut out = vec![];
    let mut prev: Option<(f64, f64)> = None;
    for sa in &a.samples {
        if let Some(sb) = b.samples.iter().find(|s| s.x == sa.x) {
            let d = sa.y - sb.y;
            if let Some((px, pd)) = prev {
                if pd.signum() != d.signum() {
                    out.push(0.5 * (px + sa.x));
                }
            }
            prev = Some((sa.x, d));
        }
    }
    out
}

/// Case 1 assembly of `S′`, `Γ₄` and the diamonds for `am`, together with
/// the lower envelope of the right half-plane curves at `Re μ = 0`
/// (unclipped, `∞` if unsolvable).
fn assemble_case1(
    p: &SemiclassicalParams,
    am: &ActionModel,
    c_body: f64,
    opts: &SkeletonOptions,
) -> Result<(Skeleton, f64)> {
    use TermLabel::*;
    let h = p.h;
    let ext = opts.extent;
    let base = StepRule {
        factor: opts.step_factor,
        ..StepRule::default()
    };
    let (mu_a, mu_b) = find_crossings(p, am);

    // Right half-plane: the envelopes of Γ₁,₂ = Γ₃,₄⁺ and Γ₁,₃ = Γ₂,₄⁺.
    let g12 = trace_gamma(CurvePair(One, Two), p, am, (0.0, ext), &base)?;
    let g13 = trace_gamma(CurvePair(One, Three), p, am, (0.0, ext), &base)?;
    let crossings = sign_changes(&g12, &g13);
    let (g12, g13) = if crossings.is_empty() {
        (g12, g13)
    } else {
        let rule = StepRule {
            refine_near: crossings,
            ..base.clone()
        };
        (
            trace_gamma(CurvePair(One, Two), p, am, (0.0, ext), &rule)?,
            trace_gamma(CurvePair(One, Three), p, am, (0.0, ext), &rule)?,
        )
    };
    let mut s_prime = vec![];
    for c in envelope(&g12, &g13, true) {
        s_prime.push(SkeletonPiece { chain: 0, curve: c });
    }
    for c in envelope(&g12, &g13, false) {
        s_prime.push(SkeletonPiece { chain: 1, curve: c });
    }

    // Left half-plane.
    let pick = |m: Option<ComplexValue>| m.filter(|z| z.re <= 0.0 && z.re >= -ext);
    let (left_rule, x_c, pair_a, pair_b) = if let Some(m) = pick(mu_a) {
        (LeftRule::AroundA, m.re, Three, Three)
    } else if let Some(m) = pick(mu_b) {
        (LeftRule::AroundB, m.re, Two, Two)
    } else {
        (LeftRule::Gamma14Only, 0.0, Three, Three)
    };
    let rule = StepRule {
        refine_near: vec![x_c],
        ..base.clone()
    };
    let g14 = trace_gamma(CurvePair(One, FourMinus), p, am, (-ext, x_c), &rule)?;
    s_prime.push(SkeletonPiece { chain: 2, curve: g14 });
    if left_rule != LeftRule::Gamma14Only && x_c < 0.0 {
        let lower = trace_gamma(CurvePair(pair_a, FourMinus), p, am, (x_c, 0.0), &rule)?;
        let upper = trace_gamma(CurvePair(One, pair_b), p, am, (x_c, 0.0), &rule)?;
        s_prime.push(SkeletonPiece { chain: 3, curve: lower });
        s_prime.push(SkeletonPiece { chain: 4, curve: upper });
    }

    // Vertical part and diamonds below the lower envelope at 0.
    let y_top = [CurvePair(One, Two), CurvePair(One, Three)]
        .iter()
        .filter_map(|&pair| {
            let prob = ImplicitCurveProblem::new(|mu| pair_f(pair, mu, h, am), Side::Lower);
            solve_curve(&prob, 0.0).ok()
        })
        .fold(f64::INFINITY, f64::min);
    let y_floor = SECTOR_C * h;
    let gamma_vertical = (y_top.is_finite() && y_top >= y_floor).then_some(VerticalSegment {
        y_from: y_floor,
        y_to: y_top,
    });
    let mut diamonds = vec![];
    if y_top.is_finite() {
        let mut k = 0u64;
        while (k as f64 + 0.5) * h <= y_top && k < 1_000_000 {
            let center = Complex64::new(0.0, (k as f64 + 0.5) * h);
            diamonds.push(Diamond {
                center,
                half_width: c_body * h / ln_inv(bracket_h(center, h)),
            });
            k += 1;
        }
    }
    let sk = Skeleton {
        case: SkeletonCase::Case1,
        left_rule,
        h,
        s_prime,
        gamma_vertical,
        diamonds,
        mu_a,
        mu_b,
        body_constant: c_body,
    };
    Ok((sk, y_top))
}

impl Skeleton {
    /// Reflect a Case 1 skeleton of `S̄` into the Case 2 skeleton of `S`.
    fn mirrored(self) -> Self {
        let flip_curve = |c: SkeletonCurve| SkeletonCurve {
            pair: CurvePair(mirror_label(c.pair.0), mirror_label(c.pair.1)),
            samples: c
                .samples
                .into_iter()
                .map(|s| CurveSample {
                    x: s.x,
                    y: -s.y,
                    regime: mirror_regime(s.regime),
                })
                .collect(),
            gaps: c.gaps,
        };
        Skeleton {
            case: match self.case {
                SkeletonCase::Case1 => SkeletonCase::Case2,
                SkeletonCase::Case2 => SkeletonCase::Case1,
            },
            left_rule: match self.left_rule {
                LeftRule::AroundA => LeftRule::AroundB,
                LeftRule::AroundB => LeftRule::AroundA,
                LeftRule::Gamma14Only => LeftRule::Gamma14Only,
            },
            h: self.h,
            s_prime: self
                .s_prime
                .into_iter()
                .map(|pc| SkeletonPiece {
                    chain: pc.chain,
                    curve: flip_curve(pc.curve),
                })
                .collect(),
            gamma_vertical: self.gamma_vertical.map(|v| VerticalSegment {
                y_from: -v.y_from,
                y_to: -v.y_to,
            }),
            diamonds: self
                .diamonds
                .into_iter()
                .map(|d| Diamond {
                    center: d.center.conj(),
                    half_width: d.half_width,
                })
                .collect(),
            mu_a: self.mu_b.map(|z| z.conj()),
            mu_b: self.mu_a.map(|z| z.conj()),
            body_constant: self.body_constant,
        }
    }

    /// Polylines of `S′` (pieces of a chain joined) and the vertical part.
    pub fn polylines(&self) -> Vec<Vec<ComplexValue>> {
        let mut chains: Vec<(usize, Vec<ComplexValue>)> = vec![];
        for pc in &self.s_prime {
            let pts = pc.curve.samples.iter().map(|s| Complex64::new(s.x, s.y));
            match chains.iter_mut().find(|(c, _)| *c == pc.chain) {
                Some((_, v)) => v.extend(pts),
                None => chains.push((pc.chain, pts.collect())),
            }
        }
        let mut out: Vec<Vec<ComplexValue>> = chains.into_iter().map(|(_, v)| v).collect();
        if let Some(v) = self.gamma_vertical {
            out.push(vec![Complex64::new(0.0, v.y_from), Complex64::new(0.0, v.y_to)]);
        }
        out
    }

    /// Values of all `S′` pieces at `x`.
    pub fn s_prime_values(&self, x: f64) -> Vec<f64> {
        self.s_prime.iter().filter_map(|pc| pc.curve.y_at(x)).collect()
    }

    /// Rows `(curve_label, x, y, regime)` for CSV export.
    pub fn csv_rows(&self) -> Vec<(String, f64, f64, String)> {
        let mut rows = vec![];
        for pc in &self.s_prime {
            let label = format!("gamma_{}", pc.curve.pair.label());
            for s in &pc.curve.samples {
                rows.push((label.clone(), s.x, s.y, format!("{:?}", s.regime)));
            }
        }
        if let Some(v) = self.gamma_vertical {
            let (label, regime) = match self.case {
                SkeletonCase::Case1 => ("gamma_4", "Case1Small"),
                SkeletonCase::Case2 => ("gamma_1", "Case2Small"),
            };
            for y in [v.y_from, v.y_to] {
                rows.push((label.into(), 0.0, y, regime.into()));
            }
        }
        rows
    }
}

/// Assemble skeleton and body with default options.
pub fn assemble(p: &SemiclassicalParams, am: &ActionModel, c_body: f64) -> Result<(Skeleton, Body)> {
    assemble_with(p, am, c_body, &SkeletonOptions::default())
}

/// Assemble the skeleton and the body.
///
/// The Case 1 construction is used when the lower envelope of `S′` meets
/// the imaginary axis at `Im μ ≥ 0`; otherwise the Case 2 construction (the
/// mirror image of the Case 1 construction for `S̄`) is used if it meets the
/// axis at `Im μ ≤ 0`, and Case 1 is kept if neither holds.
pub fn assemble_with(
    p: &SemiclassicalParams,
    am: &ActionModel,
    c_body: f64,
    opts: &SkeletonOptions,
) -> Result<(Skeleton, Body)> {
    if !(opts.extent > 0.0 && opts.extent <= WORKING_EXTENT) {
        return Err(Error::InvalidInput(format!(
            "extent {} outside (0, {WORKING_EXTENT}]",
            opts.extent
        )));
    }
    let (case1, low1) = assemble_case1(p, am, c_body, opts)?;
    let sk = if low1 >= 0.0 {
        case1
    } else {
        let (case2, low2) = assemble_case1(p, &conjugate_model(am), c_body, opts)?;
        if low2 >= 0.0 {
            case2.mirrored()
        } else {
            case1
        }
    };
    let body = Body::new(sk.clone(), c_body, p);
    Ok((sk, body))
}

/// The rectangle `[−a, a] + i[−b, b]` around the critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalBox {
    pub a: f64,
    pub b: f64,
}

impl ExceptionalBox {
    /// `a = C(ε + h²/ε)`, `b = a/|ln(ε + h²/ε)|` (empty when `ε = 0`).
    pub fn new(p: &SemiclassicalParams, c: f64) -> Self {
        let pert = p.perturbation();
        if pert == 0.0 {
            return Self { a: 0.0, b: 0.0 };
        }
        let a = c * pert;
        Self {
            a,
            b: a / pert.ln().abs().max(LN_2),
        }
    }

    pub fn contains(&self, mu: ComplexValue) -> bool {
        mu.re.abs() <= self.a && mu.im.abs() <= self.b
    }
}

/// The body: discs of radius `C h/ln(1/⟨μ⟩_h)` around the skeleton, plus
/// the diamonds, plus a strip of width `C h lnln/ln` next to `S′` on the
/// side of the vertical part for `|Re μ| < h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub skeleton: Skeleton,
    pub constant: f64,
    /// `|Re μ|` cutoff of the strip next to `S′`.
    pub be_cutoff: f64,
    pub exceptional_box: ExceptionalBox,
    #[serde(skip)]
    polylines: Vec<Vec<ComplexValue>>,
}

impl Body {
    /// Body of `skeleton` with constant `c` (diamonds rescaled to `c`).
    pub fn new(mut skeleton: Skeleton, c: f64, p: &SemiclassicalParams) -> Self {
        let h = skeleton.h;
        for d in &mut skeleton.diamonds {
            d.half_width = c * h / ln_inv(bracket_h(d.center, h));
        }
        skeleton.body_constant = c;
        let polylines = skeleton.polylines();
        Self {
            skeleton,
            constant: c,
            be_cutoff: h,
            exceptional_box: ExceptionalBox::new(p, c),
            polylines,
        }
    }

    /// Thickening radius `C h / ln(1/⟨μ⟩_h)`.
    pub fn radius(&self, mu: ComplexValue) -> f64 {
        let h = self.skeleton.h;
        self.constant * h / ln_inv(bracket_h(mu, h))
    }

    /// Strip width `C h lnln(1/⟨μ⟩_h) / ln(1/⟨μ⟩_h)`.
    pub fn strip_width(&self, mu: ComplexValue) -> f64 {
        let l = ln_inv(bracket_h(mu, self.skeleton.h));
        self.radius(mu) * l.ln().max(1.0)
    }

    /// Distance from μ to the skeleton.
    pub fn distance_to_skeleton(&self, mu: ComplexValue) -> f64 {
        let seg = |a: ComplexValue, b: ComplexValue| {
            let d = b - a;
            let n2 = d.norm_sqr();
            if n2 == 0.0 {
                return (mu - a).norm();
            }
            let t = (((mu - a) * d.conj()).re / n2).clamp(0.0, 1.0);
            (mu - (a + d * t)).norm()
        };
        self.polylines
            .iter()
            .map(|pl| match pl.len() {
                0 => f64::INFINITY,
                1 => (mu - pl[0]).norm(),
                _ => pl.windows(2).map(|w| seg(w[0], w[1])).fold(f64::INFINITY, f64::min),
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Membership in the strip next to `S′` on the side of the vertical part.
    pub fn in_be(&self, mu: ComplexValue) -> bool {
        if mu.re.abs() >= self.be_cutoff {
            return false;
        }
        let vals = self.skeleton.s_prime_values(mu.re);
        if vals.is_empty() {
            return false;
        }
        let beyond = match self.skeleton.case {
            SkeletonCase::Case1 => mu.im < vals.iter().copied().fold(f64::INFINITY, f64::min),
            SkeletonCase::Case2 => mu.im > vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        beyond && self.distance_to_skeleton(mu) <= self.strip_width(mu)
    }

    /// Membership in the body.
    pub fn contains(&self, mu: ComplexValue) -> bool {
        self.distance_to_skeleton(mu) <= self.radius(mu)
            || self.skeleton.diamonds.iter().any(|d| d.contains(mu))
            || self.in_be(mu)
    }

    /// Membership in the body or in the exceptional box.
    pub fn contains_with_box(&self, mu: ComplexValue) -> bool {
        self.exceptional_box.contains(mu) || self.contains(mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spacing_and_zero() {
        let r = StepRule::default();
        let g = r.grid(-0.1, 0.1, 0.01);
        assert!(g.contains(&0.0));
        for w in g.windows(2) {
            let bound = 0.25 * 0.01 / ln_inv(0.01_f64.hypot(w[0]));
            assert!(w[1] - w[0] <= bound * (1.0 + 1e-12));
        }
        assert_eq!(*g.last().unwrap(), 0.1);
    }

    #[test]
    fn small_root() {
        let y = small_root_y_log(1e-3).unwrap();
        assert!((y * (1.0 / y).ln() - 1e-3).abs() < 1e-15);
        assert!(y < 1.0 / std::f64::consts::E);
        assert!(small_root_y_log(0.5).is_err());
    }
}
