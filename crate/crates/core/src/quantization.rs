//! The quantization function near the branching level.
//!
//! With tilded actions `S₁₂(μ)`, `S₃₄(μ)` (Maslov and Floquet contributions
//! already folded in) the quasi-eigenvalues are the zeros of
//!
//! ```text
//! F(μ;h) = e^{(i/h)(S₁₂+S₃₄)} a23 + e^{(i/h)S₁₂ + πμ/h} + e^{(i/h)S₃₄ + πμ/h} + a14
//!        = e^{πμ/2h} G(μ;h),       G = a₁ + a₂ + a₃ + a₄.
//! ```
//!
//! The four terms `a_j` are represented in one of four regimes, all exact
//! (the Stirling remainders are kept), differing only in which logarithm of
//! the Gamma function is expanded. With `L₋ = ln(Γ(½−iμ/h)/√(2π)) − i(μ/h)ln h`
//! and `L₊ = ln(Γ(½+iμ/h)/√(2π)) + i(μ/h)ln h`:
//!
//! ```text
//! Case 1:  a₁ = e^{(i/h)(S₁₂+S₃₄) − L₋ + iπ/4},  a₄± = e^{L₋ − iπ/4 ± πμ/h}
//! Case 2:  a₁± = e^{(i/h)(S₁₂+S₃₄) + L₊ + iπ/4 ± πμ/h},  a₄ = e^{−L₊ − iπ/4}
//! both:    a₂ = e^{(i/h)S₁₂ + πμ/2h},  a₃ = e^{(i/h)S₃₄ + πμ/2h}
//! ```
//!
//! In the large regimes `L∓` are written as their Stirling approximants plus
//! the remainder `O∓(h/μ)`; in the small regimes they are taken directly.

use crate::calibration::{
    BAND_ENVELOPE_C, BS_MIN_RE_C, BS_SLOPE_C, EXCEPTIONAL_COUNT_C, PHYSICAL_IM_ACTION_C, SECTOR_C, SMALL_C1,
};
use crate::error::{Error, Result};
use crate::poly::{BiPoly, CPoly, RPoly};
use crate::specfun::{
    angular_distance, log_cosh, log_gamma_half_shift, remainder_unchecked, ComplexValue,
    StirlingRegime, STIRLING_MIN_RATIO,
};
use crate::transition::{exact_matrix, renormalize, safe_exp, RenormalizedCoeffs};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, LN_2, PI};
use std::fmt;

/// Real part below which a log-space divisor is treated as underflowing.
const LOG_UNDERFLOW: f64 = -700.0;

/// Residual tolerance of the Bohr–Sommerfeld Newton solver.
pub const BS_TOLERANCE: f64 = 1e-12;

/// Iteration budget of the Bohr–Sommerfeld Newton solver.
pub const BS_MAX_ITER: usize = 100;

/// Semiclassical parameters `h`, `ε` and the derived `α₂ = h²/ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalParams {
    pub h: f64,
    pub epsilon: f64,
    /// `h²/ε`, zero by convention when `ε = 0`.
    pub alpha2: f64,
    /// Enforce `h² ≪ ε ≪ h^{1/2}` as `ε/h² ≥ 10` and `ε/√h ≤ 0.1`.
    pub strict: bool,
}

impl SemiclassicalParams {
    /// Validated parameters; `strict` turns on the scaling-window check.
    pub fn new(h: f64, epsilon: f64, strict: bool) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidInput(format!("h must be positive, got {h}")));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "epsilon must be non-negative, got {epsilon}"
            )));
        }
        let alpha2 = if epsilon == 0.0 { 0.0 } else { h * h / epsilon };
        let p = Self {
            h,
            epsilon,
            alpha2,
            strict,
        };
        if strict && epsilon > 0.0 {
            if epsilon / (h * h) < 10.0 {
                return Err(Error::InvalidInput(format!(
                    "strict regime needs eps/h^2 >= 10, got {}",
                    epsilon / (h * h)
                )));
            }
            if epsilon / h.sqrt() > 0.1 {
                return Err(Error::InvalidInput(format!(
                    "strict regime needs eps/sqrt(h) <= 0.1, got {}",
                    epsilon / h.sqrt()
                )));
            }
        }
        Ok(p)
    }

    /// Non-strict parameters with `ε = 0`.
    pub fn unperturbed(h: f64) -> Result<Self> {
        Self::new(h, 0.0, false)
    }

    /// The perturbation size `ε + h²/ε`.
    pub fn perturbation(&self) -> f64 {
        self.epsilon + self.alpha2
    }
}

/// The tilded actions as polynomials in μ.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionModel {
    pub s12: CPoly,
    pub s34: CPoly,
    #[serde(default)]
    pub description: String,
    /// Marks a model claimed to come from a physical operator, for which the
    /// actions are nearly real on the real axis.
    #[serde(default)]
    pub physical: bool,
}

impl ActionModel {
    /// Both actions identically zero.
    pub fn zero() -> Self {
        Self {
            s12: CPoly::zero(),
            s34: CPoly::zero(),
            description: "zero actions".into(),
            physical: true,
        }
    }

    /// Constant actions.
    pub fn constant(s12: ComplexValue, s34: ComplexValue) -> Self {
        Self {
            s12: CPoly::constant(s12),
            s34: CPoly::constant(s34),
            description: String::new(),
            physical: false,
        }
    }

    /// `(S₁₂(μ), S₃₄(μ))`.
    pub fn eval(&self, mu: ComplexValue) -> (ComplexValue, ComplexValue) {
        (self.s12.eval(mu), self.s34.eval(mu))
    }

    /// For physical models: `|Im S(μ)| ≤ C(ε + h²/ε)` at `μ ∈ {−0.1, 0, 0.1}`.
    pub fn validate(&self, p: &SemiclassicalParams) -> Result<()> {
        if !self.physical {
            return Ok(());
        }
        let bound = (PHYSICAL_IM_ACTION_C * p.perturbation()).max(1e-14);
        for x in [-0.1, 0.0, 0.1] {
            let (a, b) = self.eval(Complex64::new(x, 0.0));
            let worst = a.im.abs().max(b.im.abs());
            if worst > bound {
                return Err(Error::InvalidInput(format!(
                    "physical model has |Im S({x})| = {worst:e} > {bound:e}"
                )));
            }
        }
        Ok(())
    }
}

/// Representation regime of `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Case1Large,
    Case2Large,
    Case1Small,
    Case2Small,
}

impl Regime {
    pub fn is_case1(self) -> bool {
        matches!(self, Regime::Case1Large | Regime::Case1Small)
    }

    pub fn is_small(self) -> bool {
        matches!(self, Regime::Case1Small | Regime::Case2Small)
    }
}

/// Label of a term of `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TermLabel {
    One,
    OnePlus,
    OneMinus,
    Two,
    Three,
    Four,
    FourPlus,
    FourMinus,
}

impl fmt::Display for TermLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TermLabel::One => "1",
            TermLabel::OnePlus => "1+",
            TermLabel::OneMinus => "1-",
            TermLabel::Two => "2",
            TermLabel::Three => "3",
            TermLabel::Four => "4",
            TermLabel::FourPlus => "4+",
            TermLabel::FourMinus => "4-",
        };
        f.write_str(s)
    }
}

/// One term `a_j = exp(log_value)` with its rate `r_j = h Re log_value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub label: TermLabel,
    pub log_value: ComplexValue,
    pub rate: f64,
}

/// All terms of `G` in one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSet {
    pub regime: Regime,
    pub mu: ComplexValue,
    pub h: f64,
    pub terms: Vec<Term>,
}

impl TermSet {
    /// The term with the given label, if this regime exposes it.
    pub fn get(&self, label: TermLabel) -> Option<&Term> {
        self.terms.iter().find(|t| t.label == label)
    }

    /// Rate of the given label; panics if the label is not exposed.
    pub fn rate(&self, label: TermLabel) -> f64 {
        self.get(label)
            .unwrap_or_else(|| panic!("label {label} not in {:?}", self.regime))
            .rate
    }

    /// Log of the split term recombined: `a₄ = a₄⁺ + a₄⁻` (Case 1) or
    /// `a₁ = a₁⁺ + a₁⁻` (Case 2), via `ln 2cosh(πμ/h)` without cancellation.
    pub fn log_combined(&self) -> ComplexValue {
        let (p, m) = if self.regime.is_case1() {
            (TermLabel::FourPlus, TermLabel::FourMinus)
        } else {
            (TermLabel::OnePlus, TermLabel::OneMinus)
        };
        let lp = self.get(p).expect("split term").log_value;
        let lm = self.get(m).expect("split term").log_value;
        0.5 * (lp + lm) + LN_2 + log_cosh(0.5 * (lp - lm))
    }

    /// `G = Σ a_j` as a scaled value.
    pub fn sum(&self) -> GValue {
        let logs: Vec<_> = self.terms.iter().map(|t| t.log_value).collect();
        let s = scaled_sum(&logs);
        GValue {
            value: s.value,
            offset: self.h * s.log_scale,
        }
    }

    /// Largest rate among the terms.
    pub fn max_rate(&self) -> f64 {
        self.terms.iter().map(|t| t.rate).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `G = value · e^{offset/h}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GValue {
    pub value: ComplexValue,
    pub offset: f64,
}

impl GValue {
    /// `ln G` (any branch), `−∞` real part at a zero.
    pub fn log(&self, h: f64) -> ComplexValue {
        self.value.ln() + self.offset / h
    }

    /// Unscaled value (may overflow).
    pub fn to_complex(&self, h: f64) -> ComplexValue {
        self.value * (self.offset / h).exp()
    }
}

/// `value · e^{log_scale}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaled {
    pub value: ComplexValue,
    pub log_scale: f64,
}

impl Scaled {
    pub fn to_complex(&self) -> ComplexValue {
        self.value * self.log_scale.exp()
    }

    pub fn log(&self) -> ComplexValue {
        self.value.ln() + self.log_scale
    }
}

/// `Σ exp(l_j)` with a common scale `max Re l_j`; terms at `−∞` contribute zero.
pub fn scaled_sum(logs: &[ComplexValue]) -> Scaled {
    let m = logs
        .iter()
        .map(|l| l.re)
        .filter(|r| r.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Scaled {
            value: Complex64::new(0.0, 0.0),
            log_scale: 0.0,
        };
    }
    let value = logs.iter().map(|&l| safe_exp(l - m)).sum();
    Scaled {
        value,
        log_scale: m,
    }
}

/// The real quantities `X`, `Y`, `Ỹ` of the exponent geometry at μ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentGeometry {
    pub x: f64,
    pub y: f64,
    pub ytilde: f64,
}

impl ExponentGeometry {
    /// `Y = Re μ·arg(μ/i) − Im μ + h Re O₋`, `X = (π/2)Re μ + Y`,
    /// `Ỹ = Re μ·arg(iμ) − Im μ − h Re O₊`.
    pub fn at(mu: ComplexValue, h: f64) -> Self {
        let i = Complex64::i();
        let om = remainder_unchecked(mu, h, StirlingRegime::MinusBranch);
        let op = remainder_unchecked(mu, h, StirlingRegime::PlusBranch);
        let y = mu.re * (-i * mu).arg() - mu.im + h * om.re;
        let ytilde = mu.re * (i * mu).arg() - mu.im - h * op.re;
        Self {
            x: FRAC_PI_2 * mu.re + y,
            y,
            ytilde,
        }
    }
}

fn case1_admissible(mu: ComplexValue) -> bool {
    mu == Complex64::new(0.0, 0.0) || angular_distance(mu.arg(), -FRAC_PI_2) >= 1.0 / SECTOR_C
}

fn case2_admissible(mu: ComplexValue) -> bool {
    mu == Complex64::new(0.0, 0.0) || angular_distance(mu.arg(), FRAC_PI_2) >= 1.0 / SECTOR_C
}

/// Pick the representation regime: Case 1 unless μ lies in the cone around
/// `−iℝ₊`, small when `|μ| ≤ C₁h`.
pub fn choose_regime(mu: ComplexValue, p: &SemiclassicalParams) -> Regime {
    let small = mu.norm() <= SMALL_C1 * p.h;
    match (case1_admissible(mu), small) {
        (true, false) => Regime::Case1Large,
        (true, true) => Regime::Case1Small,
        (false, false) => Regime::Case2Large,
        (false, true) => Regime::Case2Small,
    }
}

/// Whether `regime` may represent `G` at μ.
pub fn regime_admissible(mu: ComplexValue, p: &SemiclassicalParams, regime: Regime) -> Result<()> {
    let h = p.h;
    let r = mu.norm();
    let near_origin = r < 0.5 * h;
    let sector_ok = if regime.is_case1() {
        case1_admissible(mu)
    } else {
        case2_admissible(mu)
    };
    if !sector_ok && !(regime.is_small() && near_origin) {
        return Err(Error::Regime {
            mu,
            reason: format!("{regime:?} excludes the cone of half-opening 1/{SECTOR_C}"),
        });
    }
    if regime.is_small() && r > SMALL_C1 * h {
        return Err(Error::Regime {
            mu,
            reason: format!("|mu|/h = {} exceeds {SMALL_C1}", r / h),
        });
    }
    if !regime.is_small() && r < STIRLING_MIN_RATIO * h {
        return Err(Error::Regime {
            mu,
            reason: format!("|mu|/h = {} below {STIRLING_MIN_RATIO}", r / h),
        });
    }
    Ok(())
}

/// `L₋` (Case 1) or `L₊` (Case 2) as described in the module docs.
fn gamma_log(mu: ComplexValue, h: f64, regime: Regime) -> ComplexValue {
    let i = Complex64::i();
    let w = mu / h;
    match regime {
        Regime::Case1Small => {
            log_gamma_half_shift(mu, h, StirlingRegime::MinusBranch) - i * w * h.ln()
        }
        Regime::Case2Small => {
            log_gamma_half_shift(mu, h, StirlingRegime::PlusBranch) + i * w * h.ln()
        }
        Regime::Case1Large => {
            (i / h) * (mu - mu * (-i * mu).ln())
                + remainder_unchecked(mu, h, StirlingRegime::MinusBranch)
        }
        Regime::Case2Large => {
            (i / h) * (mu * (i * mu).ln() - mu)
                + remainder_unchecked(mu, h, StirlingRegime::PlusBranch)
        }
    }
}

/// Build the term set of `G` in the requested regime.
pub fn term_set(
    mu: ComplexValue,
    p: &SemiclassicalParams,
    am: &ActionModel,
    regime: Regime,
) -> Result<TermSet> {
    regime_admissible(mu, p, regime)?;
    Ok(term_set_unchecked(mu, p.h, am, regime))
}

/// [`term_set`] without the admissibility check.
pub fn term_set_unchecked(mu: ComplexValue, h: f64, am: &ActionModel, regime: Regime) -> TermSet {
    let i = Complex64::i();
    let w = mu / h;
    let (s12, s34) = am.eval(mu);
    let l = gamma_log(mu, h, regime);
    let l2 = i * s12 / h + PI * w / 2.0;
    let l3 = i * s34 / h + PI * w / 2.0;
    let both = i * (s12 + s34) / h;
    let mut raw = vec![(TermLabel::Two, l2), (TermLabel::Three, l3)];
    if regime.is_case1() {
        raw.insert(0, (TermLabel::One, both - l + i * FRAC_PI_4));
        let l4 = l - i * FRAC_PI_4;
        raw.push((TermLabel::FourPlus, l4 + PI * w));
        raw.push((TermLabel::FourMinus, l4 - PI * w));
    } else {
        let l1 = both + l + i * FRAC_PI_4;
        raw.insert(0, (TermLabel::OneMinus, l1 - PI * w));
        raw.insert(0, (TermLabel::OnePlus, l1 + PI * w));
        raw.push((TermLabel::Four, -l - i * FRAC_PI_4));
    }
    TermSet {
        regime,
        mu,
        h,
        terms: raw
            .into_iter()
            .map(|(label, log_value)| Term {
                label,
                log_value,
                rate: h * log_value.re,
            })
            .collect(),
    }
}

/// `G(μ;h)` in the regime chosen by [`choose_regime`].
pub fn eval_g(mu: ComplexValue, p: &SemiclassicalParams, am: &ActionModel) -> GValue {
    term_set_unchecked(mu, p.h, am, choose_regime(mu, p)).sum()
}

/// `F(μ;h) = e^{πμ/2h} G(μ;h)` as a scaled value (`F = value·e^{log_scale}`).
pub fn eval_f(mu: ComplexValue, p: &SemiclassicalParams, am: &ActionModel) -> Scaled {
    let g = eval_g(mu, p, am);
    let phase = PI * mu / (2.0 * p.h);
    Scaled {
        value: g.value * Complex64::new(0.0, phase.im).exp(),
        log_scale: g.offset / p.h + phase.re,
    }
}

/// Raw (untilded) actions `(S₁₂, S₃₄)` behind the tilded model:
/// `S₁₂ = S̃₁₂ − hπ/2 − θ₁₂ − 2πhθ₂`, `S₃₄ = S̃₃₄ − hπ/2 − θ₃₄ − 2πhθ₁`.
pub fn raw_actions(
    mu: ComplexValue,
    h: f64,
    am: &ActionModel,
    coeffs: &RenormalizedCoeffs,
    theta: (f64, f64),
) -> (ComplexValue, ComplexValue) {
    let (t12, t34) = am.eval(mu);
    let s12 = t12 - h * FRAC_PI_2 - coeffs.theta(1, 2) - 2.0 * PI * h * theta.1;
    let s34 = t34 - h * FRAC_PI_2 - coeffs.theta(3, 4) - 2.0 * PI * h * theta.0;
    (s12, s34)
}

/// Logs of the four signed terms of the quantization condition.
fn residual_logs(
    mu: ComplexValue,
    h: f64,
    am: &ActionModel,
    c: &RenormalizedCoeffs,
    theta: (f64, f64),
) -> [ComplexValue; 4] {
    let i = Complex64::i();
    let (s12, s34) = raw_actions(mu, h, am, c, theta);
    let (t1, t2) = theta;
    [
        c.log_c23 + 2.0 * PI * i * (t1 + t2) + i / h * (s34 + s12),
        c.log_c24 + 2.0 * PI * i * t2 + i / h * s12,
        // The two subtracted terms carry a factor e^{iπ}.
        c.log_c13 + 2.0 * PI * i * t1 + i / h * s34 + i * PI,
        c.log_c14 + i * PI,
    ]
}

/// Right side of the global quantization condition,
/// `c23 e^{2πi(θ₁+θ₂)+(i/h)(S₃₄+S₁₂)} + c24 e^{2πiθ₂+(i/h)S₁₂} − c13 e^{2πiθ₁+(i/h)S₃₄} − c14`,
/// as a scaled value. `coeffs` must be the renormalised matrix at this μ.
///
/// It equals `−e^{−iθ₁₄/h} F(μ;h)`, so it vanishes exactly at the zeros of `F`.
pub fn quantization_residual_scaled(
    mu: ComplexValue,
    p: &SemiclassicalParams,
    am: &ActionModel,
    coeffs: &RenormalizedCoeffs,
    theta: (f64, f64),
) -> Scaled {
    scaled_sum(&residual_logs(mu, p.h, am, coeffs, theta))
}

/// Unscaled [`quantization_residual_scaled`] (may overflow for large `|Re μ|/h`).
pub fn quantization_residual(
    mu: ComplexValue,
    p: &SemiclassicalParams,
    am: &ActionModel,
    coeffs: &RenormalizedCoeffs,
    theta: (f64, f64),
) -> ComplexValue {
    quantization_residual_scaled(mu, p, am, coeffs, theta).to_complex()
}

/// Convenience: renormalise the exact matrix at μ with phases `d` and
/// evaluate the scaled residual together with its largest term magnitude
/// (log), used as the natural scale of the residual.
pub fn residual_at(
    mu: ComplexValue,
    p: &SemiclassicalParams,
    am: &ActionModel,
    d: [ComplexValue; 4],
    theta: (f64, f64),
) -> Result<Scaled> {
    let tm = exact_matrix(mu, p.h)?;
    let c = renormalize(&tm, d);
    Ok(quantization_residual_scaled(mu, p, am, &c, theta))
}

/// Which Grushin reduction the effective determinant comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrushinVariant {
    /// Divides by `c23`.
    UpperGrushin,
    /// Divides by `c14` and carries `e^{−2πi(θ̃₁+θ̃₂)}`.
    LowerGrushin,
}

/// `det E₋₊` of the chosen variant:
/// upper `= (1/c23)·R`, lower `= e^{−2πi(θ̃₁+θ̃₂)}/c14 · R`, with `R` the
/// quantization residual and `2πθ̃₁ = 2πθ₁ + S₃₄/h`, `2πθ̃₂ = 2πθ₂ + S₁₂/h`.
pub fn det_e_minus_plus(
    variant: GrushinVariant,
    mu: ComplexValue,
    p: &SemiclassicalParams,
    am: &ActionModel,
    coeffs: &RenormalizedCoeffs,
    theta: (f64, f64),
) -> Result<ComplexValue> {
    let i = Complex64::i();
    let h = p.h;
    let r = quantization_residual_scaled(mu, p, am, coeffs, theta);
    let shift = match variant {
        GrushinVariant::UpperGrushin => check_divisor("c23", coeffs.log_c23)?,
        GrushinVariant::LowerGrushin => {
            let (s12, s34) = raw_actions(mu, h, am, coeffs, theta);
            let phase = 2.0 * PI * i * (theta.0 + theta.1) + i / h * (s12 + s34);
            check_divisor("c14", coeffs.log_c14)? + phase
        }
    };
    Ok(r.value * (Complex64::new(r.log_scale, 0.0) - shift).exp())
}

fn check_divisor(name: &str, l: ComplexValue) -> Result<ComplexValue> {
    if !l.re.is_finite() || l.re < LOG_UNDERFLOW {
        return Err(Error::Degenerate(format!(
            "{name} underflows (log magnitude {})",
            l.re
        )));
    }
    Ok(l)
}

/// Branch of the Bohr–Sommerfeld rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BsBranch {
    /// Exterior loop, left half-plane; uses `S₁₂ + S₃₄`.
    Ext,
    /// Interior loop governed by `S₃₄`, right half-plane.
    LeftInt,
    /// Interior loop governed by `S₁₂`, right half-plane.
    RightInt,
}

fn bs_action(branch: BsBranch, am: &ActionModel, mu: ComplexValue) -> (ComplexValue, ComplexValue) {
    match branch {
        BsBranch::Ext => (
            am.s12.eval(mu) + am.s34.eval(mu),
            am.s12.eval_deriv(mu) + am.s34.eval_deriv(mu),
        ),
        BsBranch::LeftInt => (am.s34.eval(mu), am.s34.eval_deriv(mu)),
        BsBranch::RightInt => (am.s12.eval(mu), am.s12.eval_deriv(mu)),
    }
}

/// Left side of the branch rule (the generating function):
/// Ext `S₁₂+S₃₄+2μ(ln(−μ)−1)+πh/2+2ih·O₋(h/μ)`,
/// Int `μ ln μ − μ + πh/4 + S + ih·O₋(h/μ)`.
pub fn bs_generating_function(
    branch: BsBranch,
    mu: ComplexValue,
    p: &SemiclassicalParams,
    am: &ActionModel,
) -> ComplexValue {
    bs_value_deriv(branch, mu, p.h, am).0
}

fn remainder_minus(mu: ComplexValue, h: f64) -> ComplexValue {
    remainder_unchecked(mu, h, StirlingRegime::MinusBranch)
}

fn bs_value_deriv(
    branch: BsBranch,
    mu: ComplexValue,
    h: f64,
    am: &ActionModel,
) -> (ComplexValue, ComplexValue) {
    let i = Complex64::i();
    let (s, ds) = bs_action(branch, am, mu);
    // Central difference for the slowly varying remainder.
    let delta = 1e-6 * mu.norm().max(h);
    let o = remainder_minus(mu, h);
    let dox = (remainder_minus(mu + delta, h) - remainder_minus(mu - delta, h)) / (2.0 * delta);
    match branch {
        BsBranch::Ext => {
            let l = (-mu).ln();
            (
                s + 2.0 * mu * (l - 1.0) + PI * h / 2.0 + 2.0 * h * i * o,
                ds + 2.0 * l + 2.0 * h * i * dox,
            )
        }
        BsBranch::LeftInt | BsBranch::RightInt => {
            let l = mu.ln();
            (
                mu * l - mu + PI * h / 4.0 + s + i * h * o,
                l + ds + i * h * dox,
            )
        }
    }
}

fn in_bs_sector(branch: BsBranch, mu: ComplexValue, h: f64) -> bool {
    let c = BS_MIN_RE_C;
    let re_ok = match branch {
        BsBranch::Ext => mu.re <= -c * h,
        _ => mu.re >= c * h,
    };
    re_ok && mu.im.abs() <= mu.re.abs() / BS_SLOPE_C
}

/// Fixed-point solve of `x(ln x − 1) = t` on `(0, 1)` (needs `−1 < t < 0`).
fn real_xlogx_inverse(t: f64) -> Option<f64> {
    if !(t < 0.0 && t > -1.0) {
        return None;
    }
    let mut x: f64 = (-t).min(0.5);
    for _ in 0..200 {
        let next = t / (x.ln() - 1.0);
        if (next - x).abs() <= 1e-15 * x {
            return Some(next);
        }
        x = next;
    }
    Some(x)
}

/// Solve the `k`-th Bohr–Sommerfeld rule of `branch` by Newton iteration.
///
/// The right side is `2π(k+½)h`. The initial guess inverts the leading
/// `x ln x` term on the real axis; the iteration is damped and must stay in
/// the truncated sector of the branch (`Re μ ≤ −Ch` for Ext, `Re μ ≥ Ch` for
/// Int, `|Im μ| ≤ |Re μ|/C`).
pub fn bohr_sommerfeld_solve(
    branch: BsBranch,
    k: i64,
    p: &SemiclassicalParams,
    am: &ActionModel,
) -> Result<ComplexValue> {
    let h = p.h;
    let target = 2.0 * PI * (k as f64 + 0.5) * h;
    let zero = Complex64::new(0.0, 0.0);
    let s0 = bs_action(branch, am, zero).0.re;
    let guess = match branch {
        BsBranch::Ext => {
            // −2x(ln x − 1) = target − πh/2 − S(0), μ = −x.
            let t = -(target - PI * h / 2.0 - s0) / 2.0;
            real_xlogx_inverse(t).map(|x| -x)
        }
        _ => real_xlogx_inverse(target - PI * h / 4.0 - s0),
    };
    let mut mu = match guess {
        Some(x) => Complex64::new(x, 0.0),
        None => {
            return Err(Error::InvalidInput(format!(
                "{branch:?} rule with k = {k} has no root in the truncated sector"
            )))
        }
    };
    if !in_bs_sector(branch, mu, h) {
        return Err(Error::SectorEscape(mu));
    }
    let mut f = bs_value_deriv(branch, mu, h, am).0 - target;
    for _ in 0..BS_MAX_ITER {
        if f.norm() <= BS_TOLERANCE {
            return Ok(polish(branch, mu, f, target, h, am));
        }
        let (_, df) = bs_value_deriv(branch, mu, h, am);
        let step = f / df;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = mu - lambda * step;
            if in_bs_sector(branch, cand, h) {
                let fc = bs_value_deriv(branch, cand, h, am).0 - target;
                if fc.norm() < f.norm() || fc.norm() <= BS_TOLERANCE {
                    mu = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            let cand = mu - step;
            if !in_bs_sector(branch, cand, h) {
                return Err(Error::SectorEscape(cand));
            }
            return Err(Error::NoConvergence {
                last: mu,
                residual: f.norm(),
                iterations: BS_MAX_ITER,
            });
        }
    }
    if f.norm() <= BS_TOLERANCE {
        Ok(mu)
    } else {
        Err(Error::NoConvergence {
            last: mu,
            residual: f.norm(),
            iterations: BS_MAX_ITER,
        })
    }
}

/// Two extra Newton steps once the residual is below tolerance: the
/// exponentially small imaginary part of real-axis roots is only resolved
/// after the real part has converged.
fn polish(
    branch: BsBranch,
    mut mu: ComplexValue,
    mut f: ComplexValue,
    target: f64,
    h: f64,
    am: &ActionModel,
) -> ComplexValue {
    for _ in 0..2 {
        let (_, df) = bs_value_deriv(branch, mu, h, am);
        let cand = mu - f / df;
        if !in_bs_sector(branch, cand, h) {
            break;
        }
        let fc = bs_value_deriv(branch, cand, h, am).0 - target;
        if fc.norm() > f.norm().max(BS_TOLERANCE) {
            break;
        }
        mu = cand;
        f = fc;
    }
    mu
}

/// One point of the assembled two-dimensional spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub z: ComplexValue,
    pub k: i64,
    pub tau: f64,
    pub mu: ComplexValue,
}

/// Largest `|τ_k|` kept by [`assemble_2d_spectrum`].
pub const TAU_WINDOW: f64 = 0.3;

/// `τ_k = h(k − k₀/4) − S₀/2π`.
pub fn tau_k(k: i64, h: f64, s0: f64, k0: i64) -> f64 {
    h * (k as f64 - k0 as f64 / 4.0) - s0 / (2.0 * PI)
}

/// Assemble `z = g(τ_k) + iε K(τ_k, μ)` over the μ-roots supplied for each
/// retained `k` (`|τ_k| ≤ 0.3`). The provider receives `(k, τ_k)`.
/// Output is ordered by `k`, then by provider order.
#[allow(clippy::too_many_arguments)]
pub fn assemble_2d_spectrum<P>(
    k_range: std::ops::RangeInclusive<i64>,
    g: &RPoly,
    kk: &BiPoly,
    s0: f64,
    k0: i64,
    p: &SemiclassicalParams,
    mu_roots_provider: P,
) -> Result<Vec<SpectrumPoint>>
where
    P: Fn(i64, f64) -> Vec<ComplexValue> + Sync,
{
    if g.eval(0.0).abs() > 1e-14 {
        return Err(Error::InvalidInput(format!(
            "g(0) must vanish, got {}",
            g.eval(0.0)
        )));
    }
    let ks: Vec<(i64, f64)> = k_range
        .map(|k| (k, tau_k(k, p.h, s0, k0)))
        .filter(|(_, t)| t.abs() <= TAU_WINDOW)
        .collect();
    if let Some((_, t)) = ks.iter().find(|(_, t)| g.eval_deriv(*t) <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "g must be strictly increasing on the tau range (g'({t}) <= 0)"
        )));
    }
    let i = Complex64::i();
    let per_k: Vec<Vec<SpectrumPoint>> = ks
        .par_iter()
        .map(|&(k, tau)| {
            mu_roots_provider(k, tau)
                .into_iter()
                .map(|mu| SpectrumPoint {
                    z: g.eval(tau) + i * p.epsilon * kk.eval(tau, mu),
                    k,
                    tau,
                    mu,
                })
                .collect()
        })
        .collect();
    Ok(per_k.into_iter().flatten().collect())
}

/// Envelope `C(ε+h²/ε)·max(1/ln(1/⟨Re μ⟩_h), 1/ln(1/(ε+h²/ε)))` for `|Im μ|`,
/// with `⟨x⟩_h = max(|x|, h)` (logarithms floored at `ln 2`).
pub fn band_envelope(re_mu: f64, p: &SemiclassicalParams) -> f64 {
    let pert = p.perturbation();
    if pert == 0.0 {
        return 0.0;
    }
    let inv_ln = |x: f64| 1.0 / (1.0 / x).ln().max(LN_2);
    BAND_ENVELOPE_C * pert * inv_ln(re_mu.abs().max(p.h)).max(inv_ln(pert))
}

/// Keep only the roots inside the band envelope.
pub fn band_filter(roots: &[ComplexValue], p: &SemiclassicalParams) -> Vec<ComplexValue> {
    roots
        .iter()
        .copied()
        .filter(|m| m.im.abs() <= band_envelope(m.re, p))
        .collect()
}

/// Calibrated upper bound `C(ε/h + h/ε)|ln(ε + h²/ε)|` on the number of
/// eigenvalues in the exceptional rectangle.
pub fn exceptional_count_bound(p: &SemiclassicalParams) -> f64 {
    if p.epsilon == 0.0 {
        return f64::INFINITY;
    }
    let pert = p.perturbation();
    EXCEPTIONAL_COUNT_C * (p.epsilon / p.h + p.h / p.epsilon) * pert.ln().abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_choice_examples() {
        let p = SemiclassicalParams::unperturbed(0.001).unwrap();
        assert_eq!(choose_regime(Complex64::new(0.1, 0.0), &p), Regime::Case1Large);
        assert_eq!(choose_regime(Complex64::new(0.0, 0.003), &p), Regime::Case1Small);
        assert_eq!(choose_regime(Complex64::new(0.0, -0.1), &p), Regime::Case2Large);
    }

    #[test]
    fn strict_window() {
        assert!(SemiclassicalParams::new(1e-3, 1e-3, true).is_ok());
        assert!(SemiclassicalParams::new(1e-3, 1e-6, true).is_err());
        assert!(SemiclassicalParams::new(1e-3, 0.01, true).is_err());
        assert_eq!(SemiclassicalParams::new(1e-3, 0.0, true).unwrap().alpha2, 0.0);
    }

    #[test]
    fn xlogx_inverse() {
        let x = real_xlogx_inverse(0.1f64 * (0.1f64.ln() - 1.0)).unwrap();
        assert!((x - 0.1).abs() < 1e-14);
    }
}
