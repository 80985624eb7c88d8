//! Exact flow averages over the 1:1 harmonic oscillator `p = (|z₁|²+|z₂|²)/2`,
//! `z_j = x_j + iξ_j`, whose flow is `z_j(t) = e^{−it} z_j`.
//!
//! Symbols are finite Laurent sums `Σ c_{αβ} z^α z̄^β` with Gaussian-rational
//! coefficients ([`BalancedLaurent`]); a monomial `z^α z̄^β` rotates with
//! frequency `k = |β| − |α|`, so averaging keeps `k = 0`, the weighted
//! average `G₀` divides by `ik`, and correlations follow from the Poisson
//! bracket `{z_j, z̄_j} = 2i` (convention `{f,g} = ∂_ξf·∂_xg − ∂_xf·∂_ξg`).
//!
//! On the reduced sphere `Σ = p⁻¹(1)/flow` the average of the quartic family
//! `q = ⅔a(x₁⁴+x₂⁴) + b x₁²x₂² + ⅔c(x₁³x₂+x₁x₂³)` is
//! `⟨q⟩ = a + d g² + b g² y² + c g y`, `d = b/2 − 2a`, `g = √(ρ(1−ρ))`,
//! `y = cos θ`; [`classify_critical_points`] tabulates its critical points,
//! [`grid_verify`] re-finds them numerically and [`action_perturbation`]
//! integrates along separatrix loops.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Gaussian-rational coefficient.
pub type Coeff = Complex<BigRational>;

/// Exponent key `(α₁, α₂, β₁, β₂)` of `z₁^{α₁} z₂^{α₂} z̄₁^{β₁} z̄₂^{β₂}`.
pub type Exponent = [i32; 4];

/// Rational from a machine fraction.
pub fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn real(r: BigRational) -> Coeff {
    Complex::new(r, BigRational::zero())
}

/// Nearest `f64` (NaN when not representable).
pub fn rat_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Finite Laurent sum `Σ c_{αβ} z^α z̄^β` with exact coefficients.
///
/// Negative exponents are admitted only as powers of `|z_j|⁻²`
/// (see [`BalancedLaurent::has_balanced_negatives`]).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BalancedLaurent {
    pub terms: BTreeMap<Exponent, Coeff>,
}

impl BalancedLaurent {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Coeff) -> Self {
        Self::monomial([0, 0], [0, 0], c)
    }

    /// `c · z^α z̄^β`.
    pub fn monomial(alpha: [i32; 2], beta: [i32; 2], c: Coeff) -> Self {
        let mut s = Self::zero();
        s.add_term([alpha[0], alpha[1], beta[0], beta[1]], c);
        s
    }

    /// `z_j` (`j ∈ {0, 1}`).
    pub fn z(j: usize) -> Self {
        let mut a = [0, 0];
        a[j] = 1;
        Self::monomial(a, [0, 0], real(BigRational::one()))
    }

    /// `z̄_j`.
    pub fn zbar(j: usize) -> Self {
        let mut b = [0, 0];
        b[j] = 1;
        Self::monomial([0, 0], b, real(BigRational::one()))
    }

    /// `|z_j|²`.
    pub fn abs2(j: usize) -> Self {
        Self::z(j).mul(&Self::zbar(j))
    }

    /// `x_j = (z_j + z̄_j)/2`.
    pub fn x(j: usize) -> Self {
        Self::z(j).add(&Self::zbar(j)).scale(&real(rat(1, 2)))
    }

    /// `ξ_j = (z_j − z̄_j)/2i`.
    pub fn xi(j: usize) -> Self {
        Self::z(j).sub(&Self::zbar(j)).scale(&Complex::new(BigRational::zero(), rat(-1, 2)))
    }

    fn add_term(&mut self, e: Exponent, c: Coeff) {
        if c.is_zero() {
            return;
        }
        let slot = self.terms.entry(e).or_insert_with(Coeff::zero);
        *slot = slot.clone() + c;
        if slot.is_zero() {
            self.terms.remove(&e);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut s = self.clone();
        for (e, c) in &other.terms {
            s.add_term(*e, c.clone());
        }
        s
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&real(rat(-1, 1))))
    }

    pub fn scale(&self, c: &Coeff) -> Self {
        let mut s = Self::zero();
        for (e, v) in &self.terms {
            s.add_term(*e, v.clone() * c.clone());
        }
        s
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut s = Self::zero();
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e = [e1[0] + e2[0], e1[1] + e2[1], e1[2] + e2[2], e1[3] + e2[3]];
                s.add_term(e, c1.clone() * c2.clone());
            }
        }
        s
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut s = Self::constant(real(BigRational::one()));
        for _ in 0..n {
            s = s.mul(self);
        }
        s
    }

    /// Complex conjugate: `z^α z̄^β ↦ z^β z̄^α`, coefficients conjugated.
    pub fn conj(&self) -> Self {
        let mut s = Self::zero();
        for (e, c) in &self.terms {
            s.add_term([e[2], e[3], e[0], e[1]], c.conj());
        }
        s
    }

    /// Real-valuedness: `c_{βα} = c̄_{αβ}`.
    pub fn is_real(&self) -> bool {
        self.conj() == *self
    }

    /// Every term has `|α| = |β|`.
    pub fn is_flow_invariant(&self) -> bool {
        self.terms.keys().all(|e| frequency(e) == 0)
    }

    /// Negative exponents occur only in matched pairs `α_j = β_j < 0`.
    pub fn has_balanced_negatives(&self) -> bool {
        self.terms.keys().all(|e| {
            (0..2).all(|j| (e[j] >= 0 && e[j + 2] >= 0) || (e[j] == e[j + 2] && e[j] < 0))
        })
    }

    /// Part of frequency `k = |β| − |α|`.
    pub fn frequency_part(&self, k: i32) -> Self {
        Self {
            terms: self.terms.iter().filter(|(e, _)| frequency(e) == k).map(|(e, c)| (*e, c.clone())).collect(),
        }
    }

    /// Distinct frequencies present.
    pub fn frequencies(&self) -> Vec<i32> {
        let mut f: Vec<i32> = self.terms.keys().map(frequency).collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// `∂/∂z_j` (`conj = false`) or `∂/∂z̄_j` (`conj = true`).
    pub fn derivative(&self, j: usize, conj: bool) -> Self {
        let slot = if conj { j + 2 } else { j };
        let mut s = Self::zero();
        for (e, c) in &self.terms {
            if e[slot] != 0 {
                let mut f = *e;
                f[slot] -= 1;
                s.add_term(f, c.clone() * real(rat(e[slot] as i64, 1)));
            }
        }
        s
    }

    /// Composition with the flow at time `t`, as a frequency decomposition:
    /// `q∘exp(tH_p) = Σ_k e^{ikt} q_k`.
    pub fn evolve_parts(&self) -> Vec<(i32, Self)> {
        self.frequencies().into_iter().map(|k| (k, self.frequency_part(k))).collect()
    }

    /// Numerical value at `(z₁, z₂)`.
    pub fn eval(&self, z: [Complex64; 2]) -> Complex64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                let coeff = Complex64::new(rat_to_f64(&c.re), rat_to_f64(&c.im));
                coeff
                    * z[0].powi(e[0])
                    * z[1].powi(e[1])
                    * z[0].conj().powi(e[2])
                    * z[1].conj().powi(e[3])
            })
            .sum()
    }

    /// Value at the point `(ρ, θ)` of `Σ` (`z₁ = √(2ρ)`, `z₂ = √(2−2ρ)e^{iθ}`,
    /// so that `θ = θ₁ − θ₂`).
    pub fn eval_sigma(&self, rho: f64, theta: f64) -> Complex64 {
        let z1 = Complex64::new((2.0 * rho).sqrt(), 0.0);
        let z2 = Complex64::from_polar((2.0 - 2.0 * rho).sqrt(), theta);
        self.eval([z1, z2])
    }

    /// Exponent map with numerator/denominator pairs for JSON export.
    pub fn export(&self) -> Vec<LaurentTerm> {
        self.terms
            .iter()
            .map(|(e, c)| LaurentTerm {
                alpha: [e[0], e[1]],
                beta: [e[2], e[3]],
                re: [c.re.numer().to_string(), c.re.denom().to_string()],
                im: [c.im.numer().to_string(), c.im.denom().to_string()],
            })
            .collect()
    }
}

/// Serialised term of a [`BalancedLaurent`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LaurentTerm {
    pub alpha: [i32; 2],
    pub beta: [i32; 2],
    pub re: [String; 2],
    pub im: [String; 2],
}

fn frequency(e: &Exponent) -> i32 {
    (e[2] + e[3]) - (e[0] + e[1])
}

/// Polynomial in `(x₁, x₂, ξ₁, ξ₂)` with rational coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhasePoly {
    /// Exponents `(x₁, x₂, ξ₁, ξ₂)` → coefficient.
    pub terms: BTreeMap<[u32; 4], BigRational>,
}

impl PhasePoly {
    pub fn monomial(e: [u32; 4], c: BigRational) -> Self {
        let mut p = Self::default();
        p.add_term(e, c);
        p
    }

    /// `c · x₁^{a₁} x₂^{a₂}`.
    pub fn x_monomial(a1: u32, a2: u32, c: BigRational) -> Self {
        Self::monomial([a1, a2, 0, 0], c)
    }

    pub fn add_term(&mut self, e: [u32; 4], c: BigRational) {
        let slot = self.terms.entry(e).or_insert_with(BigRational::zero);
        *slot += c;
        if slot.is_zero() {
            self.terms.remove(&e);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut s = self.clone();
        for (e, c) in &other.terms {
            s.add_term(*e, c.clone());
        }
        s
    }

    /// Substitutes `x_j = (z_j+z̄_j)/2`, `ξ_j = (z_j−z̄_j)/2i`.
    pub fn to_laurent(&self) -> BalancedLaurent {
        let gens = [BalancedLaurent::x(0), BalancedLaurent::x(1), BalancedLaurent::xi(0), BalancedLaurent::xi(1)];
        let mut s = BalancedLaurent::zero();
        for (e, c) in &self.terms {
            let mut m = BalancedLaurent::constant(real(c.clone()));
            for (g, &k) in gens.iter().zip(e) {
                m = m.mul(&g.pow(k));
            }
            s = s.add(&m);
        }
        s
    }
}

/// Time average `⟨q⟩`: the terms with `|α| = |β|`.
pub fn flow_average(q: &BalancedLaurent) -> BalancedLaurent {
    q.frequency_part(0)
}

/// `G₀ = (1/2π)∫₀^{2π}(t−π) q∘exp(tH_p) dt`: the frequency-`k` part is
/// multiplied by `1/(ik) = −i/k`, the mean is dropped.
pub fn weighted_average_g0(q: &BalancedLaurent) -> BalancedLaurent {
    let mut s = BalancedLaurent::zero();
    for (k, part) in q.evolve_parts() {
        if k != 0 {
            s = s.add(&part.scale(&Complex::new(BigRational::zero(), rat(-1, k as i64))));
        }
    }
    s
}

/// Poisson bracket `{f, g} = 2i Σ_j (∂_{z_j}f ∂_{z̄_j}g − ∂_{z̄_j}f ∂_{z_j}g)`.
pub fn poisson(f: &BalancedLaurent, g: &BalancedLaurent) -> BalancedLaurent {
    let mut s = BalancedLaurent::zero();
    for j in 0..2 {
        let a = f.derivative(j, false).mul(&g.derivative(j, true));
        let b = f.derivative(j, true).mul(&g.derivative(j, false));
        s = s.add(&a.sub(&b));
    }
    s.scale(&Complex::new(BigRational::zero(), rat(2, 1)))
}

/// The oscillator `p = (|z₁|² + |z₂|²)/2`.
pub fn oscillator() -> BalancedLaurent {
    BalancedLaurent::abs2(0).add(&BalancedLaurent::abs2(1)).scale(&real(rat(1, 2)))
}

/// `Cor(q₁, q₂; s) = ⟨{q₁∘exp(sH_p), q₂}⟩` as its Fourier modes `m ↦ A_m`
/// (`Cor = Σ_m A_m e^{ims}`).
pub fn correlation(q1: &BalancedLaurent, q2: &BalancedLaurent) -> BTreeMap<i32, BalancedLaurent> {
    let mut out = BTreeMap::new();
    for (k, part) in q1.evolve_parts() {
        let a = flow_average(&poisson(&part, q2));
        if !a.is_zero() {
            out.insert(k, a);
        }
    }
    out
}

/// `C(q₁, q₂) = (1/2π)∫₀^{2π}(s−π) Cor(q₁,q₂;s) ds = Σ_{m≠0} (−i/m) A_m`.
pub fn correlation_c(q1: &BalancedLaurent, q2: &BalancedLaurent) -> BalancedLaurent {
    let mut s = BalancedLaurent::zero();
    for (m, a) in correlation(q1, q2) {
        if m != 0 {
            s = s.add(&a.scale(&Complex::new(BigRational::zero(), rat(-1, m as i64))));
        }
    }
    s
}

/// Trigonometric factor of an action–angle term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Trig {
    Cos,
    Sin,
}

/// `Σ c · ρ₁^{p₁/2} ρ₂^{p₂/2} · trig(k(θ₁−θ₂))`, keyed by `(p₁, p₂, k, trig)`
/// with `k ≥ 0` (and only `Cos` for `k = 0`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionAngle {
    pub terms: BTreeMap<(u32, u32, u32, Trig), Coeff>,
}

impl ActionAngle {
    fn add_term(&mut self, key: (u32, u32, u32, Trig), c: Coeff) {
        if c.is_zero() {
            return;
        }
        let slot = self.terms.entry(key).or_insert_with(Coeff::zero);
        *slot = slot.clone() + c;
        if slot.is_zero() {
            self.terms.remove(&key);
        }
    }

    /// `c · ρ₁^{p₁/2} ρ₂^{p₂/2} trig(kθ)`.
    pub fn term(p1: u32, p2: u32, k: u32, trig: Trig, c: BigRational) -> Self {
        let mut s = Self::default();
        s.add_term((p1, p2, k, trig), real(c));
        s
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut s = self.clone();
        for (k, c) in &other.terms {
            s.add_term(*k, c.clone());
        }
        s
    }

    pub fn eval(&self, rho1: f64, rho2: f64, theta: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|(&(p1, p2, k, t), c)| {
                let trig = match t {
                    Trig::Cos => (k as f64 * theta).cos(),
                    Trig::Sin => (k as f64 * theta).sin(),
                };
                Complex64::new(rat_to_f64(&c.re), rat_to_f64(&c.im))
                    * rho1.powf(p1 as f64 / 2.0)
                    * rho2.powf(p2 as f64 / 2.0)
                    * trig
            })
            .sum()
    }
}

/// Substitutes `z_j = √(2ρ_j) e^{−iθ_j}` into a flow-invariant sum.
///
/// Errors with [`Error::NotInvariant`] if a term depends on `θ₁ + θ₂`, or
/// [`Error::InvalidInput`] for negative exponents (which would need
/// non-polynomial powers of `ρ_j`).
pub fn to_action_angle(avg: &BalancedLaurent) -> Result<ActionAngle> {
    let mut out = ActionAngle::default();
    for (e, c) in &avg.terms {
        if frequency(e) != 0 {
            return Err(Error::NotInvariant);
        }
        if e.iter().any(|&v| v < 0) {
            return Err(Error::InvalidInput("negative exponents have no polynomial action-angle form".into()));
        }
        let m1 = (e[0] + e[2]) as u32;
        let m2 = (e[1] + e[3]) as u32;
        // Π (2ρ_j)^{m_j/2} = 2^{(m₁+m₂)/2} ρ₁^{m₁/2} ρ₂^{m₂/2}; m₁ + m₂ = 2|α| is even.
        let two_pow = (m1 + m2) / 2;
        let c = c.clone() * real(BigRational::from_integer(BigInt::from(2).pow(two_pow)));
        // Phase e^{−i(α₁−β₁)θ₁ − i(α₂−β₂)θ₂} = e^{−inθ}, n = α₁ − β₁ = β₂ − α₂.
        let n = e[0] - e[2];
        if n == 0 {
            out.add_term((m1, m2, 0, Trig::Cos), c);
        } else {
            // c e^{−inθ} = c cos(|n|θ) − i·sgn(n)·c sin(|n|θ)
            let k = n.unsigned_abs();
            let sgn = if n > 0 { -1 } else { 1 };
            out.add_term((m1, m2, k, Trig::Cos), c.clone());
            out.add_term((m1, m2, k, Trig::Sin), c * Complex::new(BigRational::zero(), rat(sgn, 1)));
        }
    }
    Ok(out)
}

/// Perturbation coefficients `(a, b, c)` of the symmetric quartic family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedFunction {
    pub a: BigRational,
    pub b: BigRational,
    pub c: BigRational,
}

impl ReducedFunction {
    pub fn new(a: BigRational, b: BigRational, c: BigRational) -> Self {
        Self { a, b, c }
    }

    /// From machine fractions `(num, den)`.
    pub fn from_fractions(a: (i64, i64), b: (i64, i64), c: (i64, i64)) -> Self {
        Self::new(rat(a.0, a.1), rat(b.0, b.1), rat(c.0, c.1))
    }

    /// Parameters with prescribed `d` (so `a = (b/2 − d)/2`).
    pub fn with_d(b: BigRational, c: BigRational, d: BigRational) -> Self {
        let a = (b.clone() / rat(2, 1) - d) / rat(2, 1);
        Self::new(a, b, c)
    }

    /// `d = b/2 − 2a`.
    pub fn d(&self) -> BigRational {
        self.b.clone() / rat(2, 1) - self.a.clone() * rat(2, 1)
    }

    /// `q(x) = ⅔a(x₁⁴+x₂⁴) + b x₁²x₂² + ⅔c(x₁³x₂+x₁x₂³)`.
    pub fn q_poly(&self) -> PhasePoly {
        self.q_poly_with_break(BigRational::zero())
    }

    /// `q + η x₁⁴`: the symmetry-breaking extension; `η ≠ 0` leaves the
    /// symmetric family, so the classification tables do not apply to it.
    pub fn q_poly_with_break(&self, eta: BigRational) -> PhasePoly {
        let two_thirds = rat(2, 3);
        let mut p = PhasePoly::default();
        p.add_term([4, 0, 0, 0], two_thirds.clone() * self.a.clone() + eta);
        p.add_term([0, 4, 0, 0], two_thirds.clone() * self.a.clone());
        p.add_term([2, 2, 0, 0], self.b.clone());
        p.add_term([3, 1, 0, 0], two_thirds.clone() * self.c.clone());
        p.add_term([1, 3, 0, 0], two_thirds * self.c.clone());
        p
    }

    fn f64s(&self) -> (f64, f64, f64, f64) {
        (rat_to_f64(&self.a), rat_to_f64(&self.b), rat_to_f64(&self.c), rat_to_f64(&self.d()))
    }

    /// `⟨q⟩ = a + d g² + b g² y² + c g y` at `(ρ, θ)`.
    pub fn eval(&self, rho: f64, theta: f64) -> f64 {
        let (a, b, c, d) = self.f64s();
        let g2 = rho * (1.0 - rho);
        let g = g2.max(0.0).sqrt();
        let y = theta.cos();
        a + d * g2 + b * g2 * y * y + c * g * y
    }

    /// `⟨q⟩` on the unit sphere `(X, Y, Z) = (2g cos θ, −2g sin θ, 2ρ−1)`:
    /// `a + d(1−Z²)/4 + bX²/4 + cX/2`, with its gradient.
    fn sphere(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let (a, b, c, d) = self.f64s();
        let [x, _, z] = p;
        let v = a + d * (1.0 - z * z) / 4.0 + b * x * x / 4.0 + c * x / 2.0;
        (v, [b * x / 2.0 + c / 2.0, 0.0, -d * z / 2.0])
    }
}

/// Region of the `(b, c)` plane (for `d > 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Region {
    A,
    Bplus,
    Bminus,
    Cplus,
    Cminus,
    D,
    Eplus,
    Eminus,
    F,
}

/// Where a critical point sits on `Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Location {
    /// `ρ = ½`, `cos θ* = −c/b`, `θ* ∈ (0, π)` or its mirror.
    HorizontalCircle { theta: f64 },
    /// `θ ∈ {0, π}`, `g = g*` at `ρ` (one of the two roots of `ρ(1−ρ) = g*²`).
    VerticalCircle { rho: f64, theta: f64 },
    /// `ρ = ½, θ = 0`.
    CrossingCf,
    /// `ρ = ½, θ = π`.
    CrossingCb,
    PoleRho0,
    PoleRho1,
}

impl Location {
    /// Point on the unit sphere.
    pub fn sphere_point(&self) -> [f64; 3] {
        let (rho, theta) = match *self {
            Location::HorizontalCircle { theta } => (0.5, theta),
            Location::VerticalCircle { rho, theta } => (rho, theta),
            Location::CrossingCf => (0.5, 0.0),
            Location::CrossingCb => (0.5, PI),
            Location::PoleRho0 => (0.0, 0.0),
            Location::PoleRho1 => (1.0, 0.0),
        };
        sphere_point(rho, theta)
    }
}

/// `(X, Y, Z) = (2g cos θ, −2g sin θ, 2ρ − 1)`.
pub fn sphere_point(rho: f64, theta: f64) -> [f64; 3] {
    let g = (rho * (1.0 - rho)).max(0.0).sqrt();
    [2.0 * g * theta.cos(), -2.0 * g * theta.sin(), 2.0 * rho - 1.0]
}

/// `(ρ, θ)` of a sphere point.
pub fn sphere_coords(p: [f64; 3]) -> (f64, f64) {
    ((1.0 + p[2]) / 2.0, (-p[1]).atan2(p[0]))
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// One tabulated critical point. The signature is `(sign, sign)` with the
/// first component along the horizontal circle for horizontal-circle points
/// and along the vertical circle for every other point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub location: Location,
    pub signature: (i8, i8),
    /// Exact critical value as `[numerator, denominator]`.
    pub value: [String; 2],
    #[serde(skip)]
    pub exact_value: BigRational,
}

impl CriticalPoint {
    pub fn is_saddle(&self) -> bool {
        self.signature.0 != self.signature.1
    }

    pub fn value_f64(&self) -> f64 {
        rat_to_f64(&self.exact_value)
    }
}

/// Classification result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPointReport {
    pub region: Region,
    /// `true` when `d < 0`: the region label is that of `−⟨q⟩` (signatures
    /// in `points` are those of `⟨q⟩` itself).
    pub negated: bool,
    pub points: Vec<CriticalPoint>,
}

impl CriticalPointReport {
    pub fn saddles(&self) -> Vec<&CriticalPoint> {
        self.points.iter().filter(|p| p.is_saddle()).collect()
    }

    pub fn find(&self, pred: impl Fn(&Location) -> bool) -> Vec<&CriticalPoint> {
        self.points.iter().filter(|p| pred(&p.location)).collect()
    }
}

fn sign(r: &BigRational) -> i8 {
    if r.is_positive() {
        1
    } else if r.is_negative() {
        -1
    } else {
        0
    }
}

/// Minimal distance in the `(b, c)` plane from the four separating lines.
const LINE_MARGIN: f64 = 1e-9;

fn region_of(b: &BigRational, c: &BigRational, d: &BigRational) -> Option<Region> {
    let zero = BigRational::zero();
    let bd = b.clone() + d.clone();
    let max = |x: &BigRational, y: &BigRational| if x > y { x.clone() } else { y.clone() };
    let min = |x: &BigRational, y: &BigRational| if x < y { x.clone() } else { y.clone() };
    let nb = -b.clone();
    let nbd = -bd.clone();
    if *b > zero && nb < *c && c < b {
        return Some(Region::A);
    }
    if max(b, &nb) < *c && *c < bd {
        return Some(Region::Bplus);
    }
    if nbd < *c && *c < min(b, &nb) {
        return Some(Region::Bminus);
    }
    if *c > max(&bd, &nb) {
        return Some(Region::Cplus);
    }
    if *c < min(b, &nbd) {
        return Some(Region::Cminus);
    }
    if *b < zero && max(b, &nbd) < *c && *c < min(&nb, &bd) {
        return Some(Region::D);
    }
    if max(&bd, &nbd) < *c && *c < nb {
        return Some(Region::Eplus);
    }
    if b < c && *c < min(&nbd, &bd) {
        return Some(Region::Eminus);
    }
    if *b < -d.clone() && bd < *c && *c < nbd {
        return Some(Region::F);
    }
    None
}

/// Critical points of `⟨q⟩` on `Σ` with signatures and exact values.
pub fn classify_critical_points(rf: &ReducedFunction) -> Result<CriticalPointReport> {
    let (a, b, c, d) = (rf.a.clone(), rf.b.clone(), rf.c.clone(), rf.d());
    if d.is_zero() {
        return Err(Error::DegenerateInput("d = b/2 − 2a vanishes".into()));
    }
    if !c.is_zero() && b.is_zero() {
        return Err(Error::DegenerateInput("c ≠ 0 requires b ≠ 0".into()));
    }
    let bd = b.clone() + d.clone();
    if !c.is_zero() && bd.is_zero() {
        return Err(Error::DegenerateInput("c ≠ 0 requires b + d ≠ 0".into()));
    }
    let (bf, cf, df) = (rat_to_f64(&b), rat_to_f64(&c), rat_to_f64(&d));
    for (name, dist) in [
        ("c = b", (cf - bf).abs()),
        ("c = −b", (cf + bf).abs()),
        ("c = b + d", (cf - bf - df).abs()),
        ("c = −(b + d)", (cf + bf + df).abs()),
    ] {
        if dist / std::f64::consts::SQRT_2 <= LINE_MARGIN {
            return Err(Error::DegenerateInput(format!("parameters lie on the line {name}")));
        }
    }
    let negated = d.is_negative();
    let region = if negated {
        region_of(&-b.clone(), &-c.clone(), &-d.clone())
    } else {
        region_of(&b, &c, &d)
    }
    .ok_or_else(|| Error::DegenerateInput("parameters are not inside any region".into()))?;

    let two = rat(2, 1);
    let four = rat(4, 1);
    let mut points = Vec::new();
    let push = |points: &mut Vec<CriticalPoint>, location, signature, v: BigRational| {
        points.push(CriticalPoint {
            location,
            signature,
            value: [v.numer().to_string(), v.denom().to_string()],
            exact_value: v,
        });
    };

    // Crossings.
    push(
        &mut points,
        Location::CrossingCf,
        (sign(&(-c.clone() - bd.clone())), sign(&(-b.clone() - c.clone()))),
        a.clone() + bd.clone() / four.clone() + c.clone() / two.clone(),
    );
    push(
        &mut points,
        Location::CrossingCb,
        (sign(&(c.clone() - bd.clone())), sign(&(c.clone() - b.clone()))),
        a.clone() + bd.clone() / four.clone() - c.clone() / two.clone(),
    );

    // Horizontal circle: cos θ = −c/b when |c/b| < 1.
    if !b.is_zero() {
        let y = -c.clone() / b.clone();
        if y.abs() < BigRational::one() {
            let theta = rat_to_f64(&y).acos();
            let v = a.clone() + d.clone() / four.clone() - c.clone() * c.clone() / (four.clone() * b.clone());
            let sig = (sign(&b), -sign(&d));
            push(&mut points, Location::HorizontalCircle { theta }, sig, v.clone());
            push(&mut points, Location::HorizontalCircle { theta: 2.0 * PI - theta }, sig, v);
        }
    }

    // Vertical circle away from crossings and poles.
    if !c.is_zero() {
        let ratio = c.clone() / bd.clone();
        let one = BigRational::one();
        let theta = if ratio > -one.clone() && ratio < BigRational::zero() {
            Some(0.0)
        } else if ratio > BigRational::zero() && ratio < one {
            Some(PI)
        } else {
            None
        };
        if let Some(theta) = theta {
            let g = rat_to_f64(&(c.clone() / (two.clone() * bd.clone()))).abs();
            let root = (1.0 - 4.0 * g * g).max(0.0).sqrt();
            let v = a.clone() - c.clone() * c.clone() / (four.clone() * bd.clone());
            let sig = (sign(&bd), sign(&d));
            for rho in [(1.0 - root) / 2.0, (1.0 + root) / 2.0] {
                push(&mut points, Location::VerticalCircle { rho, theta }, sig, v.clone());
            }
        }
    } else {
        // Poles are critical iff c = 0.
        let sig = (sign(&bd), sign(&d));
        push(&mut points, Location::PoleRho0, sig, a.clone());
        push(&mut points, Location::PoleRho1, sig, a);
    }

    Ok(CriticalPointReport { region, negated, points })
}

/// Numerically located critical point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NumericCritical {
    pub point: [f64; 3],
    pub value: f64,
    /// Hessian diagonal signs in the tabulated convention.
    pub signature: (i8, i8),
}

/// Outcome of [`grid_verify`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub found: Vec<NumericCritical>,
    pub max_location_error: f64,
    pub max_value_error: f64,
}

/// Grid resolution of the `(ρ, θ)` search.
pub const GRID: usize = 400;
/// Location tolerance of the verification (sphere distance).
pub const VERIFY_TOL: f64 = 1e-6;

/// Gradient and Hessian of `⟨q⟩` in `(ρ, θ)`.
/// `(a, b, c, d)` in floating point.
type Coeffs = (f64, f64, f64, f64);

fn rho_theta_derivs(cf: Coeffs, rho: f64, theta: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let (_, b, c, d) = cf;
    let g2 = rho * (1.0 - rho);
    let g = g2.sqrt();
    let g2p = 1.0 - 2.0 * rho;
    let gp = g2p / (2.0 * g);
    let gpp = (-2.0 * g - g2p * gp) / (2.0 * g2);
    let (s, co) = theta.sin_cos();
    let f_rho = d * g2p + b * g2p * co * co + c * gp * co;
    let f_theta = -2.0 * b * g2 * co * s - c * g * s;
    let f_rr = -2.0 * d - 2.0 * b * co * co + c * gpp * co;
    let f_rt = -2.0 * b * g2p * co * s - c * gp * s;
    let f_tt = -2.0 * b * g2 * (co * co - s * s) - c * g * co;
    ([f_rho, f_theta], [[f_rr, f_rt], [f_rt, f_tt]])
}

/// `⟨q⟩` in the pole chart `ζ_small = u + iv`, `ζ_other = √(1−u²−v²)`.
fn pole_chart(cf: Coeffs, u: f64, v: f64) -> f64 {
    let (a, b, c, d) = cf;
    let s = u * u + v * v;
    let w = (1.0 - s).max(0.0).sqrt();
    a + d * s * (1.0 - s) + b * (u * w).powi(2) + c * u * w
}

fn pole_grad(cf: Coeffs, u: f64, v: f64) -> [f64; 2] {
    let (_, b, c, d) = cf;
    let s = u * u + v * v;
    let w = (1.0 - s).sqrt();
    [
        2.0 * u * d * (1.0 - 2.0 * s) + b * (2.0 * u * (1.0 - s) - 2.0 * u * u * u) + c * (w - u * u / w),
        2.0 * v * d * (1.0 - 2.0 * s) - 2.0 * b * u * u * v - c * u * v / w,
    ]
}

fn pole_hessian(cf: Coeffs, u: f64, v: f64) -> [[f64; 2]; 2] {
    let e = 1e-6;
    let gu = [pole_grad(cf, u + e, v), pole_grad(cf, u - e, v)];
    let gv = [pole_grad(cf, u, v + e), pole_grad(cf, u, v - e)];
    let huu = (gu[0][0] - gu[1][0]) / (2.0 * e);
    let hvv = (gv[0][1] - gv[1][1]) / (2.0 * e);
    let huv = (gu[0][1] - gu[1][1]) / (2.0 * e);
    [[huu, huv], [huv, hvv]]
}

fn sgn(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn newton2(mut p: [f64; 2], grad: impl Fn([f64; 2]) -> [f64; 2], hess: impl Fn([f64; 2]) -> [[f64; 2]; 2]) -> Option<[f64; 2]> {
    for _ in 0..100 {
        let g = grad(p);
        let h = hess(p);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dx = (h[1][1] * g[0] - h[0][1] * g[1]) / det;
        let dy = (h[0][0] * g[1] - h[1][0] * g[0]) / det;
        p = [p[0] - dx, p[1] - dy];
        if !p[0].is_finite() || !p[1].is_finite() {
            return None;
        }
        if dx.abs().max(dy.abs()) < 1e-15 {
            break;
        }
    }
    let g = grad(p);
    (g[0].abs().max(g[1].abs()) < 1e-10).then_some(p)
}

/// Finds all critical points of `⟨q⟩` numerically: local minima of `|∇⟨q⟩|²`
/// on a `400 × 400` `(ρ, θ)` grid and on grids in both pole charts, refined by
/// Newton, deduplicated on the sphere.
pub fn find_critical_numerically(rf: &ReducedFunction) -> Vec<NumericCritical> {
    let cf = rf.f64s();
    let n = GRID;
    let rho_at = |i: usize| (i as f64 + 0.5) / n as f64;
    let theta_at = |j: usize| 2.0 * PI * j as f64 / n as f64;
    let grad2: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (g, _) = rho_theta_derivs(cf, rho_at(k / n), theta_at(k % n));
            g[0] * g[0] + g[1] * g[1]
        })
        .collect();
    let mut candidates: Vec<[f64; 3]> = (0..n * n)
        .into_par_iter()
        .filter_map(|k| {
            let (i, j) = (k / n, k % n);
            let v = grad2[k];
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ii = i as i64 + di;
                    if ii < 0 || ii >= n as i64 {
                        continue;
                    }
                    let jj = (j as i64 + dj).rem_euclid(n as i64) as usize;
                    if grad2[ii as usize * n + jj] < v {
                        return None;
                    }
                }
            }
            let p = newton2(
                [rho_at(i), theta_at(j)],
                |p| rho_theta_derivs(cf, p[0], p[1]).0,
                |p| rho_theta_derivs(cf, p[0], p[1]).1,
            )?;
            (p[0] > 1e-6 && p[0] < 1.0 - 1e-6).then(|| sphere_point(p[0], p[1]))
        })
        .collect();

    // Pole charts.
    let m = 101usize;
    let half = 0.15;
    for pole in [0usize, 1] {
        let at = |k: usize| -half + 2.0 * half * k as f64 / (m - 1) as f64;
        let g2: Vec<f64> = (0..m * m)
            .map(|k| {
                let g = pole_grad(cf, at(k / m), at(k % m));
                g[0] * g[0] + g[1] * g[1]
            })
            .collect();
        for k in 0..m * m {
            let (i, j) = (k / m, k % m);
            let is_min = (-1i64..=1).all(|di| {
                (-1i64..=1).all(|dj| {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    ii < 0 || jj < 0 || ii >= m as i64 || jj >= m as i64 || g2[ii as usize * m + jj as usize] >= g2[k]
                })
            });
            if !is_min {
                continue;
            }
            if let Some(p) = newton2([at(i), at(j)], |p| pole_grad(cf, p[0], p[1]), |p| pole_hessian(cf, p[0], p[1])) {
                if p[0].hypot(p[1]) < half {
                    candidates.push(pole_to_sphere(pole, p[0], p[1]));
                }
            }
        }
    }

    let mut found: Vec<NumericCritical> = Vec::new();
    for p in candidates {
        if found.iter().any(|f| dist3(f.point, p) < VERIFY_TOL) {
            continue;
        }
        found.push(numeric_point(rf, p));
    }
    found
}

/// Sphere point from pole-chart coordinates.
fn pole_to_sphere(pole: usize, u: f64, v: f64) -> [f64; 3] {
    let s = u * u + v * v;
    let arg = v.atan2(u);
    if pole == 0 {
        // ζ₁ = u + iv = √ρ e^{−iθ}
        sphere_point(s, -arg)
    } else {
        // ζ₂ = u + iv = √(1−ρ) e^{−iθ₂}, θ = −θ₂ … = arg
        sphere_point(1.0 - s, arg)
    }
}

/// Value and tabulated-convention signature at a sphere point.
fn numeric_point(rf: &ReducedFunction, p: [f64; 3]) -> NumericCritical {
    let cf = rf.f64s();
    let (rho, theta) = sphere_coords(p);
    let pole = if rho < 1e-3 {
        Some(0)
    } else if rho > 1.0 - 1e-3 {
        Some(1)
    } else {
        None
    };
    let (value, signature) = match pole {
        Some(k) => {
            let s = if k == 0 { rho } else { 1.0 - rho };
            let r = s.sqrt();
            let (u, v) = if k == 0 { (r * theta.cos(), -r * theta.sin()) } else { (r * theta.cos(), r * theta.sin()) };
            let h = pole_hessian(cf, u, v);
            (pole_chart(cf, u, v), (sgn(h[0][0]), sgn(h[1][1])))
        }
        None => {
            let (_, h) = rho_theta_derivs(cf, rho, theta);
            let on_horizontal = (rho - 0.5).abs() < 1e-9;
            let on_vertical = theta.sin().abs() < 1e-9;
            let sig = if on_horizontal && !on_vertical {
                (sgn(h[1][1]), sgn(h[0][0]))
            } else {
                (sgn(h[0][0]), sgn(h[1][1]))
            };
            (rf.eval(rho, theta), sig)
        }
    };
    NumericCritical { point: p, value, signature }
}

/// Matches a numerical critical-point search against `report`: a bijection
/// within [`VERIFY_TOL`] on the sphere with equal signatures and values to
/// `1e-9`.
pub fn grid_verify(rf: &ReducedFunction, report: &CriticalPointReport) -> Result<Verification> {
    let found = find_critical_numerically(rf);
    let mut problems = Vec::new();
    let mut used = vec![false; found.len()];
    let mut max_loc: f64 = 0.0;
    let mut max_val: f64 = 0.0;
    for cp in &report.points {
        let target = cp.location.sphere_point();
        let best = found
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .min_by(|x, y| dist3(x.1.point, target).total_cmp(&dist3(y.1.point, target)));
        match best {
            Some((k, f)) if dist3(f.point, target) <= VERIFY_TOL => {
                used[k] = true;
                max_loc = max_loc.max(dist3(f.point, target));
                let dv = (f.value - cp.value_f64()).abs();
                max_val = max_val.max(dv);
                if f.signature != cp.signature {
                    problems.push(format!(
                        "{:?}: signature {:?} reported, {:?} found",
                        cp.location, cp.signature, f.signature
                    ));
                }
                if dv > 1e-9 {
                    problems.push(format!("{:?}: value off by {dv:e}", cp.location));
                }
            }
            _ => problems.push(format!("{:?}: not found numerically", cp.location)),
        }
    }
    for (k, f) in found.iter().enumerate() {
        if !used[k] {
            let (rho, theta) = sphere_coords(f.point);
            problems.push(format!("unreported critical point at rho = {rho}, theta = {theta}"));
        }
    }
    if problems.is_empty() {
        Ok(Verification { found, max_location_error: max_loc, max_value_error: max_val })
    } else {
        Err(Error::Mismatch(problems.join("; ")))
    }
}

/// Which branch of the unstable manifold leaves the saddle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Loop {
    /// Launched towards smaller `ρ` (or towards `−Y` when `ρ` is neutral).
    LeftLoop,
    RightLoop,
}

/// Launch offset along the unstable eigenvector.
pub const LAUNCH_OFFSET: f64 = 1e-8;
/// Return radius below which the linearised tail replaces integration.
pub const RETURN_RADIUS: f64 = 1e-6;
/// Time budget of one separatrix loop.
pub const MAX_LOOP_TIME: f64 = 1e4;

/// Hamiltonian vector field of `⟨q⟩` on `Σ ⊂ ℝ³` (area form `dρ∧dθ`):
/// `ẋ = 2 x × ∇⟨q⟩`.
fn field(rf: &ReducedFunction, p: [f64; 3]) -> [f64; 3] {
    let (_, g) = rf.sphere(p);
    [
        2.0 * (p[1] * g[2] - p[2] * g[1]),
        2.0 * (p[2] * g[0] - p[0] * g[2]),
        2.0 * (p[0] * g[1] - p[1] * g[0]),
    ]
}

fn normalize(p: [f64; 3]) -> [f64; 3] {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / r, p[1] / r, p[2] / r]
}

/// `∫_{−∞}^{∞} [f(ρ(t),θ(t)) − f(ρ_c)] dt` along the separatrix loop of
/// `⟨q⟩` through its crossing saddle (the `C_f` saddle in region `D`).
pub fn action_perturbation(rf: &ReducedFunction, f: &(dyn Fn(f64, f64) -> f64 + Sync), which: Loop) -> Result<f64> {
    let report = classify_critical_points(rf)?;
    let saddle = report
        .points
        .iter()
        .find(|p| p.is_saddle() && matches!(p.location, Location::CrossingCf))
        .or_else(|| report.points.iter().find(|p| p.is_saddle() && matches!(p.location, Location::CrossingCb)))
        .ok_or_else(|| Error::NoLoop(format!("no crossing saddle in region {:?}", report.region)))?;
    action_perturbation_at(rf, f, saddle.location, which)
}

/// As [`action_perturbation`] for an explicitly chosen crossing saddle.
pub fn action_perturbation_at(
    rf: &ReducedFunction,
    f: &(dyn Fn(f64, f64) -> f64 + Sync),
    saddle: Location,
    which: Loop,
) -> Result<f64> {
    let s = match saddle {
        Location::CrossingCf | Location::CrossingCb => saddle.sphere_point(),
        _ => return Err(Error::NoLoop("loops are launched from C_f or C_b".into())),
    };
    let (rho_c, theta_c) = sphere_coords(s);
    let f_c = f(rho_c, theta_c);
    // Linearisation in the tangent basis (e_Y, e_Z).
    let e = 1e-6;
    let basis = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut jac = [[0.0; 2]; 2];
    for (col, b) in basis.iter().enumerate() {
        let plus = field(rf, normalize([s[0] + e * b[0], s[1] + e * b[1], s[2] + e * b[2]]));
        let minus = field(rf, normalize([s[0] - e * b[0], s[1] - e * b[1], s[2] - e * b[2]]));
        jac[0][col] = (plus[1] - minus[1]) / (2.0 * e);
        jac[1][col] = (plus[2] - minus[2]) / (2.0 * e);
    }
    let tr = jac[0][0] + jac[1][1];
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let disc = tr * tr / 4.0 - det;
    if disc <= 0.0 {
        return Err(Error::NoLoop("critical point is not hyperbolic".into()));
    }
    let lambda = tr / 2.0 + disc.sqrt();
    // Eigenvector of λ.
    let v = if (jac[0][1]).abs() > (jac[1][0]).abs() {
        [jac[0][1], lambda - jac[0][0]]
    } else {
        [lambda - jac[1][1], jac[1][0]]
    };
    let nv = v[0].hypot(v[1]);
    let mut v = [v[0] / nv, v[1] / nv];
    let toward_left = v[1] < 0.0 || (v[1] == 0.0 && v[0] < 0.0);
    if (which == Loop::LeftLoop) != toward_left {
        v = [-v[0], -v[1]];
    }
    let start = normalize([s[0], s[1] + LAUNCH_OFFSET * v[0], s[2] + LAUNCH_OFFSET * v[1]]);
    let integrand = |p: [f64; 3]| {
        let (rho, theta) = sphere_coords(p);
        f(rho, theta) - f_c
    };
    // Tail before the launch: the displacement grows like e^{λt}.
    let mut total = integrand(start) / lambda;

    // Dormand–Prince 5(4) on (x, ∫).
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    const TOL: f64 = 1e-12;
    let mut y = start;
    let mut t = 0.0;
    let mut dt = 1e-3 / lambda;
    let mut left_neighbourhood = false;
    let mut r_prev = f64::INFINITY;
    while t < MAX_LOOP_TIME {
        let mut k = [[0.0f64; 4]; 7];
        for stage in 0..7 {
            let mut p = y;
            for (prev, a) in A[stage].iter().enumerate().take(stage) {
                for d in 0..3 {
                    p[d] += dt * a * k[prev][d];
                }
            }
            let fv = field(rf, p);
            k[stage] = [fv[0], fv[1], fv[2], integrand(p)];
        }
        let mut step = [0.0; 4];
        let mut err: f64 = 0.0;
        for d in 0..4 {
            let s5: f64 = (0..7).map(|i| B5[i] * k[i][d]).sum();
            let s4: f64 = (0..7).map(|i| B4[i] * k[i][d]).sum();
            step[d] = dt * s5;
            err = err.max((dt * (s5 - s4)).abs());
        }
        if err <= TOL {
            let next = normalize([y[0] + step[0], y[1] + step[1], y[2] + step[2]]);
            let r = dist3(next, s);
            if left_neighbourhood && r > r_prev && r_prev < 1e-3 {
                // Closest approach reached: tail of the decaying displacement.
                return Ok(total + integrand(y) / lambda);
            }
            total += step[3];
            t += dt;
            y = next;
            r_prev = r;
            if r > 1e-3 {
                left_neighbourhood = true;
            }
            if left_neighbourhood && r < RETURN_RADIUS {
                return Ok(total + integrand(y) / lambda);
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * (TOL / err).powf(0.2)).clamp(0.2, 5.0) };
        dt *= factor;
        if left_neighbourhood {
            // Near the saddle the speed is ≈ λ·r; never jump across it.
            dt = dt.min(0.5 * dist3(y, s) / field_speed(rf, y).max(1e-300));
        }
    }
    Err(Error::NoLoop(format!("trajectory did not return within t = {MAX_LOOP_TIME}")))
}

fn field_speed(rf: &ReducedFunction, p: [f64; 3]) -> f64 {
    let v = field(rf, p);
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_of_conjugate_pair() {
        let b = poisson(&BalancedLaurent::z(0), &BalancedLaurent::zbar(0));
        assert_eq!(b, BalancedLaurent::constant(Complex::new(BigRational::zero(), rat(2, 1))));
    }

    #[test]
    fn oscillator_generates_rotation() {
        // {p, z} = −iz
        let b = poisson(&oscillator(), &BalancedLaurent::z(1));
        assert_eq!(b, BalancedLaurent::z(1).scale(&Complex::new(BigRational::zero(), rat(-1, 1))));
    }
}
