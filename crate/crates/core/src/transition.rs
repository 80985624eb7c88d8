//! The exact transition matrix across the branch point, its asymptotic
//! tableau for `|μ| ≫ h`, and phase renormalisation of its coefficients.
//!
//! With `w = μ/h` the exact entries are
//!
//! ```text
//! a23 = √(2π) h^{iw} / Γ(½ − iw) · e^{πw/2 + iπ/4}     a24 = −e^{πw + iπ/2}
//! a13 = e^{πw + iπ/2}                                   a14 = √(2π) h^{−iw} / Γ(½ + iw) · e^{πw/2 − iπ/4}
//! ```
//!
//! and `a23·a14 − a24·a13 = 1` by the reflection identity.

use crate::error::{Error, Result};
use crate::specfun::{
    angular_distance, log_cosh, log_rgamma, remainder_unchecked, ComplexValue, StirlingRegime,
    LN_SQRT_2PI,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, LN_2, PI};

/// Angular margin (radians) used by every tableau sector test.
pub const SECTOR_MARGIN: f64 = 0.1;

/// Minimal |μ|/h accepted by [`asymptotic_entry`].
pub const TABLEAU_MIN_RATIO: f64 = 5.0;

/// Entries of the transition matrix together with their logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub mu: ComplexValue,
    pub h: f64,
    pub a23: ComplexValue,
    pub a24: ComplexValue,
    pub a13: ComplexValue,
    pub a14: ComplexValue,
    pub log_a23: ComplexValue,
    pub log_a24: ComplexValue,
    pub log_a13: ComplexValue,
    pub log_a14: ComplexValue,
}

impl TransitionMatrix {
    /// `a23·a14 − a24·a13` formed from the linear entries.
    pub fn det(&self) -> ComplexValue {
        self.a23 * self.a14 - self.a24 * self.a13
    }

    /// `|det − 1|` divided by the magnitude scale `max(1, |a23 a14|, |a24 a13|)`
    /// of the two products, evaluated in log-space so that it never overflows.
    pub fn det_relative_error(&self) -> f64 {
        let p = self.log_a23 + self.log_a14;
        let q = self.log_a24 + self.log_a13;
        let scale = p.re.max(q.re).max(0.0);
        let shifted = (p - scale).exp() - (q - scale).exp() - (-scale).exp();
        shifted.norm()
    }
}

/// Exact transition matrix at spectral parameter `mu` and semiclassical `h`.
pub fn exact_matrix(mu: ComplexValue, h: f64) -> Result<TransitionMatrix> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("h must be positive, got {h}")));
    }
    let i = Complex64::i();
    let w = mu / h;
    let lnh = h.ln();
    let log_a23 =
        LN_SQRT_2PI + i * w * lnh + log_rgamma(0.5 - i * w) + PI * w / 2.0 + i * FRAC_PI_4;
    let log_a14 =
        LN_SQRT_2PI - i * w * lnh + log_rgamma(0.5 + i * w) + PI * w / 2.0 - i * FRAC_PI_4;
    // −e^{πw + iπ/2} = e^{πw − iπ/2}
    let log_a24 = PI * w - i * FRAC_PI_2;
    let log_a13 = PI * w + i * FRAC_PI_2;
    Ok(TransitionMatrix {
        mu,
        h,
        a23: safe_exp(log_a23),
        a24: safe_exp(log_a24),
        a13: safe_exp(log_a13),
        a14: safe_exp(log_a14),
        log_a23,
        log_a24,
        log_a13,
        log_a14,
    })
}

/// `exp` that maps a `−∞` real part to an exact zero.
pub fn safe_exp(z: Complex64) -> Complex64 {
    if z.re == f64::NEG_INFINITY {
        Complex64::new(0.0, 0.0)
    } else {
        z.exp()
    }
}

/// Which off-diagonal-free entry of the tableau is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Entry {
    A23,
    A14,
}

/// The four blocks of the asymptotic tableau.
///
/// * `RightReal`: `|arg μ| ≤ π/2 − margin`;
/// * `LeftReal`: `|arg μ| ≥ π/2 + margin`;
/// * `UpperHalf`: μ at angular distance ≥ margin from `−i·ℝ₊`;
/// * `LowerHalf`: μ at angular distance ≥ margin from `+i·ℝ₊`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sector {
    RightReal,
    UpperHalf,
    LeftReal,
    LowerHalf,
}

impl Sector {
    pub const ALL: [Sector; 4] = [
        Sector::RightReal,
        Sector::UpperHalf,
        Sector::LeftReal,
        Sector::LowerHalf,
    ];

    /// Whether `mu` lies in the sector with the fixed margin.
    pub fn contains(&self, mu: ComplexValue) -> bool {
        let a = mu.arg();
        match self {
            Sector::RightReal => a.abs() <= FRAC_PI_2 - SECTOR_MARGIN,
            Sector::LeftReal => a.abs() >= FRAC_PI_2 + SECTOR_MARGIN,
            Sector::UpperHalf => angular_distance(a, -FRAC_PI_2) >= SECTOR_MARGIN,
            Sector::LowerHalf => angular_distance(a, FRAC_PI_2) >= SECTOR_MARGIN,
        }
    }
}

/// Log of the tableau expression for `entry` in `sector`, with the Stirling
/// remainders dropped (`include_remainder = false`) or kept exactly.
///
/// With the remainders kept the value coincides with the exact entry (modulo
/// 2πi), which is how the tableau itself is tested.
pub fn tableau_entry(
    entry: Entry,
    mu: ComplexValue,
    h: f64,
    sector: Sector,
    include_remainder: bool,
) -> ComplexValue {
    let i = Complex64::i();
    let w = mu / h;
    let o_minus = || {
        if include_remainder {
            remainder_unchecked(mu, h, StirlingRegime::MinusBranch)
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let o_plus = || {
        if include_remainder {
            remainder_unchecked(mu, h, StirlingRegime::PlusBranch)
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    // ln(2 cosh πw): the "±iπμ" pairs of the tableau summed in closed form.
    let two_cosh = || LN_2 + log_cosh(PI * w);
    match (sector, entry) {
        (Sector::RightReal, Entry::A23) => {
            i * w * mu.ln() + PI * w - i * w + i * FRAC_PI_4 - o_minus()
        }
        (Sector::RightReal, Entry::A14) => {
            -i * w * mu.ln() + PI * w + i * w - i * FRAC_PI_4 - o_plus()
        }
        (Sector::UpperHalf, Entry::A23) => {
            let l = (-i * mu).ln();
            i * w * l + PI * w / 2.0 - i * w + i * FRAC_PI_4 - o_minus()
        }
        (Sector::UpperHalf, Entry::A14) => {
            let l = (-i * mu).ln();
            -i * w * l + PI * w / 2.0 + i * w - i * FRAC_PI_4 + o_minus() + two_cosh()
        }
        (Sector::LeftReal, Entry::A23) => {
            i * w * (-mu).ln() - i * w + i * FRAC_PI_4 - o_minus()
        }
        (Sector::LeftReal, Entry::A14) => {
            -i * w * (-mu).ln() + i * w - i * FRAC_PI_4 - o_plus()
        }
        (Sector::LowerHalf, Entry::A23) => {
            let l = (i * mu).ln();
            i * w * l + PI * w / 2.0 - i * w + i * FRAC_PI_4 + o_plus() + two_cosh()
        }
        (Sector::LowerHalf, Entry::A14) => {
            let l = (i * mu).ln();
            -i * w * l + PI * w / 2.0 + i * w - i * FRAC_PI_4 - o_plus()
        }
    }
}

/// Log of the asymptotic tableau expression (remainders dropped).
pub fn asymptotic_entry(
    entry: Entry,
    mu: ComplexValue,
    h: f64,
    sector: Sector,
) -> Result<ComplexValue> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("h must be positive, got {h}")));
    }
    if mu.norm() / h < TABLEAU_MIN_RATIO {
        return Err(Error::Sector {
            mu,
            reason: format!("|mu|/h = {} < {}", mu.norm() / h, TABLEAU_MIN_RATIO),
        });
    }
    if !sector.contains(mu) {
        return Err(Error::Sector {
            mu,
            reason: format!("mu is not inside {sector:?} with margin {SECTOR_MARGIN}"),
        });
    }
    Ok(tableau_entry(entry, mu, h, sector, false))
}

/// Relative error `|exp(asymptotic) − exact| / |exact|` of a tableau entry.
pub fn tableau_relative_error(entry: Entry, mu: ComplexValue, h: f64, sector: Sector) -> Result<f64> {
    let approx = asymptotic_entry(entry, mu, h, sector)?;
    let tm = exact_matrix(mu, h)?;
    let exact = match entry {
        Entry::A23 => tm.log_a23,
        Entry::A14 => tm.log_a14,
    };
    Ok(crate::specfun::cexpm1(reduce_2pi(approx - exact)).norm())
}

/// Representative of `z` modulo 2πi with imaginary part in (−π, π].
pub fn reduce_2pi(mut z: Complex64) -> Complex64 {
    z.im -= 2.0 * PI * (z.im / (2.0 * PI)).round();
    z
}

/// Renormalised coefficients `c_jk = e^{−(i/h)(d_j − d_k)} a_jk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenormalizedCoeffs {
    pub h: f64,
    /// Phases `d_1 … d_4` (index 0 ↔ d_1).
    pub d: [ComplexValue; 4],
    pub log_c23: ComplexValue,
    pub log_c24: ComplexValue,
    pub log_c13: ComplexValue,
    pub log_c14: ComplexValue,
    pub c23: ComplexValue,
    pub c24: ComplexValue,
    pub c13: ComplexValue,
    pub c14: ComplexValue,
}

impl RenormalizedCoeffs {
    /// `θ_{jk} = d_j − d_k` for `j, k ∈ 1..=4`.
    pub fn theta(&self, j: usize, k: usize) -> ComplexValue {
        assert!((1..=4).contains(&j) && (1..=4).contains(&k), "indices are 1-based");
        self.d[j - 1] - self.d[k - 1]
    }

    /// Log of the factor relating the c-determinant to the a-determinant,
    /// `−(i/h)(d1 + d2 − d3 − d4)`.
    pub fn log_det_factor(&self) -> ComplexValue {
        -Complex64::i() / self.h * (self.d[0] + self.d[1] - self.d[2] - self.d[3])
    }
}

/// Apply the phase renormalisation `d` to the transition matrix.
pub fn renormalize(tm: &TransitionMatrix, d: [ComplexValue; 4]) -> RenormalizedCoeffs {
    let i = Complex64::i();
    let h = tm.h;
    let f = |j: usize, k: usize| -i / h * (d[j - 1] - d[k - 1]);
    let log_c23 = tm.log_a23 + f(2, 3);
    let log_c24 = tm.log_a24 + f(2, 4);
    let log_c13 = tm.log_a13 + f(1, 3);
    let log_c14 = tm.log_a14 + f(1, 4);
    RenormalizedCoeffs {
        h,
        d,
        log_c23,
        log_c24,
        log_c13,
        log_c14,
        c23: safe_exp(log_c23),
        c24: safe_exp(log_c24),
        c13: safe_exp(log_c13),
        c14: safe_exp(log_c14),
    }
}
