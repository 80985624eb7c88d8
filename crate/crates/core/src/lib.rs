//! Semiclassical spectral analysis at a branching (saddle) level.
//!
//! The crate provides
//! * [`specfun`] — principal log-Gamma, Stirling approximants and remainders;
//! * [`transition`] — the exact 2×2 transition matrix across the branch point,
//!   its asymptotic tableau and phase renormalisation;
//! * [`quantization`] — the four-term quantization function `G(μ;h)` in all
//!   regimes, Bohr–Sommerfeld solvers, Grushin determinants and 2-D assembly;
//! * [`skeleton`] — implicit curves where two terms balance, the skeleton,
//!   diamonds, crossing points and the thickened body;
//! * [`zerocount`] — winding-number counting, zero location, the admissible
//!   curve phase sum and zero matching;
//! * [`schrodinger`] — Chebyshev collocation of `(hD)² + V + iεW` and a dense
//!   complex eigensolver;
//! * [`flowavg`] — exact flow averages over the 1:1 harmonic oscillator,
//!   correlations and critical-point classification on the reduced sphere.

pub mod calibration;
pub mod error;
pub mod flowavg;
pub mod poly;
pub mod quantization;
pub mod schrodinger;
pub mod skeleton;
pub mod specfun;
pub mod transition;
pub mod zerocount;

pub use error::{Error, Result};
pub use num_complex::Complex64;
