//! Error type shared by every numerical module of the crate.

use num_complex::Complex64;
use thiserror::Error;

/// Errors raised by the numerical pipelines.
///
/// Each variant names the failed precondition or the numerical breakdown so
/// that callers (and the command-line front end) can report it verbatim.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Argument within the fixed tolerance of a pole of Γ.
    #[error("argument {0} is within 1e-14 of a pole of the Gamma function")]
    Pole(Complex64),

    /// A Stirling regime was requested inside its forbidden cone or too close to 0.
    #[error("Stirling regime not admissible at mu = {mu}: {reason}")]
    Regime { mu: Complex64, reason: String },

    /// An asymptotic tableau sector was requested outside its domain.
    #[error("sector precondition failed at mu = {mu}: {reason}")]
    Sector { mu: Complex64, reason: String },

    /// An iterative solver did not converge; `last` is the final iterate.
    #[error("no convergence after {iterations} iterations (last iterate {last}, residual {residual:e})")]
    NoConvergence {
        last: Complex64,
        residual: f64,
        iterations: usize,
    },

    /// A Newton iterate left the admissible sector of its branch.
    #[error("iterate {0} left the admissible sector")]
    SectorEscape(Complex64),

    /// A coefficient used as a divisor underflows.
    #[error("degenerate coefficient: {0}")]
    Degenerate(String),

    /// Input fails a documented precondition; the message names the clause.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The function vanishes on the contour even after the allowed perturbations.
    #[error("function vanishes on the contour (after {retries} outward shifts)")]
    OnContourZero { retries: usize },

    /// The quadrisection cell budget was exhausted.
    #[error("cell budget of {budget} exhausted with {found} zeros located so far")]
    CellBudget { budget: usize, found: usize },

    /// An admissible-curve clause is violated.
    #[error("curve is not admissible: {0}")]
    NotAdmissible(String),

    /// Zero matching failed to produce a bijection.
    #[error("bijection failure: {unmatched_found} found and {unmatched_predicted} predicted points unmatched")]
    Bijection {
        unmatched_found: usize,
        unmatched_predicted: usize,
    },

    /// The dense eigensolver exceeded its sweep budget.
    #[error("QR iteration did not converge within {0} sweeps")]
    NonConvergence(usize),

    /// Symbolic input depends on the fast angle θ₁+θ₂.
    #[error("expression is not flow invariant")]
    NotInvariant,

    /// Classification preconditions fail.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Numerical verification disagrees with a report.
    #[error("verification mismatch: {0}")]
    Mismatch(String),

    /// No homoclinic loop exists for the requested action integral.
    #[error("no separatrix loop: {0}")]
    NoLoop(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
