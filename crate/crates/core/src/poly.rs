//! Small dense polynomial types (ascending coefficient order).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Polynomial with complex coefficients, `Σ c_k μ^k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CPoly {
    pub coeffs: Vec<Complex64>,
}

impl CPoly {
    pub fn new(coeffs: Vec<Complex64>) -> Self {
        Self { coeffs }
    }

    /// The zero polynomial.
    pub fn zero() -> Self {
        Self { coeffs: vec![] }
    }

    /// Constant polynomial.
    pub fn constant(c: Complex64) -> Self {
        Self { coeffs: vec![c] }
    }

    /// Polynomial from real coefficients.
    pub fn from_real(coeffs: &[f64]) -> Self {
        Self {
            coeffs: coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect(),
        }
    }

    /// Horner evaluation.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    /// First derivative evaluated at `z`.
    pub fn eval_deriv(&self, z: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * z + c * k as f64;
        }
        acc
    }

    /// True when every coefficient is real.
    pub fn is_real(&self) -> bool {
        self.coeffs.iter().all(|c| c.im == 0.0)
    }
}

/// Polynomial with real coefficients, `Σ c_k x^k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RPoly {
    pub coeffs: Vec<f64>,
}

impl RPoly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_deriv(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * x + c * k as f64;
        }
        acc
    }

    /// True when `p(−x) = p(x)` (only even powers carry weight).
    pub fn is_even(&self) -> bool {
        self.coeffs.iter().enumerate().all(|(k, &c)| k % 2 == 0 || c == 0.0)
    }
}

/// Bivariate complex polynomial `Σ c_{ij} τ^i μ^j`, stored as rows in τ.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BiPoly {
    pub coeffs: Vec<Vec<Complex64>>,
}

impl BiPoly {
    /// `K(τ, μ) = μ`.
    pub fn identity_in_mu() -> Self {
        Self {
            coeffs: vec![vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]],
        }
    }

    pub fn eval(&self, tau: f64, mu: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for row in self.coeffs.iter().rev() {
            let inner = row
                .iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |a, &c| a * mu + c);
            acc = acc * tau + inner;
        }
        acc
    }
}
