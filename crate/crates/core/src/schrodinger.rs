//! Chebyshev collocation of `P = (hD)² + V(x) + iεW(x)` on `[−L, L]` with
//! Dirichlet truncation, and a dense complex eigensolver (balancing,
//! Householder reduction to Hessenberg form, implicitly shifted single-shift
//! QR with Givens rotations).
//!
//! Eigenvalues are only trusted once they reproduce across two resolutions
//! ([`spurious_filter`]); [`branch_structure_report`] then summarises the
//! below/above-barrier structure of the double-well family.

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::RPoly;

/// Largest matrix dimension accepted by [`eigensolve`].
pub const MAX_DIMENSION: usize = 2000;
/// QR sweep budget per unit of dimension.
pub const SWEEPS_PER_DIMENSION: usize = 30;
/// Number of eigenpairs checked by inverse iteration.
pub const BACKWARD_CHECKS: usize = 10;
/// Maximum inverse-iteration steps per checked eigenpair.
pub const INVERSE_ITERATIONS: usize = 6;
/// Admissible backward error relative to the Frobenius norm.
pub const BACKWARD_TOLERANCE: f64 = 1e-8;
/// Relative matching tolerance across resolutions: `tol = 1e-6·(1+|λ|)`.
pub const MATCH_TOLERANCE: f64 = 1e-6;
/// Default half-width for the quartic double-well family.
pub const DEFAULT_L: f64 = 2.5;
/// Default collocation size and resolution step for `h = 10⁻³` runs.
pub const DEFAULT_N: usize = 800;
pub const DEFAULT_DELTA: usize = 80;

const SEED: u64 = 0x5eed_c4eb;

/// Operator data `(hD)² + V + iεW` on `[−L, L]` with `N` collocation intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub v: RPoly,
    pub w: RPoly,
    pub h: f64,
    pub epsilon: f64,
    pub l: f64,
    pub n: usize,
}

impl OperatorSpec {
    /// Validates the scalar fields.
    pub fn new(v: RPoly, w: RPoly, h: f64, epsilon: f64, l: f64, n: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("h = {h} must be positive")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!("epsilon = {epsilon} must be ≥ 0")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidInput(format!("L = {l} must be positive")));
        }
        if n < 16 {
            return Err(Error::InvalidInput(format!("N = {n} must be ≥ 16")));
        }
        Ok(Self { v, w, h, epsilon, l, n })
    }

    /// The double well `V = −x² + x⁴` with perturbation `w`.
    pub fn double_well(w: RPoly, h: f64, epsilon: f64, l: f64, n: usize) -> Result<Self> {
        Self::new(RPoly::new(vec![0.0, 0.0, -1.0, 0.0, 1.0]), w, h, epsilon, l, n)
    }

    /// Same operator at another resolution.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.v.clone(), self.w.clone(), self.h, self.epsilon, self.l, n)
    }

    /// Confinement check for an energy window reaching up to `e_max`:
    /// `V(±L) ≥ 2·e_max`.
    pub fn check_confinement(&self, e_max: f64) -> Result<()> {
        let wall = self.v.eval(-self.l).min(self.v.eval(self.l));
        if wall < 2.0 * e_max {
            return Err(Error::InvalidInput(format!(
                "V(±L) = {wall} is below twice the window energy {e_max}"
            )));
        }
        Ok(())
    }

    /// Bounds of `W` on `[−L, L]` (sampled on the collocation nodes and the ends).
    pub fn w_range(&self) -> (f64, f64) {
        let (_, x) = chebyshev(self.n);
        x.iter()
            .map(|&t| self.w.eval(t * self.l))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| (lo.min(w), hi.max(w)))
    }

    /// Interior collocation nodes `x_1 … x_{N−1}` (decreasing).
    pub fn interior_nodes(&self) -> Vec<f64> {
        let (_, x) = chebyshev(self.n);
        x[1..self.n].iter().map(|t| t * self.l).collect()
    }
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, z: Complex64) {
        self.data[i * self.n + j] = z;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.data
            .chunks(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Frobenius norm of `(A − Aᴴ)/2 − iε·diag(w)`.
    pub fn anti_hermitian_defect(&self, i_eps_w: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut d = (self.get(i, j) - self.get(j, i).conj()) * 0.5;
                if i == j {
                    d -= Complex64::new(0.0, i_eps_w[i]);
                }
                s += d.norm_sqr();
            }
        }
        s.sqrt()
    }
}

/// Chebyshev–Gauss–Lobatto nodes `x_j = cos(πj/N)` and the first-order
/// collocation differentiation matrix on `[−1, 1]`, `(N+1)×(N+1)` row-major,
/// with diagonals from the negative-sum identity.
pub fn chebyshev(n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = n + 1;
    // sin form of cos(πj/N): exactly antisymmetric under j ↦ N − j.
    let x: Vec<f64> = (0..m)
        .map(|j| (std::f64::consts::PI * (n as f64 - 2.0 * j as f64) / (2.0 * n as f64)).sin())
        .collect();
    let c: Vec<f64> = (0..m)
        .map(|j| {
            let e = if j == 0 || j == n { 2.0 } else { 1.0 };
            if j % 2 == 0 {
                e
            } else {
                -e
            }
        })
        .collect();
    let mut d = vec![0.0; m * m];
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            if i != j {
                // x_i − x_j via the product formula avoids cancellation.
                let half = std::f64::consts::PI / (2.0 * n as f64);
                let dx = 2.0 * (half * (i + j) as f64).sin() * (half * (j as f64 - i as f64)).sin();
                let v = c[i] / (c[j] * dx);
                d[i * m + j] = v;
                row += v;
            }
        }
        d[i * m + i] = -row;
    }
    (d, x)
}

/// Second-order differentiation matrix on `[−L, L]`, `D²` as `D·D` with the
/// negative-sum trick on the diagonal, `(N+1)×(N+1)` row-major.
pub fn second_derivative(n: usize, l: f64) -> Vec<f64> {
    let (d, _) = chebyshev(n);
    let m = n + 1;
    let scale = 1.0 / (l * l);
    let mut d2 = vec![0.0; m * m];
    d2.par_chunks_mut(m).enumerate().for_each(|(i, out)| {
        for k in 0..m {
            let a = d[i * m + k];
            if a != 0.0 {
                for (o, b) in out.iter_mut().zip(&d[k * m..(k + 1) * m]) {
                    *o += a * b;
                }
            }
        }
        let mut row = 0.0;
        for (j, o) in out.iter_mut().enumerate() {
            *o *= scale;
            if j != i {
                row += *o;
            }
        }
        out[i] = -row;
    });
    d2
}

/// `(N−1)×(N−1)` interior matrix `−h²D² + diag(V + iεW)`.
pub fn discretize(spec: &OperatorSpec) -> CMatrix {
    let n = spec.n;
    let m = n + 1;
    let d2 = second_derivative(n, spec.l);
    let x = spec.interior_nodes();
    let h2 = spec.h * spec.h;
    CMatrix::from_fn(n - 1, |i, j| {
        let mut z = Complex64::new(-h2 * d2[(i + 1) * m + (j + 1)], 0.0);
        if i == j {
            z += Complex64::new(spec.v.eval(x[i]), spec.epsilon * spec.w.eval(x[i]));
        }
        z
    })
}

/// Resolution metadata attached to a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub n: usize,
    pub l: f64,
    pub h: f64,
    pub epsilon: f64,
}

/// Eigenvalues with their resolution flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub resolved: Vec<bool>,
    pub meta: SpectrumMeta,
    /// Largest inverse-iteration residual relative to `‖A‖_F`.
    pub backward_error: f64,
}

impl Spectrum {
    pub fn resolved_eigenvalues(&self) -> Vec<Complex64> {
        self.eigenvalues
            .iter()
            .zip(&self.resolved)
            .filter(|(_, &r)| r)
            .map(|(z, _)| *z)
            .collect()
    }

    /// Rows `(re, im, resolved)` for CSV export.
    pub fn csv_rows(&self) -> Vec<(f64, f64, bool)> {
        self.eigenvalues.iter().zip(&self.resolved).map(|(z, &r)| (z.re, z.im, r)).collect()
    }
}

#[inline]
fn cabs1(z: Complex64) -> f64 {
    z.re.abs() + z.im.abs()
}

/// Diagonal similarity `A ← D⁻¹AD` (powers of two) equalising row and column
/// norms; returns `D`.
fn balance(a: &mut CMatrix) -> Vec<f64> {
    let n = a.n;
    let mut d = vec![1.0; n];
    let radix = 2.0_f64;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += cabs1(a.get(j, i));
                    r += cabs1(a.get(i, j));
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            while cc < r / radix {
                f *= radix;
                cc *= radix * radix;
            }
            while cc >= r * radix {
                f /= radix;
                cc /= radix * radix;
            }
            if c * f + r / f < 0.95 * s {
                done = false;
                d[i] *= f;
                for j in 0..n {
                    let v = a.get(i, j) / f;
                    a.set(i, j, v);
                }
                for j in 0..n {
                    let v = a.get(j, i) * f;
                    a.set(j, i, v);
                }
            }
        }
        if done {
            return d;
        }
    }
}

/// Householder reflectors `P_k = I − 2 v vᴴ` acting on rows `k+1..n`.
struct Reflectors {
    vs: Vec<(usize, Vec<Complex64>)>,
}

impl Reflectors {
    /// `y ← P_0 P_1 ⋯ P_{n−3} y`.
    fn apply(&self, y: &mut [Complex64]) {
        for (k, v) in self.vs.iter().rev() {
            let s: Complex64 = v.iter().zip(&y[k + 1..]).map(|(vi, yi)| vi.conj() * yi).sum();
            for (vi, yi) in v.iter().zip(&mut y[k + 1..]) {
                *yi -= 2.0 * s * vi;
            }
        }
    }
}

fn hessenberg(a: &mut CMatrix) -> Reflectors {
    let n = a.n;
    let mut vs = Vec::new();
    for k in 0..n.saturating_sub(2) {
        let mut v: Vec<Complex64> = (k + 1..n).map(|i| a.get(i, k)).collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let phase = if v[0].norm() > 0.0 { v[0] / v[0].norm() } else { Complex64::new(1.0, 0.0) };
        v[0] += phase * norm;
        let vn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vn == 0.0 {
            continue;
        }
        for z in v.iter_mut() {
            *z /= vn;
        }
        // Left: rows k+1..n, columns k..n.
        let mut w = vec![Complex64::new(0.0, 0.0); n - k];
        for (vi, i) in v.iter().zip(k + 1..n) {
            let cv = vi.conj();
            let row = &a.data[i * n + k..(i + 1) * n];
            for (wj, aij) in w.iter_mut().zip(row) {
                *wj += cv * aij;
            }
        }
        for (vi, i) in v.iter().zip(k + 1..n) {
            let f = 2.0 * vi;
            let row = &mut a.data[i * n + k..(i + 1) * n];
            for (aij, wj) in row.iter_mut().zip(&w) {
                *aij -= f * wj;
            }
        }
        // Right: all rows, columns k+1..n.
        a.data.par_chunks_mut(n).for_each(|row| {
            let tail = &mut row[k + 1..];
            let s: Complex64 = tail.iter().zip(&v).map(|(x, vi)| x * vi).sum();
            let f = 2.0 * s;
            for (x, vi) in tail.iter_mut().zip(&v) {
                *x -= f * vi.conj();
            }
        });
        for i in k + 2..n {
            a.set(i, k, Complex64::new(0.0, 0.0));
        }
        vs.push((k, v));
    }
    Reflectors { vs }
}

/// Complex Givens rotation `[c s; −s̄ c]` mapping `(x, y)` to `(r, 0)`.
#[inline]
fn givens(x: Complex64, y: Complex64) -> (f64, Complex64) {
    let ax = x.norm();
    let ay = y.norm();
    if ay == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if ax == 0.0 {
        return (0.0, y.conj() / ay);
    }
    let r = ax.hypot(ay);
    (ax / r, (x / ax) * y.conj() / r)
}

/// Eigenvalues of an upper Hessenberg matrix (destroyed).
fn hessenberg_qr(h: &mut CMatrix) -> Result<Vec<Complex64>> {
    let n = h.n;
    let ulp = f64::EPSILON;
    let smlnum = f64::MIN_POSITIVE * (n as f64 / ulp);
    let cap = SWEEPS_PER_DIMENSION * n.max(1);
    let mut eig = vec![Complex64::new(0.0, 0.0); n];
    let mut total = 0usize;
    let mut ihi = n as isize - 1;
    let idx = |i: usize, j: usize| i * n + j;
    while ihi >= 0 {
        let i = ihi as usize;
        let mut its = 0usize;
        loop {
            // Search for a negligible subdiagonal entry.
            let mut l = i;
            while l > 0 {
                let sub = h.data[idx(l, l - 1)];
                if cabs1(sub) <= smlnum {
                    break;
                }
                let mut tst = cabs1(h.data[idx(l - 1, l - 1)]) + cabs1(h.data[idx(l, l)]);
                if tst == 0.0 {
                    if l >= 2 {
                        tst += h.data[idx(l - 1, l - 2)].re.abs();
                    }
                    if l + 1 < n {
                        tst += h.data[idx(l + 1, l)].re.abs();
                    }
                }
                if sub.re.abs() <= ulp * tst {
                    let ab = cabs1(sub).max(cabs1(h.data[idx(l - 1, l)]));
                    let ba = cabs1(sub).min(cabs1(h.data[idx(l - 1, l)]));
                    let diff = h.data[idx(l - 1, l - 1)] - h.data[idx(l, l)];
                    let aa = cabs1(h.data[idx(l, l)]).max(cabs1(diff));
                    let bb = cabs1(h.data[idx(l, l)]).min(cabs1(diff));
                    let s = aa + ab;
                    if ba * (ab / s) <= smlnum.max(ulp * (bb * (aa / s))) {
                        break;
                    }
                }
                l -= 1;
            }
            if l > 0 {
                h.data[idx(l, l - 1)] = Complex64::new(0.0, 0.0);
            }
            if l == i {
                eig[i] = h.data[idx(i, i)];
                break;
            }
            total += 1;
            if total > cap {
                return Err(Error::NonConvergence(cap));
            }
            // Shift: exceptional every 10 iterations, otherwise Wilkinson.
            let shift = if its == 10 {
                Complex64::new(0.75 * h.data[idx(l + 1, l)].re.abs(), 0.0) + h.data[idx(l, l)]
            } else if its == 20 {
                Complex64::new(0.75 * h.data[idx(i, i - 1)].re.abs(), 0.0) + h.data[idx(i, i)]
            } else {
                let mut t = h.data[idx(i, i)];
                let u = h.data[idx(i - 1, i)].sqrt() * h.data[idx(i, i - 1)].sqrt();
                let s = cabs1(u);
                if s != 0.0 {
                    let x = 0.5 * (h.data[idx(i - 1, i - 1)] - t);
                    let sx = cabs1(x);
                    let s = s.max(sx);
                    let mut y = s * ((x / s) * (x / s) + (u / s) * (u / s)).sqrt();
                    if sx > 0.0 {
                        let xs = x / sx;
                        if xs.re * y.re + xs.im * y.im < 0.0 {
                            y = -y;
                        }
                    }
                    t -= u * (u / (x + y));
                }
                t
            };
            its += 1;
            if its > 30 {
                its = 0;
            }
            // Implicit single-shift sweep on the active block l..=i.
            for k in l..i {
                let (x, y) = if k == l {
                    (h.data[idx(l, l)] - shift, h.data[idx(l + 1, l)])
                } else {
                    (h.data[idx(k, k - 1)], h.data[idx(k + 1, k - 1)])
                };
                let (c, s) = givens(x, y);
                let j0 = if k == l { l } else { k - 1 };
                for j in j0..=i {
                    let a = h.data[idx(k, j)];
                    let b = h.data[idx(k + 1, j)];
                    h.data[idx(k, j)] = c * a + s * b;
                    h.data[idx(k + 1, j)] = -s.conj() * a + c * b;
                }
                if k > l {
                    h.data[idx(k + 1, k - 1)] = Complex64::new(0.0, 0.0);
                }
                let r_hi = (k + 2).min(i);
                for r in l..=r_hi {
                    let a = h.data[idx(r, k)];
                    let b = h.data[idx(r, k + 1)];
                    h.data[idx(r, k)] = c * a + s.conj() * b;
                    h.data[idx(r, k + 1)] = -s * a + c * b;
                }
            }
        }
        ihi -= 1;
    }
    Ok(eig)
}

/// Solves `(H − λI) y = b` for upper Hessenberg `H` by Gaussian elimination
/// with partial pivoting; exact singularity is regularised at roundoff level.
fn hessenberg_solve(h: &CMatrix, lambda: Complex64, b: &[Complex64]) -> Vec<Complex64> {
    let n = h.n;
    let tiny = f64::EPSILON * h.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut m = h.clone();
    for i in 0..n {
        let v = m.get(i, i) - lambda;
        m.set(i, i, v);
    }
    let mut y = b.to_vec();
    for k in 0..n.saturating_sub(1) {
        if m.get(k + 1, k).norm() > m.get(k, k).norm() {
            for j in k..n {
                m.data.swap(k * n + j, (k + 1) * n + j);
            }
            y.swap(k, k + 1);
        }
        let mut piv = m.get(k, k);
        if piv.norm() < tiny {
            piv = Complex64::new(tiny, 0.0);
            m.set(k, k, piv);
        }
        let f = m.get(k + 1, k) / piv;
        if f != Complex64::new(0.0, 0.0) {
            for j in k..n {
                let v = m.get(k + 1, j) - f * m.get(k, j);
                m.set(k + 1, j, v);
            }
            y[k + 1] = y[k + 1] - f * y[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = y[k];
        for j in k + 1..n {
            s -= m.get(k, j) * y[j];
        }
        let mut piv = m.get(k, k);
        if piv.norm() < tiny {
            piv = Complex64::new(tiny, 0.0);
        }
        y[k] = s / piv;
    }
    y
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// All eigenvalues of `a` with an inverse-iteration backward-error check on
/// [`BACKWARD_CHECKS`] randomly chosen eigenpairs.
///
/// Returns the eigenvalues (unsorted) and the largest relative residual
/// `‖Av − λv‖/(‖v‖·‖A‖_F)`.
pub fn eigensolve(a: &CMatrix) -> Result<(Vec<Complex64>, f64)> {
    let n = a.n;
    if n == 0 || n > MAX_DIMENSION {
        return Err(Error::InvalidInput(format!("dimension {n} outside 1..={MAX_DIMENSION}")));
    }
    if a.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let norm = a.frobenius_norm();
    let mut work = a.clone();
    let d = balance(&mut work);
    let reflectors = hessenberg(&mut work);
    let hess = work.clone();
    let eig = hessenberg_qr(&mut work)?;
    if norm == 0.0 {
        return Ok((eig, 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let picks = sample(&mut rng, n, BACKWARD_CHECKS.min(n)).into_vec();
    let worst = picks
        .par_iter()
        .map(|&p| {
            let lambda = eig[p];
            let mut start = ChaCha8Rng::seed_from_u64(SEED ^ p as u64);
            let mut y: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(start.gen_range(-1.0..1.0), start.gen_range(-1.0..1.0)))
                .collect();
            let mut best = f64::INFINITY;
            for _ in 0..INVERSE_ITERATIONS {
                y = hessenberg_solve(&hess, lambda, &y);
                let s = vec_norm(&y);
                for z in y.iter_mut() {
                    *z /= s;
                }
                let mut x = y.clone();
                reflectors.apply(&mut x);
                let v: Vec<Complex64> = x.iter().zip(&d).map(|(z, di)| z * di).collect();
                let av = a.mul_vec(&v);
                let r: Vec<Complex64> = av.iter().zip(&v).map(|(x, vi)| x - lambda * vi).collect();
                best = best.min(vec_norm(&r) / (vec_norm(&v) * norm));
                if best <= f64::EPSILON * n as f64 {
                    break;
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    if worst > BACKWARD_TOLERANCE {
        return Err(Error::Mismatch(format!(
            "inverse-iteration backward error {worst:e} exceeds {BACKWARD_TOLERANCE:e}"
        )));
    }
    Ok((eig, worst))
}

/// Discretizes and solves; all eigenvalues are marked unresolved.
pub fn spectrum(spec: &OperatorSpec) -> Result<Spectrum> {
    let a = discretize(spec);
    let (mut eigenvalues, backward_error) = eigensolve(&a)?;
    eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let resolved = vec![false; eigenvalues.len()];
    Ok(Spectrum {
        eigenvalues,
        resolved,
        meta: SpectrumMeta { n: spec.n, l: spec.l, h: spec.h, epsilon: spec.epsilon },
        backward_error,
    })
}

/// Retained/dropped counts of a resolution filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub retained: usize,
    pub dropped: usize,
}

/// Keeps the eigenvalues of `s1` that have a partner in `s2` within
/// `1e-6·(1+|λ|)` (one-to-one, closest pairs first); the result is marked
/// resolved.
pub fn spurious_filter(s1: &Spectrum, s2: &Spectrum) -> Result<(Spectrum, FilterReport)> {
    let (a, b) = (s1.meta, s2.meta);
    if a.l != b.l || a.h != b.h || a.epsilon != b.epsilon {
        return Err(Error::InvalidInput("spectra belong to different operators".into()));
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let mut order: Vec<usize> = (0..s2.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| s2.eigenvalues[i].re.total_cmp(&s2.eigenvalues[j].re));
    let sorted_re: Vec<f64> = order.iter().map(|&j| s2.eigenvalues[j].re).collect();
    for (i, z) in s1.eigenvalues.iter().enumerate() {
        let tol = MATCH_TOLERANCE * (1.0 + z.norm());
        let start = sorted_re.partition_point(|&r| r < z.re - tol);
        for (&j, &r) in order[start..].iter().zip(&sorted_re[start..]) {
            if r > z.re + tol {
                break;
            }
            let dist = (s2.eigenvalues[j] - z).norm();
            if dist <= tol {
                candidates.push((dist, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut used1 = vec![false; s1.eigenvalues.len()];
    let mut used2 = vec![false; s2.eigenvalues.len()];
    for (_, i, j) in candidates {
        if !used1[i] && !used2[j] {
            used1[i] = true;
            used2[j] = true;
        }
    }
    let eigenvalues: Vec<Complex64> =
        s1.eigenvalues.iter().zip(&used1).filter(|(_, &u)| u).map(|(z, _)| *z).collect();
    let retained = eigenvalues.len();
    let report = FilterReport { retained, dropped: s1.eigenvalues.len() - retained };
    Ok((
        Spectrum {
            resolved: vec![true; retained],
            eigenvalues,
            meta: s1.meta,
            backward_error: s1.backward_error.max(s2.backward_error),
        },
        report,
    ))
}

/// Solves at `N` and `N+Δ` (in parallel) and filters.
pub fn resolved_spectrum(spec: &OperatorSpec, delta: usize) -> Result<(Spectrum, FilterReport)> {
    let fine = spec.with_n(spec.n + delta)?;
    let (s1, s2) = rayon::join(|| spectrum(spec), || spectrum(&fine));
    spurious_filter(&s1?, &s2?)
}

/// Phase-space area `∫ 2·√(E − V)₊ dx` over `[−L, L]` (composite Simpson on
/// `2·10⁵` panels).
pub fn phase_space_area(v: &RPoly, l: f64, e: f64) -> f64 {
    let panels = 200_000usize;
    let dx = 2.0 * l / panels as f64;
    let f = |x: f64| 2.0 * (e - v.eval(x)).max(0.0).sqrt();
    let mut s = f(-l) + f(l);
    for k in 1..panels {
        let x = -l + k as f64 * dx;
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * dx / 3.0
}

/// Heuristic eigenvalue count with `Re λ ∈ [e_lo, e_hi]`: area/(2πh).
pub fn phase_space_count(v: &RPoly, l: f64, h: f64, e_lo: f64, e_hi: f64) -> f64 {
    (phase_space_area(v, l, e_hi) - phase_space_area(v, l, e_lo)) / (2.0 * std::f64::consts::PI * h)
}

/// One single-linkage cluster of imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImCluster {
    pub im_min: f64,
    pub im_max: f64,
    pub count: usize,
}

/// Single-linkage clustering of `values` with the given gap threshold.
pub fn cluster_values(values: &[f64], gap: f64) -> Vec<ImCluster> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out: Vec<ImCluster> = Vec::new();
    for x in v {
        match out.last_mut() {
            Some(c) if x - c.im_max <= gap => {
                c.im_max = x;
                c.count += 1;
            }
            _ => out.push(ImCluster { im_min: x, im_max: x, count: 1 }),
        }
    }
    out
}

/// Below/above-barrier structure of a (resolved) double-well spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    /// Resolved eigenvalues with `Re λ < 0`.
    pub below: Vec<Complex64>,
    /// Resolved eigenvalues with `Re λ ≥ 0`.
    pub above: Vec<Complex64>,
    /// Mutual-nearest-neighbour pairs among `below` and their distances.
    pub pairs: Vec<(Complex64, Complex64, f64)>,
    /// Below-barrier eigenvalues without a mutual nearest neighbour.
    pub unpaired: Vec<Complex64>,
    /// Below-barrier counts with `Im λ > 0` and `Im λ < 0`.
    pub im_positive: usize,
    pub im_negative: usize,
    /// Single-linkage clusters of `Im λ` (gap `ε/20`).
    pub below_clusters: Vec<ImCluster>,
    pub above_clusters: Vec<ImCluster>,
}

impl BranchReport {
    /// Largest pair distance (0 when there are no pairs).
    pub fn max_pair_gap(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).fold(0.0, f64::max)
    }

    /// Below-barrier eigenvalues and pairing restricted to `Re λ ∈ [lo, hi]`.
    pub fn below_in(&self, lo: f64, hi: f64) -> Vec<Complex64> {
        self.below.iter().copied().filter(|z| z.re >= lo && z.re <= hi).collect()
    }
}

/// Classifies the resolved eigenvalues of `s` for the double-well family.
pub fn branch_structure_report(s: &Spectrum, spec: &OperatorSpec) -> BranchReport {
    let resolved = s.resolved_eigenvalues();
    let (below, above): (Vec<Complex64>, Vec<Complex64>) = resolved.iter().partition(|z| z.re < 0.0);
    let nearest = |i: usize| -> Option<usize> {
        (0..below.len())
            .filter(|&j| j != i)
            .min_by(|&a, &b| (below[a] - below[i]).norm().total_cmp(&(below[b] - below[i]).norm()))
    };
    let nn: Vec<Option<usize>> = (0..below.len()).map(nearest).collect();
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for i in 0..below.len() {
        match nn[i] {
            Some(j) if nn[j] == Some(i) => {
                if i < j {
                    pairs.push((below[i], below[j], (below[i] - below[j]).norm()));
                }
            }
            _ => unpaired.push(below[i]),
        }
    }
    let gap = spec.epsilon / 20.0;
    let im = |v: &[Complex64]| v.iter().map(|z| z.im).collect::<Vec<f64>>();
    BranchReport {
        im_positive: below.iter().filter(|z| z.im > 0.0).count(),
        im_negative: below.iter().filter(|z| z.im < 0.0).count(),
        below_clusters: cluster_values(&im(&below), gap),
        above_clusters: cluster_values(&im(&above), gap),
        below,
        above,
        pairs,
        unpaired,
    }
}

/// Companion matrix of the monic polynomial `zⁿ + c_{n−1}zⁿ⁻¹ + … + c_0`.
pub fn companion(lower: &[Complex64]) -> CMatrix {
    let n = lower.len();
    CMatrix::from_fn(n, |i, j| {
        if i == 0 {
            -lower[n - 1 - j]
        } else if i == j + 1 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn givens_annihilates() {
        let x = Complex64::new(0.3, -1.2);
        let y = Complex64::new(-2.0, 0.7);
        let (c, s) = givens(x, y);
        let lower = -s.conj() * x + c * y;
        assert!(lower.norm() < 1e-15);
        assert!((c * c + s.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clusters_split_on_gaps() {
        let c = cluster_values(&[0.0, 0.01, 0.5, 0.52, 2.0], 0.05);
        assert_eq!(c.len(), 3);
        assert_eq!(c[1].count, 2);
    }
}
