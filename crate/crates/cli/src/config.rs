//! JSON run configuration. Every block has defaults, so an absent config
//! file or an absent block runs the documented default pipeline; unknown
//! fields are rejected.

use crate::CliError;
use branchspec_core::flowavg::{rat, PhasePoly, ReducedFunction};
use branchspec_core::poly::{CPoly, RPoly};
use branchspec_core::quantization::{ActionModel, BsBranch, SemiclassicalParams};
use branchspec_core::schrodinger::OperatorSpec;
use branchspec_core::zerocount::Rect;
use branchspec_core::Complex64;
use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Version of the configuration and output schema.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub count: CountConfig,
    #[serde(default)]
    pub bs: BsConfig,
    #[serde(default)]
    pub average: AverageConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        match cfg.schema_version {
            None | Some(SCHEMA_VERSION) => Ok(cfg),
            Some(v) => Err(CliError::Config(format!(
                "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
            ))),
        }
    }
}

/// Chebyshev run of `(hD)² + V + iεW` on `[−L, L]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Coefficients of `V`, ascending.
    pub v: Vec<f64>,
    /// Coefficients of `W`, ascending.
    pub w: Vec<f64>,
    pub h: f64,
    pub epsilon: f64,
    pub l: f64,
    pub n: usize,
    /// Extra resolution of the comparison run.
    pub delta: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            v: vec![0.0, 0.0, -1.0, 0.0, 1.0],
            w: vec![0.0, 0.0, 1.0],
            h: 1e-3,
            epsilon: 0.8,
            l: 2.5,
            n: 800,
            delta: 80,
        }
    }
}

impl SpectrumConfig {
    pub fn operator(&self) -> Result<OperatorSpec, CliError> {
        if self.delta == 0 {
            return Err(CliError::Config("spectrum.delta must be positive".into()));
        }
        let spec = OperatorSpec::new(
            RPoly::new(self.v.clone()),
            RPoly::new(self.w.clone()),
            self.h,
            self.epsilon,
            self.l,
            self.n,
        )
        .map_err(|e| CliError::Config(format!("spectrum: {e}")))?;
        if self.n + self.delta > branchspec_core::schrodinger::MAX_DIMENSION {
            return Err(CliError::Config(format!(
                "spectrum: n + delta = {} exceeds {}",
                self.n + self.delta,
                branchspec_core::schrodinger::MAX_DIMENSION
            )));
        }
        Ok(spec)
    }
}

/// Rectangle `lo`–`hi` in the μ-plane, corners as `[re, im]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectConfig {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl RectConfig {
    pub fn rect(&self) -> Result<Rect, CliError> {
        let ok = self.lo.iter().chain(&self.hi).all(|v| v.is_finite())
            && self.lo[0] < self.hi[0]
            && self.lo[1] < self.hi[1];
        if !ok {
            return Err(CliError::Config(format!("rectangle {:?}–{:?} is empty or not finite", self.lo, self.hi)));
        }
        Ok(Rect::new(
            Complex64::new(self.lo[0], self.lo[1]),
            Complex64::new(self.hi[0], self.hi[1]),
        ))
    }
}

/// Action model, semiclassical parameters and the search rectangle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub h: f64,
    pub epsilon: f64,
    /// Coefficients of `S̃₁₂(μ)` as `[re, im]` pairs, ascending.
    pub s12: Vec<[f64; 2]>,
    /// Coefficients of `S̃₃₄(μ)` as `[re, im]` pairs, ascending.
    pub s34: Vec<[f64; 2]>,
    pub physical: bool,
    pub rect: RectConfig,
    /// Constant of the body around the skeleton.
    pub body_c: f64,
    /// Bohr–Sommerfeld indices tried, `k_min..=k_max`.
    pub k_min: i64,
    pub k_max: i64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            h: 0.002,
            epsilon: 0.002,
            s12: vec![[0.02, 0.0], [0.3, 0.0]],
            s34: vec![[-0.01, 0.0], [0.2, 0.0]],
            physical: true,
            rect: RectConfig {
                lo: [-0.1503, -0.0301],
                hi: [0.1511, 0.0307],
            },
            body_c: branchspec_core::skeleton::DEFAULT_BODY_C,
            k_min: -300,
            k_max: 300,
        }
    }
}

impl ModelConfig {
    pub fn params(&self) -> Result<SemiclassicalParams, CliError> {
        SemiclassicalParams::new(self.h, self.epsilon, false).map_err(|e| CliError::Config(format!("model: {e}")))
    }

    pub fn action_model(&self, p: &SemiclassicalParams) -> Result<ActionModel, CliError> {
        let poly = |c: &[[f64; 2]], name: &str| -> Result<CPoly, CliError> {
            if c.iter().flatten().any(|v| !v.is_finite()) {
                return Err(CliError::Config(format!("model.{name} has a non-finite coefficient")));
            }
            Ok(CPoly::new(c.iter().map(|&[re, im]| Complex64::new(re, im)).collect()))
        };
        let am = ActionModel {
            s12: poly(&self.s12, "s12")?,
            s34: poly(&self.s34, "s34")?,
            description: "configured action model".into(),
            physical: self.physical,
        };
        am.validate(p).map_err(|e| CliError::Config(format!("model: {e}")))?;
        if !self.body_c.is_finite() || self.body_c <= 0.0 {
            return Err(CliError::Config("model.body_c must be positive and finite".into()));
        }
        if self.k_min > self.k_max {
            return Err(CliError::Config("model.k_min exceeds model.k_max".into()));
        }
        Ok(am)
    }
}

/// Counting on the model's rectangle; `curve` also runs the phase sum along
/// its boundary.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountConfig {
    pub curve: bool,
}

/// Bohr–Sommerfeld families.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsConfig {
    pub branches: Vec<BsBranch>,
}

impl Default for BsConfig {
    fn default() -> Self {
        Self {
            branches: vec![BsBranch::Ext, BsBranch::LeftInt, BsBranch::RightInt],
        }
    }
}

/// One monomial `coeff · x₁^{x[0]} x₂^{x[1]} ξ₁^{xi[0]} ξ₂^{xi[1]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialConfig {
    pub x: [u32; 2],
    #[serde(default)]
    pub xi: [u32; 2],
    /// Rational coefficient such as `"3/2"`.
    pub coeff: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AverageConfig {
    pub polynomial: Vec<MonomialConfig>,
    /// Recompute the six closed-form correlations and compare.
    pub golden: bool,
}

impl Default for AverageConfig {
    fn default() -> Self {
        Self {
            polynomial: vec![
                MonomialConfig { x: [4, 0], xi: [0, 0], coeff: "1".into() },
                MonomialConfig { x: [0, 4], xi: [0, 0], coeff: "1".into() },
            ],
            golden: false,
        }
    }
}

pub fn parse_rational(s: &str, what: &str) -> Result<BigRational, CliError> {
    let t = s.trim();
    if let Ok(r) = t.parse::<BigRational>() {
        return Ok(r);
    }
    // Finite decimals such as "0.25".
    if let Some((int, frac)) = t.split_once('.') {
        let digits = format!("{int}{frac}");
        let plain = |s: &str| s.chars().all(|c| c.is_ascii_digit());
        if plain(frac) && plain(int.trim_start_matches('-')) {
            if let Ok(n) = digits.parse::<BigInt>() {
                let den = BigInt::from(10u32).pow(frac.len() as u32);
                return Ok(BigRational::new(n, den));
            }
        }
    }
    Err(CliError::Config(format!("{what}: cannot parse {s:?} as a rational number")))
}

impl AverageConfig {
    pub fn phase_poly(&self) -> Result<PhasePoly, CliError> {
        if self.polynomial.is_empty() {
            return Err(CliError::Config("average.polynomial is empty".into()));
        }
        let mut p = PhasePoly::default();
        for m in &self.polynomial {
            let c = parse_rational(&m.coeff, "average.polynomial")?;
            p = p.add(&PhasePoly::monomial([m.x[0], m.x[1], m.xi[0], m.xi[1]], c));
        }
        Ok(p)
    }
}

/// Region scan over a `(b, c)` grid at fixed `d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub d: String,
    pub n: usize,
    pub lo: String,
    pub hi: String,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            d: "5/2".into(),
            n: 200,
            lo: "-4".into(),
            hi: "4".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub a: String,
    pub b: String,
    pub c: String,
    /// When present, scan the `(b, c)` plane instead of a single point.
    pub scan: Option<ScanConfig>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            a: "-1".into(),
            b: "1".into(),
            c: "1/2".into(),
            scan: None,
        }
    }
}

impl ClassifyConfig {
    pub fn reduced(&self) -> Result<ReducedFunction, CliError> {
        Ok(ReducedFunction::new(
            parse_rational(&self.a, "classify.a")?,
            parse_rational(&self.b, "classify.b")?,
            parse_rational(&self.c, "classify.c")?,
        ))
    }
}

impl ScanConfig {
    /// Grid values `lo + (hi − lo)k/(n − 1)` and `d`.
    pub fn grid(&self) -> Result<(Vec<BigRational>, BigRational), CliError> {
        if self.n < 2 {
            return Err(CliError::Config("classify.scan.n must be at least 2".into()));
        }
        let lo = parse_rational(&self.lo, "classify.scan.lo")?;
        let hi = parse_rational(&self.hi, "classify.scan.hi")?;
        if lo >= hi {
            return Err(CliError::Config("classify.scan.lo must be below hi".into()));
        }
        let d = parse_rational(&self.d, "classify.scan.d")?;
        let step = (hi - lo.clone()) / rat(self.n as i64 - 1, 1);
        let values = (0..self.n).map(|k| lo.clone() + step.clone() * rat(k as i64, 1)).collect();
        Ok((values, d))
    }
}
