//! Pinned values of the constants that the asymptotic statements leave
//! unnamed. Every tolerance that depends on such a constant reads it from
//! here, so a recalibration is a single, versioned edit.

/// Version of this calibration table; bump on any change below.
pub const CALIBRATION_VERSION: u32 = 1;

/// Sector constant `C`: the excluded cones have half-opening `1/C`.
pub const SECTOR_C: f64 = 8.0;

/// Slope constant of the Bohr–Sommerfeld sectors: `|Im μ| ≤ |Re μ|/C`.
/// Imaginary actions of size `ε` tilt the interior families by up to
/// `Im S/ln(1/|μ|)`, so this is looser than the Stirling sector.
pub const BS_SLOPE_C: f64 = 1.0;

/// Distance constant of the Bohr–Sommerfeld sectors: `|Re μ| ≥ C h`.
pub const BS_MIN_RE_C: f64 = 4.0;

/// Small-μ constant `C₁`: the small regimes apply for `|μ| ≤ C₁ h`.
pub const SMALL_C1: f64 = 10.0;

/// Constant in the band-localisation envelope for `|Im μ|`.
pub const BAND_ENVELOPE_C: f64 = 4.0;

/// Constant bounding `|Im S(μ)|/(ε + h²/ε)` at real μ for physical models.
pub const PHYSICAL_IM_ACTION_C: f64 = 10.0;

/// Constant in the skeleton proximity bound `C h / ln(1/|μ|)`.
pub const SKELETON_PROXIMITY_C: f64 = 2.0;

/// Constant in the exceptional-box eigenvalue count bound
/// `C (ε/h + h/ε) |ln(ε + h²/ε)|`.
pub const EXCEPTIONAL_COUNT_C: f64 = 4.0;
