//! Output assembly: every file is rendered in memory first and only written
//! once the whole command has succeeded, so a failing run leaves no partial
//! files behind.

use crate::config::SCHEMA_VERSION;
use crate::CliError;
use branchspec_core::calibration as cal;
use branchspec_core::Complex64;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

/// Calibration constants embedded in every JSON output.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Calibration {
    pub version: u32,
    pub sector_c: f64,
    pub bs_slope_c: f64,
    pub bs_min_re_c: f64,
    pub small_c1: f64,
    pub band_envelope_c: f64,
    pub physical_im_action_c: f64,
    pub skeleton_proximity_c: f64,
    pub exceptional_count_c: f64,
}

pub const CALIBRATION: Calibration = Calibration {
    version: cal::CALIBRATION_VERSION,
    sector_c: cal::SECTOR_C,
    bs_slope_c: cal::BS_SLOPE_C,
    bs_min_re_c: cal::BS_MIN_RE_C,
    small_c1: cal::SMALL_C1,
    band_envelope_c: cal::BAND_ENVELOPE_C,
    physical_im_action_c: cal::PHYSICAL_IM_ACTION_C,
    skeleton_proximity_c: cal::SKELETON_PROXIMITY_C,
    exceptional_count_c: cal::EXCEPTIONAL_COUNT_C,
};

/// JSON document wrapper: `{schema_version, calibration, command, ...body}`.
#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    schema_version: u32,
    calibration: Calibration,
    command: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Files produced by one command, in creation order.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn json<T: Serialize>(&mut self, name: &str, command: &str, body: &T) -> Result<(), CliError> {
        let doc = Document {
            schema_version: SCHEMA_VERSION,
            calibration: CALIBRATION,
            command,
            body,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Numerical(format!("{name}: {e}")))?;
        text.push('\n');
        self.files.push((name.into(), text.into_bytes()));
        Ok(())
    }

    /// CSV with the given header; `schema_version` and `calibration` columns
    /// are appended to every row.
    pub fn csv<R, I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let err = |e: csv::Error| CliError::Numerical(format!("{name}: {e}"));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header.iter().copied().chain(["schema_version", "calibration"]))
            .map_err(err)?;
        let tail = [SCHEMA_VERSION.to_string(), cal::CALIBRATION_VERSION.to_string()];
        for row in rows {
            w.write_record(row.into_iter().chain(tail.iter().cloned())).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Numerical(format!("{name}: {e}")))?;
        self.files.push((name.into(), bytes));
        Ok(())
    }

    pub fn svg(&mut self, name: &str, plot: &Plot) {
        self.files.push((name.into(), plot.render().into_bytes()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes all files into `dir` (created if needed).
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

/// Formats a float for CSV cells: shortest round-trip digits, in
/// scientific notation outside `[1e-4, 1e15)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// A standalone SVG with point series and polylines in the complex plane.
pub struct Plot {
    pub title: String,
    pub series: Vec<(String, &'static str, Vec<Complex64>)>,
    pub lines: Vec<(&'static str, Vec<Complex64>)>,
    /// Axis-aligned rectangles `(lo, hi, colour)` drawn as outlines.
    pub rects: Vec<(Complex64, Complex64, &'static str)>,
}

impl Plot {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            series: vec![],
            lines: vec![],
            rects: vec![],
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self
            .series
            .iter()
            .flat_map(|s| s.2.iter())
            .chain(self.lines.iter().flat_map(|l| l.1.iter()))
            .copied()
            .chain(self.rects.iter().flat_map(|r| [r.0, r.1]))
            .filter(|z| z.re.is_finite() && z.im.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for z in pts {
            x0 = x0.min(z.re);
            x1 = x1.max(z.re);
            y0 = y0.min(z.im);
            y1 = y1.max(z.im);
        }
        if !x0.is_finite() {
            return (-1.0, 1.0, -1.0, 1.0);
        }
        let pad = |a: f64, b: f64| {
            let w = (b - a).max(1e-12 * a.abs().max(b.abs()).max(1.0));
            (a - 0.05 * w, b + 0.05 * w)
        };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        (x0, x1, y0, y1)
    }

    pub fn render(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 480.0;
        const M: f64 = 50.0;
        let (x0, x1, y0, y1) = self.bounds();
        let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
        let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * M,
            H - 2.0 * M
        );
        if x0 < 0.0 && x1 > 0.0 {
            let _ = writeln!(s, r##"<line x1="{0:.2}" y1="{M}" x2="{0:.2}" y2="{1}" stroke="#bbb"/>"##, px(0.0), H - M);
        }
        if y0 < 0.0 && y1 > 0.0 {
            let _ = writeln!(s, r##"<line x1="{M}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="#bbb"/>"##, py(0.0), W - M);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="30" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<text x="{M}" y="{}" font-family="sans-serif" font-size="11">Re [{x0:.4e}, {x1:.4e}]   Im [{y0:.4e}, {y1:.4e}]</text>"#,
            H - 15.0
        );
        for (lo, hi, colour) in &self.rects {
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="{colour}" stroke-dasharray="4 2"/>"#,
                px(lo.re),
                py(hi.im),
                px(hi.re) - px(lo.re),
                py(lo.im) - py(hi.im)
            );
        }
        for (colour, line) in &self.lines {
            let pts: Vec<String> = line
                .iter()
                .filter(|z| z.re.is_finite() && z.im.is_finite())
                .map(|z| format!("{:.2},{:.2}", px(z.re), py(z.im)))
                .collect();
            if pts.len() >= 2 {
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.2"/>"#,
                    pts.join(" ")
                );
            }
        }
        for (k, (label, colour, points)) in self.series.iter().enumerate() {
            for z in points.iter().filter(|z| z.re.is_finite() && z.im.is_finite()) {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{colour}"/>"#, px(z.re), py(z.im));
            }
            let ly = M + 15.0 + 15.0 * k as f64;
            let _ = writeln!(s, r#"<circle cx="{}" cy="{ly}" r="3" fill="{colour}"/>"#, W - M - 110.0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{} ({})</text>"#,
                W - M - 100.0,
                ly + 4.0,
                escape(label),
                points.len()
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
