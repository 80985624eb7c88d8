//! The seven pipelines. Each returns its rendered outputs plus, under
//! `--check`, the results of its acceptance assertions.

use crate::config::{ModelConfig, RunConfig};
use crate::output::{num, Outputs, Plot};
use crate::{Check, CliError, Command};
use branchspec_core::calibration::{BS_MIN_RE_C, BS_SLOPE_C, EXCEPTIONAL_COUNT_C, SMALL_C1};
use branchspec_core::flowavg::{
    classify_critical_points, correlation_c, flow_average, grid_verify, oscillator, poisson, rat, rat_to_f64,
    to_action_angle, weighted_average_g0, BalancedLaurent, Coeff, LaurentTerm, PhasePoly, ReducedFunction, Region,
};
use branchspec_core::quantization::{
    bohr_sommerfeld_solve, bs_generating_function, exceptional_count_bound, term_set_unchecked, ActionModel,
    BsBranch, Regime, SemiclassicalParams,
};
use branchspec_core::schrodinger::{
    branch_structure_report, spectrum, spurious_filter, BranchReport, FilterReport, SpectrumMeta, BACKWARD_TOLERANCE,
};
use branchspec_core::skeleton::{assemble, Body, ExceptionalBox, Skeleton};
use branchspec_core::zerocount::{
    g_function, grid_newton_zeros, locate_zeros, match_points, phase_sum_count, winding_count, AdmissibleCurve,
    Contour, PhaseSum, Rect,
};
use branchspec_core::Complex64;
use num_complex::Complex;
use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Outputs, check results and text for standard output of one command.
pub struct Run {
    pub outputs: Outputs,
    pub checks: Vec<Check>,
    pub stdout: Option<String>,
}

impl Run {
    fn new(outputs: Outputs, checks: Vec<Check>) -> Self {
        Self {
            outputs,
            checks,
            stdout: None,
        }
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, check: bool, svg: bool) -> Result<Run, CliError> {
    match cmd {
        Command::Spectrum => cmd_spectrum(cfg, check, svg),
        Command::Model => cmd_model(cfg, check, svg),
        Command::Skeleton => cmd_skeleton(cfg, check, svg),
        Command::Count => cmd_count(cfg, check),
        Command::Bs => cmd_bs(cfg, check, svg),
        Command::Average => cmd_average(cfg, check),
        Command::Classify => cmd_classify(cfg, check, svg),
    }
}

fn pt(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

// ---- spectrum ----

#[derive(Serialize)]
struct SpectrumDoc<'a> {
    config: &'a crate::config::SpectrumConfig,
    meta: SpectrumMeta,
    fine_n: usize,
    backward_error: f64,
    filter: FilterReport,
    w_range: (f64, f64),
    branch_report: BranchReport,
}

fn cmd_spectrum(cfg: &RunConfig, check: bool, svg: bool) -> Result<Run, CliError> {
    let sc = &cfg.spectrum;
    let spec = sc.operator()?;
    let fine = spec.with_n(spec.n + sc.delta)?;
    let (coarse, fine_s) = rayon::join(|| spectrum(&spec), || spectrum(&fine));
    let (mut full, fine_s) = (coarse?, fine_s?);
    let (filtered, filter) = spurious_filter(&full, &fine_s)?;
    full.resolved = full.eigenvalues.iter().map(|z| filtered.eigenvalues.contains(z)).collect();
    full.backward_error = filtered.backward_error;
    let report = branch_structure_report(&full, &spec);
    let w_range = spec.w_range();

    let mut out = Outputs::default();
    out.csv(
        "spectrum.csv",
        &["re", "im", "resolved"],
        full.csv_rows().into_iter().map(|(re, im, r)| vec![num(re), num(im), r.to_string()]),
    )?;
    out.json(
        "spectrum.json",
        "spectrum",
        &SpectrumDoc {
            config: sc,
            meta: full.meta,
            fine_n: fine.n,
            backward_error: full.backward_error,
            filter,
            w_range,
            branch_report: report.clone(),
        },
    )?;
    if svg {
        let mut plot = Plot::new(format!("spectrum, h = {}, eps = {}, N = {}", sc.h, sc.epsilon, sc.n));
        let unresolved: Vec<Complex64> =
            full.eigenvalues.iter().zip(&full.resolved).filter(|(_, r)| !**r).map(|(z, _)| *z).collect();
        plot.series.push(("unresolved".into(), "#bbbbbb", unresolved));
        plot.series.push(("resolved".into(), "#1f4fbf", full.resolved_eigenvalues()));
        out.svg("spectrum.svg", &plot);
    }

    let mut checks = vec![];
    if check {
        checks.push(Check::new(
            "backward_error",
            full.backward_error <= BACKWARD_TOLERANCE,
            format!("{:.2e} (bound {BACKWARD_TOLERANCE:e})", full.backward_error),
        ));
        let resolved = full.resolved_eigenvalues();
        let (lo, hi) = (sc.epsilon * w_range.0 - 1e-6, sc.epsilon * w_range.1 + 1e-6);
        let outside = resolved.iter().filter(|z| z.im < lo || z.im > hi).count();
        checks.push(Check::new(
            "imaginary_parts_in_eps_w_range",
            !resolved.is_empty() && outside == 0,
            format!("{} resolved, {outside} with Im outside [{lo:.3e}, {hi:.3e}]", resolved.len()),
        ));
    }
    Ok(Run::new(out, checks))
}

// ---- model, skeleton, count, bs ----

struct ModelSetup {
    p: SemiclassicalParams,
    am: ActionModel,
    rect: Rect,
}

fn model_setup(mc: &ModelConfig) -> Result<ModelSetup, CliError> {
    let p = mc.params()?;
    let am = mc.action_model(&p)?;
    let rect = mc.rect.rect()?;
    Ok(ModelSetup { p, am, rect })
}

/// Inside the truncated sector where the Bohr–Sommerfeld rules apply.
fn in_bs_sectors(mu: Complex64, h: f64) -> bool {
    mu.re.abs() >= BS_MIN_RE_C * h && mu.im.abs() <= mu.re.abs() / BS_SLOPE_C
}

/// Admitted distance between a zero and the Bohr–Sommerfeld root at `mu`:
/// `10h/ln(1/|μ|)·e^{−π|Re μ|/h}` plus a roundoff floor.
fn match_rate(mu: Complex64, h: f64) -> f64 {
    let log = (1.0 / mu.norm()).ln().max(std::f64::consts::LN_2);
    10.0 * h / log * (-PI * mu.re.abs() / h).exp() + 64.0 * f64::EPSILON * mu.norm()
}

#[derive(Debug, Clone, Copy, Serialize)]
struct BsRoot {
    branch: BsBranch,
    k: i64,
    mu: [f64; 2],
    residual: f64,
}

fn branch_name(b: BsBranch) -> &'static str {
    match b {
        BsBranch::Ext => "ext",
        BsBranch::LeftInt => "left_int",
        BsBranch::RightInt => "right_int",
    }
}

/// Successful solves of every branch over `k_min..=k_max`, with the number
/// of indices without a root in the branch sector.
fn bs_roots(
    branches: &[BsBranch],
    mc: &ModelConfig,
    p: &SemiclassicalParams,
    am: &ActionModel,
) -> (Vec<BsRoot>, Vec<(BsBranch, usize)>) {
    let mut roots = vec![];
    let mut misses = vec![];
    for &branch in branches {
        let found: Vec<Option<BsRoot>> = (mc.k_min..=mc.k_max)
            .into_par_iter()
            .map(|k| {
                bohr_sommerfeld_solve(branch, k, p, am).ok().map(|mu| {
                    let target = 2.0 * PI * (k as f64 + 0.5) * p.h;
                    BsRoot {
                        branch,
                        k,
                        mu: pt(mu),
                        residual: (bs_generating_function(branch, mu, p, am) - target).norm(),
                    }
                })
            })
            .collect();
        misses.push((branch, found.iter().filter(|r| r.is_none()).count()));
        roots.extend(found.into_iter().flatten());
    }
    (roots, misses)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum ZeroClass {
    Matched,
    ExceptionalBox,
    OutsideBsSectors,
    Unmatched,
}

impl ZeroClass {
    fn name(self) -> &'static str {
        match self {
            ZeroClass::Matched => "matched",
            ZeroClass::ExceptionalBox => "exceptional_box",
            ZeroClass::OutsideBsSectors => "outside_bs_sectors",
            ZeroClass::Unmatched => "unmatched",
        }
    }
}

#[derive(Serialize)]
struct ClassCounts {
    matched: usize,
    exceptional_box: usize,
    outside_bs_sectors: usize,
    unmatched: usize,
}

#[derive(Serialize)]
struct ModelDoc<'a> {
    config: &'a ModelConfig,
    params: SemiclassicalParams,
    skeleton_case: String,
    exceptional_box: ExceptionalBox,
    zeros: usize,
    classes: ClassCounts,
    census_box: ExceptionalBox,
    box_census: usize,
    box_bound: f64,
    predicted_in_rect: usize,
    unmatched_predicted: Vec<[f64; 2]>,
    unmatched_zeros: Vec<[f64; 2]>,
    worst_distance_ratio: f64,
}

fn cmd_model(cfg: &RunConfig, check: bool, svg: bool) -> Result<Run, CliError> {
    let mc = &cfg.model;
    let ModelSetup { p, am, rect } = model_setup(mc)?;
    let h = p.h;
    let (skeleton, body) = assemble(&p, &am, mc.body_c)?;
    let g = g_function(&p, &am);
    let zeros = locate_zeros(&g, rect, h)?;
    let (roots, _) = bs_roots(&[BsBranch::Ext, BsBranch::LeftInt, BsBranch::RightInt], mc, &p, &am);
    let predicted: Vec<(Complex64, &BsRoot)> = roots
        .iter()
        .map(|r| (Complex64::new(r.mu[0], r.mu[1]), r))
        .filter(|(z, _)| rect.contains(*z) && !body.exceptional_box.contains(*z))
        .collect();
    let pred_pts: Vec<Complex64> = predicted.iter().map(|(z, _)| *z).collect();

    let boxed = body.exceptional_box;
    let mut class: Vec<ZeroClass> = zeros
        .zeros
        .iter()
        .map(|z| {
            if boxed.contains(z.location) {
                ZeroClass::ExceptionalBox
            } else if !in_bs_sectors(z.location, h) {
                ZeroClass::OutsideBsSectors
            } else {
                ZeroClass::Unmatched
            }
        })
        .collect();
    let candidates: Vec<usize> = (0..class.len()).filter(|&i| class[i] == ZeroClass::Unmatched).collect();
    let cand_pts: Vec<Complex64> = candidates.iter().map(|&i| zeros.zeros[i].location).collect();
    let report = match_points(&cand_pts, &pred_pts, |mu| match_rate(mu, h));
    let mut partner: Vec<Option<Complex64>> = vec![None; class.len()];
    for pair in &report.pairs {
        let i = candidates[cand_pts.iter().position(|&z| z == pair.found).expect("matched point is a candidate")];
        class[i] = ZeroClass::Matched;
        partner[i] = Some(pair.predicted);
    }
    let count = |c: ZeroClass| class.iter().filter(|&&k| k == c).count();
    let counts = ClassCounts {
        matched: count(ZeroClass::Matched),
        exceptional_box: count(ZeroClass::ExceptionalBox),
        outside_bs_sectors: count(ZeroClass::OutsideBsSectors),
        unmatched: count(ZeroClass::Unmatched),
    };
    // The census box and the count bound share the calibrated constant.
    let census_box = ExceptionalBox::new(&p, EXCEPTIONAL_COUNT_C);
    let bound = exceptional_count_bound(&p);
    let census = zeros.zeros.iter().filter(|z| census_box.contains(z.location)).count();

    let mut out = Outputs::default();
    let root_of = |z: Complex64| predicted.iter().find(|(q, _)| *q == z).map(|(_, r)| **r);
    out.csv(
        "model_zeros.csv",
        &["re", "im", "residual", "class", "bs_branch", "bs_k", "bs_re", "bs_im"],
        zeros.zeros.iter().enumerate().map(|(i, z)| {
            let mut row = vec![num(z.location.re), num(z.location.im), num(z.residual), class[i].name().to_string()];
            match partner[i].and_then(root_of) {
                Some(r) => row.extend([branch_name(r.branch).into(), r.k.to_string(), num(r.mu[0]), num(r.mu[1])]),
                None => row.extend([String::new(), String::new(), String::new(), String::new()]),
            }
            row
        }),
    )?;
    out.json(
        "model.json",
        "model",
        &ModelDoc {
            config: mc,
            params: p,
            skeleton_case: format!("{:?}", skeleton.case),
            exceptional_box: boxed,
            zeros: zeros.zeros.len(),
            classes: counts,
            census_box,
            box_census: census,
            box_bound: bound,
            predicted_in_rect: pred_pts.len(),
            unmatched_predicted: report.unmatched_predicted.iter().map(|&z| pt(z)).collect(),
            unmatched_zeros: zeros
                .zeros
                .iter()
                .zip(&class)
                .filter(|(_, &c)| c == ZeroClass::Unmatched)
                .map(|(z, _)| pt(z.location))
                .collect(),
            worst_distance_ratio: report.worst_ratio(),
        },
    )?;
    if svg {
        let mut plot = Plot::new(format!("zeros of G, h = {h}, eps = {}", p.epsilon));
        plot.rects.push((rect.lo, rect.hi, "#888888"));
        plot.rects.push((Complex64::new(-boxed.a, -boxed.b), Complex64::new(boxed.a, boxed.b), "#c03030"));
        add_skeleton_lines(&mut plot, &skeleton, rect);
        plot.series.push(("Bohr-Sommerfeld".into(), "#bbbbbb", pred_pts.clone()));
        for (c, colour) in [
            (ZeroClass::Matched, "#1f4fbf"),
            (ZeroClass::ExceptionalBox, "#c03030"),
            (ZeroClass::OutsideBsSectors, "#2a9d4a"),
            (ZeroClass::Unmatched, "#000000"),
        ] {
            let pts = zeros.zeros.iter().zip(&class).filter(|(_, &k)| k == c).map(|(z, _)| z.location).collect();
            plot.series.push((c.name().into(), colour, pts));
        }
        out.svg("model.svg", &plot);
    }

    let mut checks = vec![];
    if check {
        checks.push(Check::new(
            "no_unmatched_zeros_outside_box",
            counts_unmatched(&class) == 0,
            format!("{} unmatched of {} zeros", counts_unmatched(&class), class.len()),
        ));
        checks.push(Check::new(
            "box_census",
            (census as f64) <= bound,
            format!("{census} zeros in the census box (bound {bound:.1})"),
        ));
    }
    Ok(Run::new(out, checks))
}

fn counts_unmatched(class: &[ZeroClass]) -> usize {
    class.iter().filter(|&&c| c == ZeroClass::Unmatched).count()
}

/// Skeleton polylines clipped to a margin around `rect`.
fn add_skeleton_lines(plot: &mut Plot, skeleton: &Skeleton, rect: Rect) {
    let (w, hgt) = (rect.hi.re - rect.lo.re, rect.hi.im - rect.lo.im);
    let inside = |z: &Complex64| {
        z.re >= rect.lo.re - 0.1 * w && z.re <= rect.hi.re + 0.1 * w && z.im >= rect.lo.im - 0.1 * hgt && z.im <= rect.hi.im + 0.1 * hgt
    };
    for line in skeleton.polylines() {
        let mut run: Vec<Complex64> = vec![];
        for z in line {
            if inside(&z) {
                run.push(z);
            } else if !run.is_empty() {
                plot.lines.push(("#e08a1e", std::mem::take(&mut run)));
            }
        }
        if !run.is_empty() {
            plot.lines.push(("#e08a1e", run));
        }
    }
}

#[derive(Serialize)]
struct SkeletonDoc<'a> {
    config: &'a ModelConfig,
    body_constant: f64,
    be_cutoff: f64,
    exceptional_box: ExceptionalBox,
    skeleton: &'a Skeleton,
}

fn cmd_skeleton(cfg: &RunConfig, check: bool, svg: bool) -> Result<Run, CliError> {
    let mc = &cfg.model;
    let ModelSetup { p, am, rect } = model_setup(mc)?;
    let (skeleton, body): (Skeleton, Body) = assemble(&p, &am, mc.body_c)?;
    let mut out = Outputs::default();
    out.csv(
        "skeleton.csv",
        &["curve", "x", "y", "regime"],
        skeleton.csv_rows().into_iter().map(|(l, x, y, r)| vec![l, num(x), num(y), r]),
    )?;
    out.json(
        "skeleton.json",
        "skeleton",
        &SkeletonDoc {
            config: mc,
            body_constant: body.constant,
            be_cutoff: body.be_cutoff,
            exceptional_box: body.exceptional_box,
            skeleton: &skeleton,
        },
    )?;
    let zeros = if check || svg {
        Some(locate_zeros(&g_function(&p, &am), rect, p.h)?)
    } else {
        None
    };
    if svg {
        let mut plot = Plot::new(format!("skeleton, h = {}, eps = {}", p.h, p.epsilon));
        add_skeleton_lines(&mut plot, &skeleton, rect);
        if let Some(zs) = &zeros {
            plot.series.push(("zeros of G".into(), "#1f4fbf", zs.locations()));
        }
        out.svg("skeleton.svg", &plot);
    }
    let mut checks = vec![];
    if let (true, Some(zs)) = (check, &zeros) {
        let outside: Vec<Complex64> = zs.locations().into_iter().filter(|&z| !body.contains_with_box(z)).collect();
        checks.push(Check::new(
            "zeros_in_body",
            outside.is_empty(),
            format!("{} of {} zeros outside the body", outside.len(), zs.zeros.len()),
        ));
    }
    Ok(Run::new(out, checks))
}

#[derive(Serialize)]
struct CountDoc {
    rect: Rect,
    vertices: Vec<[f64; 2]>,
    perimeter: f64,
    max_step: f64,
    shift: f64,
    count: i64,
    grid_newton: Option<usize>,
    curve: Option<PhaseSum>,
    curve_bound: Option<f64>,
}

fn case1_regime(mu: Complex64, h: f64) -> Regime {
    if mu.norm() <= SMALL_C1 * h {
        Regime::Case1Small
    } else {
        Regime::Case1Large
    }
}

fn cmd_count(cfg: &RunConfig, check: bool) -> Result<Run, CliError> {
    let mc = &cfg.model;
    let ModelSetup { p, am, rect } = model_setup(mc)?;
    let h = p.h;
    let g = g_function(&p, &am);
    let contour = Contour::rectangle(rect.lo, rect.hi)?;
    let (max_step, shift) = (h / 20.0, h / 100.0);
    let count = winding_count(&g, &contour, max_step, shift)?;
    let (curve, curve_bound) = if cfg.count.curve {
        let body = assemble(&p, &am, mc.body_c).map(|(_, b)| b).ok();
        let provider = |mu: Complex64| term_set_unchecked(mu, h, &am, case1_regime(mu, h));
        let (lo, hi) = (rect.lo, rect.hi);
        let path = vec![lo, Complex64::new(hi.re, lo.im), hi, Complex64::new(lo.re, hi.im), lo];
        let cv = AdmissibleCurve::auto_partition(path, &provider, h / 100.0, body.as_ref())?;
        let ps = phase_sum_count(&cv, &provider, h)?;
        // Curves passing within h of the imaginary axis pick up the larger
        // ln ln(1/h) error.
        let near_axis = lo.re < h && hi.re > -h;
        let bound = if near_axis { 5.0 * (1.0 / h).ln().ln().max(1.0) } else { 5.0 };
        (Some(ps), Some(bound))
    } else {
        (None, None)
    };
    let grid = check.then(|| grid_newton_zeros(&g, rect, h, 100).zeros.len());

    let mut out = Outputs::default();
    out.json(
        "count.json",
        "count",
        &CountDoc {
            rect,
            vertices: contour_vertices(rect),
            perimeter: contour.perimeter(),
            max_step,
            shift,
            count,
            grid_newton: grid,
            curve,
            curve_bound,
        },
    )?;
    let mut stdout = format!("{count}\n");
    if let Some(ps) = curve {
        stdout.push_str(&format!(
            "phase-sum estimate {:.4}, direct {:.4}, discrepancy from count {:.4}\n",
            ps.estimate,
            ps.direct,
            (ps.estimate - count as f64).abs()
        ));
    }
    let mut checks = vec![];
    if let Some(n) = grid {
        checks.push(Check::new(
            "winding_equals_grid_newton",
            n as i64 == count,
            format!("winding {count}, grid-Newton {n}"),
        ));
    }
    if let (true, Some(ps), Some(b)) = (check, curve, curve_bound) {
        let d = (ps.estimate - count as f64).abs();
        checks.push(Check::new(
            "phase_sum",
            d <= b && (ps.direct - count as f64).abs() <= 1e-6,
            format!("|estimate − count| {d:.3} (bound {b:.2}), direct {:.6}", ps.direct),
        ));
    }
    let mut run = Run::new(out, checks);
    run.stdout = Some(stdout);
    Ok(run)
}

fn contour_vertices(rect: Rect) -> Vec<[f64; 2]> {
    let (lo, hi) = (rect.lo, rect.hi);
    vec![[lo.re, lo.im], [hi.re, lo.im], [hi.re, hi.im], [lo.re, hi.im]]
}

#[derive(Serialize)]
struct BsDoc {
    params: SemiclassicalParams,
    k_min: i64,
    k_max: i64,
    branches: Vec<BsBranchSummary>,
    max_residual: f64,
}

#[derive(Serialize)]
struct BsBranchSummary {
    branch: &'static str,
    roots: usize,
    indices_without_root: usize,
}

fn cmd_bs(cfg: &RunConfig, check: bool, svg: bool) -> Result<Run, CliError> {
    let mc = &cfg.model;
    let p = mc.params()?;
    let am = mc.action_model(&p)?;
    if cfg.bs.branches.is_empty() {
        return Err(CliError::Config("bs.branches is empty".into()));
    }
    let (roots, misses) = bs_roots(&cfg.bs.branches, mc, &p, &am);
    let max_residual = roots.iter().map(|r| r.residual).fold(0.0, f64::max);

    let mut out = Outputs::default();
    out.csv(
        "bs.csv",
        &["branch", "k", "re", "im", "residual"],
        roots
            .iter()
            .map(|r| vec![branch_name(r.branch).into(), r.k.to_string(), num(r.mu[0]), num(r.mu[1]), num(r.residual)]),
    )?;
    out.json(
        "bs.json",
        "bs",
        &BsDoc {
            params: p,
            k_min: mc.k_min,
            k_max: mc.k_max,
            branches: misses
                .iter()
                .map(|&(b, miss)| BsBranchSummary {
                    branch: branch_name(b),
                    roots: roots.iter().filter(|r| r.branch == b).count(),
                    indices_without_root: miss,
                })
                .collect(),
            max_residual,
        },
    )?;
    if svg {
        let mut plot = Plot::new(format!("Bohr-Sommerfeld roots, h = {}", p.h));
        for (b, colour) in [(BsBranch::Ext, "#c03030"), (BsBranch::LeftInt, "#1f4fbf"), (BsBranch::RightInt, "#2a9d4a")] {
            let pts: Vec<Complex64> =
                roots.iter().filter(|r| r.branch == b).map(|r| Complex64::new(r.mu[0], r.mu[1])).collect();
            if !pts.is_empty() {
                plot.series.push((branch_name(b).into(), colour, pts));
            }
        }
        out.svg("bs.svg", &plot);
    }

    let mut checks = vec![];
    if check {
        checks.push(Check::new(
            "generating_function_residual",
            !roots.is_empty() && max_residual <= 1e-10,
            format!("{} roots, max residual {max_residual:.2e} (bound 1e-10)", roots.len()),
        ));
        let mut bad = vec![];
        for b in [BsBranch::LeftInt, BsBranch::RightInt] {
            let fam: Vec<&BsRoot> = roots.iter().filter(|r| r.branch == b).collect();
            for w in fam.windows(2) {
                if w[1].k == w[0].k + 1 && w[1].mu[0] >= w[0].mu[0] {
                    bad.push(format!("{} k = {}", branch_name(b), w[1].k));
                }
            }
        }
        checks.push(Check::new(
            "interior_roots_move_left",
            bad.is_empty(),
            if bad.is_empty() { "Re μ decreases with k on both interior branches".into() } else { bad.join(", ") },
        ));
    }
    Ok(Run::new(out, checks))
}

// ---- average ----

#[derive(Serialize)]
struct ActionAngleTerm {
    rho1_half_power: u32,
    rho2_half_power: u32,
    k: u32,
    trig: &'static str,
    re: [String; 2],
    im: [String; 2],
}

fn ratio_pair(r: &BigRational) -> [String; 2] {
    [r.numer().to_string(), r.denom().to_string()]
}

#[derive(Serialize)]
struct AverageDoc<'a> {
    polynomial: &'a [crate::config::MonomialConfig],
    laurent: Vec<LaurentTerm>,
    average: Vec<LaurentTerm>,
    g0: Vec<LaurentTerm>,
    action_angle: Vec<ActionAngleTerm>,
    self_correlation: Vec<LaurentTerm>,
}

#[derive(Serialize)]
struct GoldenEntry {
    pair: &'static str,
    matches_reference: bool,
    computed: Vec<LaurentTerm>,
    reference: Vec<LaurentTerm>,
}

fn cq(n: i64, d: i64) -> Coeff {
    Complex::new(rat(n, d), rat(0, 1))
}

fn x_poly(a1: u32, a2: u32) -> BalancedLaurent {
    PhasePoly::x_monomial(a1, a2, rat(1, 1)).to_laurent()
}

/// `z₁^{a₁} z₂^{a₂} z̄₁^{b₁} z̄₂^{b₂} + c.c.`
fn re_pair(e: [i32; 4]) -> BalancedLaurent {
    BalancedLaurent::monomial([e[0], e[1]], [e[2], e[3]], cq(1, 1))
        .add(&BalancedLaurent::monomial([e[2], e[3]], [e[0], e[1]], cq(1, 1)))
}

/// The six correlations of the quartic basis and their reference closed forms.
fn golden_pairs() -> Vec<(&'static str, BalancedLaurent, BalancedLaurent)> {
    let a1 = BalancedLaurent::abs2(0);
    let a2 = BalancedLaurent::abs2(1);
    let z2 = a1.add(&a2);
    let a12 = a1.mul(&a2);
    let q4 = x_poly(4, 0).add(&x_poly(0, 4));
    let q22 = x_poly(2, 2);
    let q31 = x_poly(3, 1).add(&x_poly(1, 3));
    let sq = re_pair([2, 0, 0, 2]);
    let re1 = re_pair([1, 0, 0, 1]);
    let cube = re_pair([3, 0, 0, 3]);
    let quartic_abs = a1.pow(2).add(&a2.pow(2));
    let sixth = a1.pow(3).add(&a2.pow(3));
    let s = |n: i64| cq(n, 1);
    vec![
        ("C(x1^4+x2^4, x1^4+x2^4)", correlation_c(&q4, &q4), sixth.scale(&cq(-17, 16))),
        (
            "C(x1^4+x2^4, x1^2 x2^2)",
            correlation_c(&q4, &q22),
            z2.mul(&sq).scale(&s(3)).add(&a12.scale(&s(16))).scale(&cq(-3, 64)),
        ),
        (
            "C(x1^4+x2^4, x1^3 x2+x1 x2^3)",
            correlation_c(&q4, &q31),
            cube.scale(&s(2)).sub(&quartic_abs.scale(&s(51)).add(&a12.scale(&s(36))).mul(&re1)).scale(&cq(1, 128)),
        ),
        (
            "C(x1^2 x2^2, x1^2 x2^2)",
            correlation_c(&q22, &q22),
            z2.mul(&a12.scale(&s(9)).add(&sq.scale(&s(8)))).scale(&cq(-1, 64)),
        ),
        (
            "C(x1^2 x2^2, x1^3 x2+x1 x2^3)",
            correlation_c(&q22, &q31),
            quartic_abs.scale(&s(17)).add(&a12.scale(&s(90))).mul(&re1).add(&cube.scale(&s(12))).scale(&cq(-1, 256)),
        ),
        (
            "C(x1^3 x2+x1 x2^3, x1^3 x2+x1 x2^3)",
            correlation_c(&q31, &q31),
            sixth
                .scale(&s(17))
                .add(&a12.mul(&z2).scale(&s(153)))
                .add(&z2.mul(&sq).scale(&s(51)))
                .scale(&cq(-1, 256)),
        ),
    ]
}

fn cmd_average(cfg: &RunConfig, check: bool) -> Result<Run, CliError> {
    let ac = &cfg.average;
    let q = ac.phase_poly()?.to_laurent();
    let avg = flow_average(&q);
    let g0 = weighted_average_g0(&q);
    let aa = to_action_angle(&avg)?;
    let action_angle = aa
        .terms
        .iter()
        .map(|(&(p1, p2, k, trig), c)| ActionAngleTerm {
            rho1_half_power: p1,
            rho2_half_power: p2,
            k,
            trig: match trig {
                branchspec_core::flowavg::Trig::Cos => "cos",
                branchspec_core::flowavg::Trig::Sin => "sin",
            },
            re: ratio_pair(&c.re),
            im: ratio_pair(&c.im),
        })
        .collect();
    let mut out = Outputs::default();
    out.json(
        "average.json",
        "average",
        &AverageDoc {
            polynomial: &ac.polynomial,
            laurent: q.export(),
            average: avg.export(),
            g0: g0.export(),
            action_angle,
            self_correlation: correlation_c(&q, &q).export(),
        },
    )?;
    let golden = ac.golden.then(golden_pairs);
    if let Some(pairs) = &golden {
        let entries: Vec<GoldenEntry> = pairs
            .iter()
            .map(|(name, computed, reference)| GoldenEntry {
                pair: name,
                matches_reference: computed == reference,
                computed: computed.export(),
                reference: reference.export(),
            })
            .collect();
        #[derive(Serialize)]
        struct GoldenDoc {
            entries: Vec<GoldenEntry>,
        }
        out.json("golden.json", "average", &GoldenDoc { entries })?;
    }

    let mut checks = vec![];
    if check {
        let lhs = poisson(&oscillator(), &g0);
        let rhs = q.sub(&avg);
        checks.push(Check::new(
            "homological_equation",
            lhs == rhs,
            "{p, G0(q)} = q - <q> as an exact rational identity",
        ));
        if let Some(pairs) = &golden {
            for (name, computed, reference) in pairs {
                checks.push(Check::new(
                    &format!("golden {name}"),
                    computed == reference,
                    if computed == reference { "exact match" } else { "differs from the reference closed form" },
                ));
            }
        }
    }
    Ok(Run::new(out, checks))
}

// ---- classify ----

#[derive(Serialize)]
struct ClassifyDoc<'a> {
    a: &'a str,
    b: &'a str,
    c: &'a str,
    d: [String; 2],
    report: &'a branchspec_core::flowavg::CriticalPointReport,
    saddles: usize,
    verification: Option<VerificationSummary>,
}

#[derive(Serialize)]
struct VerificationSummary {
    numerical_points: usize,
    max_location_error: f64,
    max_value_error: f64,
}

/// Saddles per region of the symmetric quartic family.
fn expected_saddles(r: Region) -> usize {
    match r {
        Region::A | Region::D | Region::F => 2,
        Region::Bplus | Region::Bminus | Region::Eplus | Region::Eminus => 1,
        Region::Cplus | Region::Cminus => 0,
    }
}

const ALL_REGIONS: [Region; 9] = [
    Region::A,
    Region::Bplus,
    Region::Bminus,
    Region::Cplus,
    Region::Cminus,
    Region::D,
    Region::Eplus,
    Region::Eminus,
    Region::F,
];

fn cmd_classify(cfg: &RunConfig, check: bool, svg: bool) -> Result<Run, CliError> {
    let cc = &cfg.classify;
    match &cc.scan {
        None => classify_single(cc, check),
        Some(scan) => classify_scan(scan, check, svg),
    }
}

fn classify_single(cc: &crate::config::ClassifyConfig, check: bool) -> Result<Run, CliError> {
    let rf = cc.reduced()?;
    let report = classify_critical_points(&rf)?;
    let mut checks = vec![];
    let verification = if check {
        match grid_verify(&rf, &report) {
            Ok(v) => {
                checks.push(Check::new(
                    "grid_verify",
                    true,
                    format!("{} numerical critical points match the table", v.found.len()),
                ));
                Some(VerificationSummary {
                    numerical_points: v.found.len(),
                    max_location_error: v.max_location_error,
                    max_value_error: v.max_value_error,
                })
            }
            Err(e) => {
                checks.push(Check::new("grid_verify", false, e.to_string()));
                None
            }
        }
    } else {
        None
    };
    let mut out = Outputs::default();
    out.json(
        "classify.json",
        "classify",
        &ClassifyDoc {
            a: &cc.a,
            b: &cc.b,
            c: &cc.c,
            d: ratio_pair(&rf.d()),
            report: &report,
            saddles: report.saddles().len(),
            verification,
        },
    )?;
    Ok(Run::new(out, checks))
}

struct ScanRow {
    b: f64,
    c: f64,
    outcome: Result<(Region, bool, usize, usize), String>,
}

fn classify_scan(scan: &crate::config::ScanConfig, check: bool, svg: bool) -> Result<Run, CliError> {
    let (values, d) = scan.grid()?;
    let cells: Vec<(usize, usize)> = (0..values.len()).flat_map(|i| (0..values.len()).map(move |j| (i, j))).collect();
    let rows: Vec<ScanRow> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (b, c) = (&values[i], &values[j]);
            let rf = ReducedFunction::with_d(b.clone(), c.clone(), d.clone());
            let outcome = classify_critical_points(&rf)
                .map(|r| (r.region, r.negated, r.saddles().len(), r.points.len()))
                .map_err(|e| e.to_string());
            ScanRow {
                b: rat_to_f64(b),
                c: rat_to_f64(c),
                outcome,
            }
        })
        .collect();

    let mut out = Outputs::default();
    out.csv(
        "classify_scan.csv",
        &["b", "c", "region", "negated", "saddles", "critical_points"],
        rows.iter().map(|r| match &r.outcome {
            Ok((region, neg, s, n)) => {
                vec![num(r.b), num(r.c), format!("{region:?}"), neg.to_string(), s.to_string(), n.to_string()]
            }
            Err(_) => vec![num(r.b), num(r.c), "boundary".into(), String::new(), String::new(), String::new()],
        }),
    )?;
    #[derive(Serialize)]
    struct ScanDoc<'a> {
        scan: &'a crate::config::ScanConfig,
        cells: usize,
        boundary_cells: usize,
        region_cells: Vec<(String, usize)>,
    }
    let region_count = |reg: Region| rows.iter().filter(|r| matches!(r.outcome, Ok((x, ..)) if x == reg)).count();
    out.json(
        "classify_scan.json",
        "classify",
        &ScanDoc {
            scan,
            cells: rows.len(),
            boundary_cells: rows.iter().filter(|r| r.outcome.is_err()).count(),
            region_cells: ALL_REGIONS.iter().map(|&r| (format!("{r:?}"), region_count(r))).collect(),
        },
    )?;
    if svg {
        let mut plot = Plot::new(format!("regions in the (b, c) plane, d = {}", scan.d));
        let palette = ["#1f4fbf", "#c03030", "#2a9d4a", "#e08a1e", "#7b3fa0", "#1aa3a3", "#d45a9b", "#6b6b00", "#555555"];
        for (k, &reg) in ALL_REGIONS.iter().enumerate() {
            let pts: Vec<Complex64> = rows
                .iter()
                .filter(|r| matches!(r.outcome, Ok((x, ..)) if x == reg))
                .map(|r| Complex64::new(r.b, r.c))
                .collect();
            plot.series.push((format!("{reg:?}"), palette[k], pts));
        }
        out.svg("classify_scan.svg", &plot);
    }
    let mut checks = vec![];
    if check {
        let wrong: Vec<String> = rows
            .iter()
            .filter_map(|r| match r.outcome {
                Ok((reg, _, s, _)) if s != expected_saddles(reg) => {
                    Some(format!("({}, {}) {reg:?} has {s} saddles", r.b, r.c))
                }
                _ => None,
            })
            .take(5)
            .collect();
        checks.push(Check::new(
            "saddle_counts",
            wrong.is_empty(),
            if wrong.is_empty() { "every cell has its region's saddle count".into() } else { wrong.join("; ") },
        ));
        let missing: Vec<String> =
            ALL_REGIONS.iter().filter(|&&r| region_count(r) == 0).map(|r| format!("{r:?}")).collect();
        checks.push(Check::new(
            "all_regions_present",
            missing.is_empty(),
            if missing.is_empty() { "nine regions".into() } else { format!("missing {}", missing.join(", ")) },
        ));
    }
    Ok(Run::new(out, checks))
}
