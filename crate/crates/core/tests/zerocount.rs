use branchspec_core::poly::CPoly;
use branchspec_core::quantization::{
    bohr_sommerfeld_solve, term_set_unchecked, ActionModel, BsBranch, Regime, Scaled,
    SemiclassicalParams, TermLabel,
};
use branchspec_core::skeleton::{assemble, DEFAULT_BODY_C};
use branchspec_core::zerocount::*;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn model(s12: &[Complex64], s34: &[Complex64]) -> ActionModel {
    ActionModel {
        s12: CPoly::new(s12.to_vec()),
        s34: CPoly::new(s34.to_vec()),
        description: String::new(),
        physical: false,
    }
}

fn regime_at(mu: Complex64, h: f64) -> Regime {
    if mu.norm() <= 10.0 * h {
        Regime::Case1Small
    } else {
        Regime::Case1Large
    }
}

#[test]
fn cubic_on_unit_square() {
    let f = plain(|z: Complex64| z * z * z);
    let sq = Contour::rectangle(c(-0.5, -0.5), c(0.5, 0.5)).unwrap();
    assert_eq!(winding_count(&f, &sq, 0.05, 0.01).unwrap(), 3);
    let outside = Contour::rectangle(c(0.1, 0.1), c(0.6, 0.6)).unwrap();
    assert_eq!(winding_count(&f, &outside, 0.05, 0.01).unwrap(), 0);
}

#[test]
fn cosh_ladder_count_and_location() {
    let h = 0.01;
    let f = plain(move |z: Complex64| (PI * z / h).cosh());
    let rect = Contour::rectangle(c(-h, 0.0), c(h, 3.0 * h)).unwrap();
    assert_eq!(winding_count(&f, &rect, h / 20.0, h / 100.0).unwrap(), 3);
    // A contour through a zero is moved outward.
    let through = Contour::rectangle(c(-h, 0.5 * h), c(h, 2.0 * h)).unwrap();
    assert_eq!(winding_count(&f, &through, h / 20.0, h / 100.0).unwrap(), 2);
    let zs = locate_zeros(&f, Rect::new(c(-h, 0.0), c(h, 3.0 * h)), h).unwrap();
    assert_eq!(zs.zeros.len(), 3);
    let mut ims: Vec<f64> = zs.zeros.iter().map(|z| z.location.im).collect();
    ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (k, (z, im)) in zs.zeros.iter().zip(&ims).enumerate() {
        assert!(z.validated);
        assert!((im - (k as f64 + 0.5) * h).abs() <= 1e-10, "{im}");
    }
}

#[test]
fn stable_under_perturbation_and_refinement() {
    let h = 0.01;
    let f = plain(move |z: Complex64| (PI * z / h).cosh() * (z - c(0.013, 0.002)));
    let rect = Contour::rectangle(c(-0.02, -0.004), c(0.02, 0.023)).unwrap();
    let n = winding_count(&f, &rect, h / 20.0, h / 100.0).unwrap();
    assert_eq!(n, 3);
    assert_eq!(winding_count(&f, &rect, h / 40.0, h / 100.0).unwrap(), n);
    assert_eq!(winding_count(&f, &rect.offset(h / 200.0), h / 20.0, h / 100.0).unwrap(), n);
}

#[test]
fn split_term_alone_gives_the_exact_ladder() {
    let h = 0.01;
    let am = ActionModel::zero();
    let f = move |mu: Complex64| {
        let ts = term_set_unchecked(mu, h, &am, regime_at(mu, h));
        // Scale by the larger of the two split terms.
        let m = ts.rate(TermLabel::FourPlus).max(ts.rate(TermLabel::FourMinus)) / h;
        Scaled {
            value: (ts.log_combined() - m).exp(),
            log_scale: m,
        }
    };
    let zs = locate_zeros(&f, Rect::new(c(-0.3 * h, 0.02 * h), c(0.4 * h, 5.0 * h)), h).unwrap();
    assert_eq!(zs.zeros.len(), 5);
    for z in &zs.zeros {
        let k = (z.location.im / h - 0.5).round();
        assert!((z.location - c(0.0, (k + 0.5) * h)).norm() <= 1e-10, "{}", z.location);
    }
}

#[test]
fn interior_factor_zeros_match_bohr_sommerfeld() {
    let h = 0.01;
    let p = SemiclassicalParams::unperturbed(h).unwrap();
    let am = model(&[c(0.02, 0.0), c(0.3, 0.0)], &[c(-0.01, 0.0), c(0.2, 0.0)]);
    let amc = am.clone();
    let f = move |mu: Complex64| {
        let ts = term_set_unchecked(mu, h, &amc, regime_at(mu, h));
        let d = ts.get(TermLabel::Two).unwrap().log_value - ts.get(TermLabel::FourPlus).unwrap().log_value;
        // 1 + a₂/a₄⁺, scaled by its larger part.
        let m = d.re.max(0.0);
        Scaled {
            value: (-m as f64).exp() + (d - m).exp(),
            log_scale: m,
        }
    };
    let rect = Rect::new(c(0.1, -0.01), c(0.2, 0.01));
    let zs = locate_zeros(&f, rect, h).unwrap();
    assert!(!zs.zeros.is_empty());
    for z in &zs.zeros {
        let mut best = f64::INFINITY;
        for k in -30..0 {
            if let Ok(r) = bohr_sommerfeld_solve(BsBranch::RightInt, k, &p, &am) {
                best = best.min((r - z.location).norm());
            }
        }
        assert!(best <= 1e-9, "zero {} is {best} from every root", z.location);
    }
}

#[test]
fn winding_agrees_with_grid_newton_for_random_real_actions() {
    let h = 0.01;
    let p = SemiclassicalParams::unperturbed(h).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let am = model(
            &[c(rng.gen_range(-0.05..0.05), 0.0), c(rng.gen_range(0.1..0.4), 0.0)],
            &[c(rng.gen_range(-0.05..0.05), 0.0), c(rng.gen_range(-0.4..-0.1), 0.0)],
        );
        let g = g_function(&p, &am);
        let rect = Rect::new(c(0.0523, -0.0117), c(0.2511, 0.0093));
        let n = winding_count(&g, &Contour::rectangle(rect.lo, rect.hi).unwrap(), h / 20.0, h / 100.0).unwrap();
        let grid = grid_newton_zeros(&g, rect, h, 120);
        assert!(n >= 5, "{n}");
        assert_eq!(n as usize, grid.zeros.len());
        let located = locate_zeros(&g, rect, h).unwrap();
        assert_eq!(located.zeros.len(), n as usize);
        assert!(located.zeros.iter().all(|z| z.validated && z.residual <= 1e-9));
        let report = match_points(&located.locations(), &grid.locations(), |_| 1e-9);
        assert!(report.is_bijection());
    }
}

#[test]
fn zeros_lie_in_the_body() {
    let h = 0.005;
    let p = SemiclassicalParams::new(h, 0.03, false).unwrap();
    let am = model(&[c(0.01, 0.004), c(0.2, 0.0)], &[c(-0.02, 0.002), c(-0.15, 0.0)]);
    let (_, body) = assemble(&p, &am, DEFAULT_BODY_C).unwrap();
    let g = g_function(&p, &am);
    let rect = Rect::new(c(-0.2017, -0.0413), c(0.2029, 0.0611));
    let zs = locate_zeros(&g, rect, h).unwrap();
    assert!(zs.zeros.len() > 10);
    for z in &zs.zeros {
        assert!(body.contains_with_box(z.location), "zero {} outside the body", z.location);
    }
}

#[test]
fn phase_sum_in_a_single_dominance_region() {
    let h = 0.01;
    let am = model(&[c(0.02, 0.0), c(0.3, 0.0)], &[c(-0.01, 0.0), c(0.2, 0.0)]);
    let provider = |mu: Complex64| term_set_unchecked(mu, h, &am, regime_at(mu, h));
    // Far above the skeleton a₁ dominates.
    let path = vec![c(-0.2, 0.08), c(0.2, 0.08)];
    let curve = AdmissibleCurve::auto_partition(path, &provider, h / 50.0, None).unwrap();
    assert_eq!(curve.partition.len(), 1);
    let r = phase_sum_count(&curve, &provider, h).unwrap();
    assert!(r.discrepancy <= 2.0, "{r:?}");
}

#[test]
fn phase_sum_on_a_closed_contour() {
    let h = 0.01;
    let p = SemiclassicalParams::unperturbed(h).unwrap();
    let am = model(&[c(0.02, 0.0), c(0.3, 0.0)], &[c(-0.01, 0.0), c(0.2, 0.0)]);
    let provider = |mu: Complex64| term_set_unchecked(mu, h, &am, regime_at(mu, h));
    let (lo, hi) = (c(0.05, -0.03), c(0.25, 0.04));
    let path = vec![lo, c(hi.re, lo.im), hi, c(lo.re, hi.im), lo];
    let curve = AdmissibleCurve::auto_partition(path, &provider, h / 100.0, None).unwrap();
    let r = phase_sum_count(&curve, &provider, h).unwrap();
    let g = g_function(&p, &am);
    let n = winding_count(&g, &Contour::rectangle(lo, hi).unwrap(), h / 20.0, h / 100.0).unwrap();
    assert!((r.direct - n as f64).abs() < 1e-6, "{r:?} vs {n}");
    assert!((r.estimate - n as f64).abs() <= 5.0, "{r:?} vs {n}");
}

#[test]
fn not_admissible_partitions_are_rejected() {
    let h = 0.01;
    let am = ActionModel::zero();
    let provider = |mu: Complex64| term_set_unchecked(mu, h, &am, regime_at(mu, h));
    let path = vec![c(0.1, -0.05), c(0.1, 0.05)];
    let good = AdmissibleCurve::auto_partition(path.clone(), &provider, h / 50.0, None).unwrap();
    assert!(good.validate(&provider, h, 10.0).is_ok());
    // Claim a single dominant term along a path that crosses the skeleton.
    let bad = AdmissibleCurve {
        path,
        partition: vec![CurveSegment {
            s_start: 0.0,
            s_end: 0.1,
            kind: SegmentKind::J { label: TermLabel::One },
        }],
    };
    assert!(matches!(phase_sum_count(&bad, &provider, h), Err(branchspec_core::Error::NotAdmissible(_))));
}

#[test]
fn bijection_controls() {
    // The imaginary parts separate Γ₂,₄⁺ from Γ₃,₄⁺ so that each interior
    // family is governed by a single pair of terms.
    let h = 0.001;
    let p = SemiclassicalParams::unperturbed(h).unwrap();
    let am = model(&[c(0.02, 0.015), c(0.3, 0.0)], &[c(-0.01, -0.015), c(0.2, 0.0)]);
    let g = g_function(&p, &am);
    let rect = Rect::new(c(5.0 * h, -0.0207), c(0.0493, 0.0211));
    let zs = locate_zeros(&g, rect, h).unwrap();
    // Union of the two interior Bohr–Sommerfeld families.
    let mut pred = vec![];
    for branch in [BsBranch::LeftInt, BsBranch::RightInt] {
        for k in -200..0 {
            if let Ok(r) = bohr_sommerfeld_solve(branch, k, &p, &am) {
                if rect.contains(r) {
                    pred.push(Zero { location: r, validated: true, residual: 0.0 });
                }
            }
        }
    }
    let predicted = ZeroSet { zeros: pred.clone(), method: ZeroMethod::GridNewton };
    // The exponential bound falls below double precision for Re μ ≳ 12h; a
    // roundoff floor proportional to |μ| is added.
    let rate = |mu: Complex64| {
        10.0 * h / (1.0 / mu.norm()).ln() * (-PI * mu.re / h).exp() + 64.0 * f64::EPSILON * mu.norm()
    };
    let report = match_bijection(&zs, &predicted, rate).unwrap();
    assert!(report.pairs.len() >= 8);
    assert!(report.worst_ratio() <= 1.0);
    let shifted = ZeroSet {
        zeros: pred.iter().map(|z| Zero { location: z.location + 10.0 * h, ..*z }).collect(),
        method: ZeroMethod::GridNewton,
    };
    assert!(matches!(
        match_bijection(&zs, &shifted, rate),
        Err(branchspec_core::Error::Bijection { .. })
    ));
}
