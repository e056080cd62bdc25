use soliton_lab::entropy::minimize_nu;
use soliton_lab::geometry::*;
use soliton_lab::homogeneous::{EinsteinFactor, HomogeneousMetric};
use soliton_lab::stability::{InvariantSymTensor, StabilityContext};
use soliton_lab::variation::*;
use soliton_lab::LabError;
use std::f64::consts::PI;

fn bump(r: f64) -> f64 {
    r.sin() + 0.05 * (2.0 * r).sin() * r.sin().powi(2)
}

fn smooth(p: &WarpedProfile, scale: f64) -> InvariantSymTensor {
    let x = p.centres();
    let b: Vec<f64> = x.iter().map(|r| scale * (0.3 * r.cos() + 0.2 * (2.0 * r).cos())).collect();
    let a = x.iter().zip(&b).map(|(r, b)| b + scale * 0.4 * r.sin().powi(2) * (1.0 + r.cos())).collect();
    InvariantSymTensor::warped(a, b)
}

#[test]
fn first_variation_vanishes_at_the_round_sphere() {
    let p = WarpedProfile::unit_sphere(2, 200).unwrap();
    let c = minimize_nu(&p).unwrap();
    assert!(first_variation(&p, &c, &smooth(&p, 1.0)).unwrap().abs() < 1e-8);
}

#[test]
fn first_variation_matches_finite_differences_off_the_soliton() {
    let p = WarpedProfile::from_fn(2, 200, PI, bump).unwrap();
    let h = smooth(&p, 1.0);
    let r = check_first_variation(&p, &h, None, &VariationTolerances::default()).unwrap();
    assert!(r.analytic.abs() > 1e-4, "{}", r.analytic);
    assert!(r.pass && r.relative_error < 1e-5, "{r:?}");
    assert_eq!(r.steps.len(), 3);
}

#[test]
fn first_variation_ignores_rescalings_and_gauge() {
    let p = WarpedProfile::from_fn(2, 200, PI, bump).unwrap();
    let c = minimize_nu(&p).unwrap();
    // g itself: nu is scale invariant
    let g = InvariantSymTensor::warped(vec![1.0; 200], vec![1.0; 200]);
    assert!(first_variation(&p, &c, &g).unwrap().abs() < 1e-8);
}

#[test]
fn first_variation_along_lie_derivatives_vanishes_under_refinement() {
    // nu is diffeomorphism invariant; the staggered sym(nabla w) is a
    // consistent approximation of L_X g, so nu' along it is discretization error
    let mut vals = Vec::new();
    for m in [100, 200, 400] {
        let p = WarpedProfile::from_fn(2, m, PI, bump).unwrap();
        let c = minimize_nu(&p).unwrap();
        let ctx = StabilityContext::weighted(&p, &c).unwrap();
        let hh = PI / m as f64;
        let w: Vec<f64> = (0..=m).map(|k| (k as f64 * hh).sin() * (1.0 + 0.4 * (k as f64 * hh).cos())).collect();
        let lie = ctx.weighted_div_adjoint(&w).unwrap();
        let val = first_variation(&p, &c, &lie).unwrap();
        let size = first_variation(&p, &c, &smooth(&p, 1.0)).unwrap();
        vals.push((val / size).abs());
    }
    assert!(vals[2] < 1e-3, "{vals:?}");
    assert!(vals[0] / vals[1] > 3.5 && vals[1] / vals[2] > 3.5, "{vals:?}");
}

#[test]
fn second_variation_on_the_homogeneous_backend() {
    let m = HomogeneousMetric::sphere_product(&[2, 2]).unwrap();
    let r = check_second_variation_homogeneous(&m, &[1.0, -1.0], &VariationTolerances::default()).unwrap();
    assert!((r.analytic - 2.0).abs() < 1e-12);
    assert!(r.pass && r.relative_error < 1e-8, "{r:?}");

    // along Ric itself the scale invariance gives zero
    let r = check_second_variation_homogeneous(&m, &[1.0, 1.0], &VariationTolerances::default()).unwrap();
    assert!(r.analytic.abs() < 1e-14 && r.pass);

    let f = vec![EinsteinFactor::unit_sphere(2).unwrap(), EinsteinFactor::unit_sphere(3).unwrap()];
    let m = HomogeneousMetric::soliton(f, 0.5).unwrap();
    let r = check_second_variation_homogeneous(&m, &[0.7, -0.2], &VariationTolerances::default()).unwrap();
    assert!(r.pass, "{r:?}");

    let off = HomogeneousMetric::sphere_product(&[2, 2]).unwrap().with_scales(vec![1.1, 1.0]).unwrap();
    assert!(matches!(
        check_second_variation_homogeneous(&off, &[1.0, -1.0], &VariationTolerances::default()),
        Err(LabError::NotASoliton { .. })
    ));
}

#[test]
fn second_variation_on_the_round_sphere() {
    let p = WarpedProfile::unit_sphere(2, 400).unwrap();
    let c = minimize_nu(&p).unwrap();
    let ctx = StabilityContext::new(&p, &c).unwrap();
    let h = ctx.project_v(&smooth(&p, 1.0)).unwrap();
    let r = check_second_variation(&p, &c, &h, &VariationTolerances::default()).unwrap();
    assert!(r.analytic < 0.0);
    assert!(r.relative_error < 1e-3, "{r:?}");
    assert!(r.convergence_ratios.iter().all(|q| *q > 3.0), "{r:?}");
    // on V the reduced form gives the same value
    let reduced = second_variation(&ctx, &h).unwrap();
    assert!((reduced - r.analytic).abs() < 1e-6 * r.analytic.abs());
}

#[test]
fn third_variation_probe_scales() {
    let p = WarpedProfile::unit_sphere(2, 120).unwrap();
    let zero = InvariantSymTensor::warped(vec![0.0; 120], vec![0.0; 120]);
    let z = third_variation_bound_probe(&p, &zero).unwrap();
    assert_eq!((z.third, z.ratio), (0.0, 0.0));

    let a = third_variation_bound_probe(&p, &smooth(&p, 1.0)).unwrap();
    let b = third_variation_bound_probe(&p, &smooth(&p, 2.0)).unwrap();
    assert!(a.ratio.is_finite() && a.ratio > 0.0 && !a.noise_exceeded);
    // nu''' is cubic in h and the bound is cubic in |h|
    assert!((b.third / a.third - 8.0).abs() < 0.2 * 8.0, "{} {}", a.third, b.third);
    assert!((b.ratio / a.ratio - 1.0).abs() < 0.2);
}

#[test]
fn obstruction_on_spheres() {
    let p = WarpedProfile::unit_sphere(2, 400).unwrap();
    let c = minimize_nu(&p).unwrap();
    let v = ScalarProfile::from_fn(&p, |r| r.cos());
    assert!(obstruction_integral(&p, &c, &v).unwrap().abs() < 1e-8);
    // not an eigenfunction
    let w = ScalarProfile::from_fn(&p, |r| r.cos().powi(2));
    assert!(matches!(obstruction_integral(&p, &c, &w), Err(LabError::NotIsdGenerator(_))));
    // the quadrature alone sees int cos^3 = 0 and int (1 + cos)^3 != 0
    let g = Geometry::new(&p).unwrap();
    let u = ScalarProfile::from_fn(&p, |r| 1.0 + r.cos());
    // (2n-2)/vol * int (1+cos)^3 dA = 2 / (4 pi) * 2 pi * 4 = 4
    assert!((obstruction_quadrature(&g, &u) - 4.0).abs() < 1e-6);

    let q = WarpedProfile::from_fn(2, 200, PI, bump).unwrap();
    let d = minimize_nu(&q).unwrap();
    let v = ScalarProfile::from_fn(&q, |r| r.cos());
    assert!(matches!(obstruction_integral(&q, &d, &v), Err(LabError::NotIsdGenerator(_))));
}

fn synthetic(sigma: f64, count: usize) -> Vec<DecaySample> {
    (0..count)
        .map(|k| {
            let t = 0.5 * k as f64;
            let dnu = 1e-3 * (1.0 + t).powf(-3.0);
            DecaySample { t, nu: -dnu, residual: dnu.powf(sigma) / 2.0 }
        })
        .collect()
}

#[test]
fn lojasiewicz_fit_recovers_synthetic_exponents() {
    for sigma in [0.5, 0.6, 0.7] {
        let fit = fit_lojasiewicz(&synthetic(sigma, 80), 0.0, true, 1e-15).unwrap();
        assert!((fit.sigma - sigma).abs() < 0.01, "{sigma}: {}", fit.sigma);
        assert!(fit.fit_residual < 1e-8 && fit.worst_ratio <= 1.0 + 1e-8);
    }
}

#[test]
fn lojasiewicz_fit_rejects_bad_input() {
    let s = synthetic(0.6, 80);
    assert!(matches!(fit_lojasiewicz(&s, 0.0, false, 1e-15), Err(LabError::InsufficientData(_))));
    assert!(matches!(fit_lojasiewicz(&s[..10], 0.0, true, 1e-15), Err(LabError::InsufficientData(_))));
    // a noise floor above every sample leaves nothing to fit
    assert!(matches!(fit_lojasiewicz(&s, 0.0, true, 1.0), Err(LabError::InsufficientData(_))));
}

#[test]
fn reports_serialize() {
    let m = HomogeneousMetric::sphere_product(&[2, 2]).unwrap();
    let r = check_second_variation_homogeneous(&m, &[1.0, -1.0], &VariationTolerances::default()).unwrap();
    let text = serde_json::to_string(&r).unwrap();
    let back: VariationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
}
