use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soliton_lab::entropy::{minimize_mu, minimize_nu, EntropyCertificate};
use soliton_lab::geometry::*;
use soliton_lab::stability::*;
use soliton_lab::LabError;
use std::f64::consts::PI;

fn bump(r: f64) -> f64 {
    r.sin() + 0.05 * (2.0 * r).sin() * r.sin().powi(2)
}

fn round(n: usize, m: usize) -> (WarpedProfile, EntropyCertificate) {
    let p = WarpedProfile::unit_sphere(n, m).unwrap();
    let c = minimize_nu(&p).unwrap();
    (p, c)
}

/// Smooth invariant tensor with `a = b` at both poles.
fn smooth_tensor(rng: &mut ChaCha8Rng, x: &[f64]) -> InvariantSymTensor {
    let cb: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ca: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = x.iter().map(|r| (0..5).map(|k| cb[k] * (k as f64 * r).cos()).sum()).collect();
    let a = x
        .iter()
        .zip(&b)
        .map(|(r, b)| b + r.sin().powi(2) * (0..4).map(|k| ca[k] * (k as f64 * r).cos()).sum::<f64>())
        .collect();
    InvariantSymTensor::warped(a, b)
}

fn random_form(rng: &mut ChaCha8Rng, m: usize, length: f64) -> Vec<f64> {
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h = length / m as f64;
    (0..=m)
        .map(|k| {
            let r = k as f64 * h;
            r.sin() * (0..4).map(|j| c[j] * (j as f64 * r).cos()).sum::<f64>()
        })
        .collect()
}

#[test]
fn divergence_adjointness_on_random_fields() {
    let p = WarpedProfile::from_fn(3, 120, PI, bump).unwrap();
    let cert = minimize_mu(&p, 0.3).unwrap();
    let ctx = StabilityContext::weighted(&p, &cert).unwrap();
    let x = p.centres();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let h = smooth_tensor(&mut rng, &x);
        let w = random_form(&mut rng, 120, PI);
        let lhs = ctx.calc.inner_form(&ctx.weighted_div(&h).unwrap(), &w);
        let rhs = ctx.inner(&h, &ctx.weighted_div_adjoint(&w).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn laplacian_and_operator_symmetry() {
    let (p, c) = round(2, 120);
    let ctx = StabilityContext::new(&p, &c).unwrap();
    let x = p.centres();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let full = ctx.assemble_n_full().unwrap();
    let red = ctx.assemble_n_reduced();
    assert!(full.asymmetry() < 1e-8, "{}", full.asymmetry());
    assert!(red.asymmetry() < 1e-12);
    for _ in 0..10 {
        let h = smooth_tensor(&mut rng, &x);
        let k = smooth_tensor(&mut rng, &x);
        let lh = ctx.weighted_laplacian(&h).unwrap();
        let lk = ctx.weighted_laplacian(&k).unwrap();
        let (a, b) = (ctx.inner(&lh, &k).unwrap(), ctx.inner(&h, &lk).unwrap());
        assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
        let (a, b) = (full.bilinear(&h, &k).unwrap(), full.bilinear(&k, &h).unwrap());
        assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
        // bilinear is the Gram pairing of apply
        let nh = full.apply(&h).unwrap();
        assert!((ctx.inner(&nh, &k).unwrap() - a).abs() < 1e-10 * a.abs().max(1.0));
    }
}

#[test]
fn ricci_is_divergence_free_at_solitons() {
    for n in [2, 3] {
        let (p, c) = round(n, 400);
        let ctx = StabilityContext::new(&p, &c).unwrap();
        let (rr, rs) = ctx.calc.ricci();
        let d = ctx.weighted_div(&InvariantSymTensor::warped(rr, rs)).unwrap();
        let worst = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-7, "n={n}: {worst}");
    }
}

#[test]
fn gauge_of_differential_is_the_hessian() {
    let (p, c) = round(2, 200);
    let ctx = StabilityContext::new(&p, &c).unwrap();
    let v: Vec<f64> = p.centres().iter().map(|r| r.cos() + 0.3 * (2.0 * r).cos()).collect();
    let hv = ctx.hessian(&v);
    let gv = ctx.weighted_div_adjoint(&ctx.calc.grad(&v)).unwrap();
    assert_eq!(hv, gv);
}

#[test]
fn vh_vanishes_on_v_and_is_solved_elsewhere() {
    let (p, c) = round(2, 160);
    let ctx = StabilityContext::new(&p, &c).unwrap();
    let x = p.centres();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = smooth_tensor(&mut rng, &x);
    let v = ctx.solve_vh(&h).unwrap();
    assert!(v.values.iter().any(|x| x.abs() > 1e-6));
    let pv = ctx.project_v(&h).unwrap();
    let v0 = ctx.solve_vh(&pv).unwrap();
    assert!(v0.values.iter().all(|x| x.abs() < 1e-9), "{:?}", &v0.values[..3]);
}

#[test]
fn projection_onto_v() {
    let (p, c) = round(2, 120);
    let ctx = StabilityContext::new(&p, &c).unwrap();
    let x = p.centres();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (rr, rs) = ctx.calc.ricci();
    let ric = InvariantSymTensor::warped(rr, rs);
    for _ in 0..5 {
        let h = ctx.project_v(&smooth_tensor(&mut rng, &x)).unwrap();
        let hh = ctx.project_v(&h).unwrap();
        let (a, _) = h.components().unwrap();
        let (aa, _) = hh.components().unwrap();
        let diff = a.iter().zip(aa).fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
        assert!(diff < 1e-10);
        let d = ctx.weighted_div(&h).unwrap();
        assert!(d[1..120].iter().all(|v| v.abs() < 1e-9));
        assert!(ctx.inner(&h, &ric).unwrap().abs() < 1e-10);
        // on V the full and reduced forms agree up to the pole terms
        let full = ctx.assemble_n_full().unwrap().bilinear(&h, &h).unwrap();
        let red = ctx.assemble_n_reduced().bilinear(&h, &h).unwrap();
        assert!((full - red).abs() < 1e-8 * full.abs(), "{full} vs {red}");
    }
}

#[test]
fn gauge_directions_are_annihilated_at_second_order() {
    // <N sym(nabla w), k>_w for fixed smooth w, k, relative to |w| |k|
    let mut rel = Vec::new();
    for m in [60, 120, 240] {
        let (p, c) = round(2, m);
        let ctx = StabilityContext::new(&p, &c).unwrap();
        let full = ctx.assemble_n_full().unwrap();
        let h = PI / m as f64;
        let w: Vec<f64> = (0..=m)
            .map(|k| {
                let r = k as f64 * h;
                r.sin() * (1.0 + 0.5 * r.cos() - 0.3 * (2.0 * r).cos())
            })
            .collect();
        let g = ctx.weighted_div_adjoint(&w).unwrap();
        let x = p.centres();
        let k = InvariantSymTensor::warped(
            x.iter().map(|r| 1.0 + r.cos() + r.sin().powi(2)).collect(),
            x.iter().map(|r| 1.0 + r.cos()).collect(),
        );
        let scale = ctx.inner(&g, &g).unwrap().sqrt() * ctx.inner(&k, &k).unwrap().sqrt();
        rel.push(full.bilinear(&g, &k).unwrap().abs() / scale);
    }
    assert!(rel[2] < 2e-6, "{rel:?}");
    for w in rel.windows(2) {
        assert!(w[0] / w[1] > 3.5, "{rel:?}");
    }
}

#[test]
fn round_sphere_spectrum_is_negative_and_converges() {
    let mut tops = Vec::new();
    for m in [100, 200] {
        let (p, c) = round(2, m);
        let s = spectrum_on_v(&p, &c).unwrap();
        let top = s.top().unwrap();
        assert!(top < -0.1, "M={m}: {top}");
        assert_eq!(s.classification, Classification::LinearlyStable);
        assert_eq!(s.classification.label(), "linearly stable");
        tops.push(top);
    }
    assert!((tops[0] - tops[1]).abs() < 1e-3 * tops[1].abs(), "{tops:?}");
}

#[test]
fn classification_thresholds() {
    assert_eq!(Classification::from_spectrum(Some(-0.5), 1e-8), Classification::LinearlyStable);
    assert_eq!(Classification::from_spectrum(Some(1e-12), 1e-8), Classification::NeutrallyLinearlyStable);
    assert_eq!(Classification::from_spectrum(Some(1.0), 1e-8), Classification::LinearlyUnstable);
}

#[test]
fn isd_on_round_spheres() {
    let (p, c) = round(2, 800);
    let r = isd_candidates(&p, &c).unwrap();
    assert!(r.is_empty());
    assert_eq!(r.conformal_modes.len(), 1);
    assert!((r.conformal_modes[0].eigenvalue - 2.0).abs() < 1e-6 && r.conformal_modes[0].discarded);
    assert_eq!(r.tt_dimension, 0);

    let (p, c) = round(3, 400);
    let r = isd_candidates(&p, &c).unwrap();
    assert!(r.is_empty() && r.conformal_modes.is_empty());
    assert!((r.nearest_eigenvalue - 3.0).abs() < 1e-4);
}

#[test]
fn operators_refuse_non_solitons() {
    let p = WarpedProfile::from_fn(2, 120, PI, bump).unwrap();
    let c = minimize_nu(&p).unwrap();
    assert!(matches!(StabilityContext::new(&p, &c), Err(LabError::NotASoliton { .. })));
    assert!(matches!(spectrum_on_v(&p, &c), Err(LabError::NotASoliton { .. })));
    let (q, d) = round(2, 120);
    let short = InvariantSymTensor::warped(vec![0.0; 119], vec![0.0; 119]);
    assert!(matches!(weighted_laplacian(&q, &d, &short), Err(LabError::GridMismatch { .. })));
}
