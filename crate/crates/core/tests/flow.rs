use soliton_lab::entropy::{minimize_mu, minimize_nu};
use soliton_lab::flow::*;
use soliton_lab::geometry::*;
use soliton_lab::homogeneous::{FlowKind, HomogeneousMetric};
use soliton_lab::stability::InvariantSymTensor;
use soliton_lab::LabError;
use std::f64::consts::PI;

fn bump(r: f64) -> f64 {
    r.sin() + 0.05 * (2.0 * r).sin() * r.sin().powi(2)
}

fn sup(h: &InvariantSymTensor) -> f64 {
    let (a, b) = h.components().unwrap();
    a.iter().chain(b).fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[test]
fn round_spheres_are_stationary() {
    for n in [2, 3] {
        let p = WarpedProfile::unit_sphere(n, 200).unwrap();
        let c = minimize_nu(&p).unwrap();
        assert!(sup(&rhs_tau(&p, &c).unwrap()) < 1e-6);
        assert!(sup(&rhs_modified_tau(&p, &c).unwrap()) < 1e-6);
        assert!(sup(&rhs_normalized(&p).unwrap()) < 1e-6);
    }
    let p = WarpedProfile::unit_sphere(2, 100).unwrap();
    let tr = run_flow(FlowMetric::Warped(p), FlowKind::ModifiedTau, &FlowControls::default()).unwrap();
    assert_eq!(tr.termination, Termination::Converged);
    assert_eq!(tr.steps.len(), 1);
}

#[test]
fn modified_and_plain_velocities_differ_by_the_hessian() {
    let p = WarpedProfile::from_fn(2, 200, PI, bump).unwrap();
    let c = minimize_mu(&p, 0.45).unwrap();
    let t = rhs_tau(&p, &c).unwrap();
    let (ta, tb) = t.components().unwrap();
    let m = rhs_modified_tau(&p, &c).unwrap();
    let (ma, mb) = m.components().unwrap();
    let (ha, hb) = Geometry::new(&p).unwrap().hessian(&c.f.values);
    for i in 0..200 {
        assert!((ma[i] - ta[i] + 2.0 * ha[i]).abs() < 1e-12);
        assert!((mb[i] - tb[i] + 2.0 * hb[i]).abs() < 1e-12);
    }
}

#[test]
fn velocity_dispatches_on_the_backend() {
    let m = HomogeneousMetric::sphere_product(&[2, 2]).unwrap().with_scales(vec![1.01, 0.99]).unwrap();
    let s = FlowState::new(FlowMetric::Homogeneous(m), FlowKind::Tau).unwrap();
    let InvariantSymTensor::Homogeneous { c } = velocity(&s, FlowKind::Tau).unwrap() else {
        panic!("expected a homogeneous velocity");
    };
    // the larger factor grows, the smaller one shrinks
    assert!(c[0] > 0.0 && c[1] < 0.0, "{c:?}");
    assert!(s.gauge.is_none());

    let p = WarpedProfile::from_fn(2, 100, PI, bump).unwrap();
    let s = FlowState::new(FlowMetric::Warped(p), FlowKind::ModifiedTau).unwrap();
    assert_eq!(s.gauge.as_ref().unwrap().len(), 100);
}

#[test]
fn warped_flow_is_monotone_and_records_steps() {
    let p = WarpedProfile::from_fn(2, 100, PI, bump).unwrap();
    let ctl = FlowControls { horizon: 0.2, ..Default::default() };
    let tr = run_flow(FlowMetric::Warped(p), FlowKind::ModifiedTau, &ctl).unwrap();
    assert_eq!(tr.termination, Termination::Horizon);
    assert_eq!(tr.states.len(), tr.steps.len());
    assert!(tr.steps.windows(2).all(|w| w[1].t > w[0].t && w[1].nu - w[0].nu >= -1e-10));
    assert!(tr.worst_monotonicity_defect() <= 1e-10);
    let csv = tr.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), tr.steps.len());
    // the soliton residual decreases towards the round sphere
    assert!(tr.steps.last().unwrap().residual < tr.steps[0].residual);
}

#[test]
fn normalized_flow_keeps_the_volume() {
    let p = WarpedProfile::from_fn(3, 100, PI, bump).unwrap();
    let v0 = Geometry::new(&p).unwrap().volume();
    let ctl = FlowControls { horizon: 0.05, ..Default::default() };
    let tr = run_flow(FlowMetric::Warped(p), FlowKind::Normalized, &ctl).unwrap();
    let FlowMetric::Warped(q) = &tr.last().metric else { unreachable!() };
    let v1 = Geometry::new(q).unwrap().volume();
    assert!((v1 - v0).abs() < 1e-5 * v0, "{v0} -> {v1}");
}

#[test]
fn product_asymmetry_grows_at_rate_one_over_tau() {
    let m = HomogeneousMetric::sphere_product(&[2, 2]).unwrap().with_scales(vec![1.001, 0.999]).unwrap();
    let ctl = FlowControls { horizon: 1.0, ..Default::default() };
    let tr = run_flow(FlowMetric::Homogeneous(m), FlowKind::Tau, &ctl).unwrap();
    let (rate, monotone) = asymmetry_growth(&tr, 0.02).unwrap();
    assert!(monotone);
    assert!((rate - 2.0).abs() < 0.1, "{rate}");
}

#[test]
fn curvature_ceiling_stops_a_collapsing_factor() {
    let m = HomogeneousMetric::sphere_product(&[2, 2]).unwrap().with_scales(vec![1.2, 0.8]).unwrap();
    let ctl = FlowControls { horizon: 100.0, curvature_ceiling: 50.0, ..Default::default() };
    let tr = run_flow(FlowMetric::Homogeneous(m), FlowKind::Tau, &ctl).unwrap();
    assert!(matches!(tr.termination, Termination::BlowUp { curvature } if curvature > 50.0), "{:?}", tr.termination);
}

#[test]
fn asymmetry_needs_a_product_trajectory() {
    let p = WarpedProfile::unit_sphere(2, 64).unwrap();
    let tr = run_flow(FlowMetric::Warped(p), FlowKind::Tau, &FlowControls::default()).unwrap();
    assert!(matches!(asymmetry_growth(&tr, 0.1), Err(LabError::InvalidArgument(_))));
}

#[test]
fn conformal_slice_round_trip() {
    let u: Vec<f64> = (0..80).map(|i| 0.1 * ((i as f64 + 0.5) * PI / 80.0).cos().powi(2)).collect();
    let p = conformal_profile(2, &u).unwrap();
    let back = conformal_factor(&p).unwrap();
    for (a, b) in u.iter().zip(&back) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!(conformal_factor(&WarpedProfile::from_fn(2, 80, 3.0, |r| (r * PI / 3.0).sin()).unwrap()).is_none());
}
