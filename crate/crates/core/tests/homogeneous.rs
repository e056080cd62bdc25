use soliton_lab::entropy::minimize_nu;
use soliton_lab::flow::{run_flow, FlowControls, FlowMetric};
use soliton_lab::geometry::WarpedProfile;
use soliton_lab::homogeneous::*;
use soliton_lab::LabError;
use std::f64::consts::PI;

fn s2xs2(x: [f64; 2]) -> HomogeneousMetric {
    HomogeneousMetric::sphere_product(&[2, 2]).unwrap().with_scales(x.to_vec()).unwrap()
}

#[test]
fn closed_form_entropy_values() {
    let c = equivariant_entropy(&HomogeneousMetric::sphere_product(&[2]).unwrap()).unwrap();
    assert!((c.tau - 0.5).abs() < 1e-15 && (c.nu - (-0.306853)).abs() < 1e-6);
    let c = equivariant_entropy(&HomogeneousMetric::sphere_product(&[3]).unwrap()).unwrap();
    assert!((c.tau - 0.25).abs() < 1e-15 && (c.nu - (2f64.ln() + 0.5 * PI.ln() - 1.5)).abs() < 1e-14);
    let c = equivariant_entropy(&s2xs2([1.0, 1.0])).unwrap();
    assert!((c.tau - 0.5).abs() < 1e-15 && (c.nu - (-0.613706)).abs() < 1e-6);
}

#[test]
fn closed_form_agrees_with_the_pde_backend() {
    for n in [2, 3] {
        let hom = equivariant_entropy(&HomogeneousMetric::sphere_product(&[n]).unwrap()).unwrap();
        let pde = minimize_nu(&WarpedProfile::unit_sphere(n, 200).unwrap()).unwrap();
        assert!((hom.nu - pde.nu).abs() < 1e-6, "n={n}: {} vs {}", hom.nu, pde.nu);
        assert!((hom.tau - pde.tau).abs() < 1e-6);
    }
}

#[test]
fn entropy_is_scale_invariant() {
    let m = s2xs2([1.3, 0.7]);
    let a = equivariant_entropy(&m).unwrap();
    for alpha in [0.1, 2.0, 17.0] {
        let b = equivariant_entropy(&m.scaled(alpha).unwrap()).unwrap();
        assert!((a.nu - b.nu).abs() < 1e-13);
        assert!((b.tau - alpha * a.tau).abs() < 1e-13 * b.tau);
    }
}

#[test]
fn soliton_points_are_fixed() {
    let f = vec![EinsteinFactor::unit_sphere(2).unwrap(), EinsteinFactor::unit_sphere(3).unwrap()];
    let m = HomogeneousMetric::soliton(f, 0.7).unwrap();
    assert!(m.is_soliton());
    for kind in [FlowKind::Tau, FlowKind::ModifiedTau] {
        assert!(flow_rhs(&m, kind).unwrap().iter().all(|v| v.abs() < 1e-12));
    }
    assert_eq!(flow_rhs(&s2xs2([1.0, 1.0]), FlowKind::Tau).unwrap(), vec![0.0, 0.0]);
    assert!(flow_rhs(&s2xs2([1.0, 1.0]), FlowKind::Normalized).unwrap().iter().all(|v| v.abs() < 1e-14));
    assert!(s2xs2([1.0, 1.0]).soliton_residual().unwrap() < 1e-12);
}

#[test]
fn asymmetric_velocity_matches_the_linearization() {
    let eps = 1e-3;
    let v = flow_rhs(&s2xs2([1.0 + eps, 1.0 - eps]), FlowKind::Tau).unwrap();
    // x1' - x2' = 2 eps / tau + O(eps^2), tau = 1/2
    assert!((v[0] - v[1] - 4.0 * eps).abs() < 10.0 * eps * eps, "{v:?}");
}

#[test]
fn stability_spectra() {
    let single = stability_matrix(&HomogeneousMetric::sphere_product(&[2]).unwrap()).unwrap();
    assert!(single.eigenvalues.is_empty());
    let p = s2xs2([1.0, 1.0]);
    assert_eq!(stability_matrix(&p).unwrap().eigenvalues, vec![1.0]);
    let g = stability_matrix_generic(&p).unwrap();
    assert!((g.eigenvalues[0] - 1.0).abs() < 1e-10);

    let f = vec![EinsteinFactor::unit_sphere(2).unwrap(), EinsteinFactor::unit_sphere(3).unwrap()];
    let m = HomogeneousMetric::soliton(f, 0.5).unwrap();
    let g = stability_matrix_generic(&m).unwrap();
    assert_eq!(g.eigenvalues.len(), 1);
    assert!(g.eigenvalues[0] > 0.0);
    assert!((g.eigenvalues[0] - stability_matrix(&m).unwrap().eigenvalues[0]).abs() < 1e-12);
}

#[test]
fn errors() {
    assert!(matches!(stability_matrix(&s2xs2([1.1, 1.0])), Err(LabError::NotASoliton { .. })));
    assert!(EinsteinFactor::new(2, -1.0, 1.0).is_err());
    assert!(EinsteinFactor::new(1, 1.0, 1.0).is_err());
    assert!(HomogeneousMetric::sphere_product(&[2, 2]).unwrap().with_scales(vec![1.0, -1.0]).is_err());
}

#[test]
fn volume_is_the_product_of_factor_volumes() {
    let m = s2xs2([2.0, 0.5]);
    assert!((m.volume() - 16.0 * PI * PI).abs() < 1e-12);
}

#[test]
fn entropy_is_monotone_along_flows() {
    for kind in [FlowKind::Tau, FlowKind::Normalized] {
        let m = s2xs2([1.2, 0.9]);
        let ctl = FlowControls { horizon: 0.5, ..Default::default() };
        let tr = run_flow(FlowMetric::Homogeneous(m), kind, &ctl).unwrap();
        assert!(tr.steps.len() > 10);
        for w in tr.steps.windows(2) {
            assert!(w[1].nu - w[0].nu >= -1e-10, "{kind:?}: {} -> {}", w[0].nu, w[1].nu);
        }
    }
}
