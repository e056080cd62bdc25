use super::curvature::Geometry;
use super::stencil::{self, Parity};
use super::ScalarProfile;
use crate::error::{LabError, Result};
use serde::{Deserialize, Serialize};

/// Per-cell volume weights, optionally carrying the density `e^{-f}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn volume(geom: &Geometry) -> Self {
        Self { weights: geom.mass.clone() }
    }

    /// Weights of `e^{-f} dV`.
    pub fn weighted(geom: &Geometry, f: &[f64]) -> Result<Self> {
        if f.len() != geom.cells {
            return Err(LabError::GridMismatch { expected: geom.cells, found: f.len() });
        }
        Ok(Self { weights: geom.mass.iter().zip(f).map(|(m, f)| m * (-f).exp()).collect() })
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn integrate(u: &ScalarProfile, quadrature: &Quadrature) -> Result<f64> {
    if u.len() != quadrature.weights.len() {
        return Err(LabError::GridMismatch { expected: quadrature.weights.len(), found: u.len() });
    }
    Ok(u.values.iter().zip(&quadrature.weights).map(|(u, w)| u * w).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldNorms {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
    pub sup: f64,
}

fn face_density(weight: Option<&[f64]>, cells: usize) -> Vec<f64> {
    match weight {
        None => vec![1.0; cells + 1],
        Some(f) => stencil::face_values(f, Parity::Even).into_iter().map(|v| (-v).exp()).collect(),
    }
}

/// Discrete L2, H1, H2 and sup norms of a function, optionally in the
/// weighted measure `e^{-f} dV`.
pub fn norms(u: &ScalarProfile, geom: &Geometry, weight: Option<&ScalarProfile>) -> Result<FieldNorms> {
    let m = geom.cells;
    if u.len() != m {
        return Err(LabError::GridMismatch { expected: m, found: u.len() });
    }
    let f = weight.map(|w| w.values.as_slice());
    if let Some(f) = f {
        if f.len() != m {
            return Err(LabError::GridMismatch { expected: m, found: f.len() });
        }
    }
    let w: Vec<f64> = match f {
        Some(f) => geom.mass.iter().zip(f).map(|(m, f)| m * (-f).exp()).collect(),
        None => geom.mass.clone(),
    };
    let fd = face_density(f, m);
    let u = &u.values;
    let l2sq: f64 = w.iter().zip(u).map(|(w, u)| w * u * u).sum();
    let du = stencil::face_diffs(u, Parity::Even, geom.h);
    let grad: f64 = du
        .iter()
        .zip(&geom.face_weight)
        .zip(&fd)
        .map(|((d, c), e)| c * e * d * d)
        .sum();
    let (hrr, hsph) = geom.hessian(u);
    let n1 = (geom.dim - 1) as f64;
    let hess: f64 = (0..m).map(|i| w[i] * (hrr[i] * hrr[i] + n1 * hsph[i] * hsph[i])).sum();
    let sup = u.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    Ok(FieldNorms {
        l2: l2sq.sqrt(),
        h1: (l2sq + grad).sqrt(),
        h2: (l2sq + grad + hess).sqrt(),
        sup,
    })
}

/// Norms of an invariant symmetric 2-tensor with orthonormal components
/// `(a, b)`; pointwise `|h|^2 = a^2 + (n-1) b^2`.
pub fn tensor_norms(a: &[f64], b: &[f64], geom: &Geometry, weight: Option<&[f64]>) -> Result<FieldNorms> {
    let m = geom.cells;
    for len in [a.len(), b.len()] {
        if len != m {
            return Err(LabError::GridMismatch { expected: m, found: len });
        }
    }
    let n1 = (geom.dim - 1) as f64;
    let w: Vec<f64> = match weight {
        Some(f) => geom.mass.iter().zip(f).map(|(m, f)| m * (-f).exp()).collect(),
        None => geom.mass.clone(),
    };
    let fd = face_density(weight, m);
    let l2sq: f64 = (0..m).map(|i| w[i] * (a[i] * a[i] + n1 * b[i] * b[i])).sum();
    let grad = crate::stability::tensor_energy(geom, a, b, &w, &fd);
    let ax = stencil::d2(a, Parity::Even, geom.h);
    let bx = stencil::d2(b, Parity::Even, geom.h);
    let hess: f64 = (0..m)
        .map(|i| {
            let q2 = geom.lapse[i] * geom.lapse[i];
            w[i] * ((ax[i] / q2).powi(2) + n1 * (bx[i] / q2).powi(2))
        })
        .sum();
    let sup = (0..m).fold(0.0_f64, |s, i| s.max((a[i] * a[i] + n1 * b[i] * b[i]).sqrt()));
    Ok(FieldNorms {
        l2: l2sq.sqrt(),
        h1: (l2sq + grad).sqrt(),
        h2: (l2sq + grad + hess).sqrt(),
        sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WarpedProfile;
    use std::f64::consts::PI;

    fn sphere(n: usize, m: usize) -> (WarpedProfile, Geometry) {
        let p = WarpedProfile::unit_sphere(n, m).unwrap();
        let g = Geometry::new(&p).unwrap();
        (p, g)
    }

    #[test]
    fn sphere_volumes_from_quadrature() {
        let (_, g2) = sphere(2, 400);
        assert!((g2.volume() - 4.0 * PI).abs() < 1e-4);
        let (_, g3) = sphere(3, 400);
        assert!((g3.volume() - 2.0 * PI * PI).abs() < 1e-3);
    }

    #[test]
    fn affine_functions_of_cos_integrate_exactly() {
        for n in [2, 3] {
            let (p, g) = sphere(n, 400);
            let q = Quadrature::volume(&g);
            let u = ScalarProfile::from_fn(&p, |r| 0.7 - 1.3 * r.cos());
            let exact = 0.7 * crate::geometry::unit_sphere_volume(n);
            let got = integrate(&u, &q).unwrap();
            assert!((got - exact).abs() < 1e-10, "n={n}: {got} vs {exact}");
        }
    }

    #[test]
    fn odd_integrand_vanishes() {
        let (p, g) = sphere(2, 400);
        let u = ScalarProfile::from_fn(&p, f64::cos);
        assert!(integrate(&u, &Quadrature::volume(&g)).unwrap().abs() < 1e-8);
    }

    #[test]
    fn l2_norm_of_cos_on_two_sphere() {
        let (p, g) = sphere(2, 400);
        let u = ScalarProfile::from_fn(&p, f64::cos);
        let nr = norms(&u, &g, None).unwrap();
        assert!((nr.l2 * nr.l2 - 4.0 * PI / 3.0).abs() < 1e-4);
        // |grad cos|^2 = sin^2 integrates to 8 pi / 3
        assert!((nr.h1 * nr.h1 - 4.0 * PI).abs() < 1e-4);
    }

    #[test]
    fn norms_are_homogeneous_and_vanish_on_zero() {
        let (p, g) = sphere(3, 64);
        let zero = ScalarProfile::constant(64, 0.0);
        let z = norms(&zero, &g, None).unwrap();
        assert_eq!((z.l2, z.h1, z.h2, z.sup), (0.0, 0.0, 0.0, 0.0));
        let u = ScalarProfile::from_fn(&p, |r| (2.0 * r).cos() + 0.3);
        let u2 = ScalarProfile::even(u.values.iter().map(|v| 2.0 * v).collect());
        let a = norms(&u, &g, Some(&u)).unwrap();
        let b = norms(&u2, &g, Some(&u)).unwrap();
        assert_eq!(b.l2, 2.0 * a.l2);
        assert_eq!(b.sup, 2.0 * a.sup);
        assert!((b.h2 - 2.0 * a.h2).abs() <= 1e-15 * b.h2);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let (_, g) = sphere(2, 32);
        let u = ScalarProfile::constant(31, 1.0);
        assert!(matches!(integrate(&u, &Quadrature::volume(&g)), Err(LabError::GridMismatch { .. })));
    }
}
