//! Rotationally symmetric metrics on `S^n` and the calculus built on them.
//!
//! A [`WarpedProfile`] describes `g = q(x)^2 dx^2 + phi(x)^2 g_{S^{n-1}}` on
//! `x in [0, L]`, sampled at the `M` cell centres of a uniform grid. With
//! `q == 1` the coordinate is arc length and the metric is the classical
//! warped product `dr^2 + phi(r)^2 g_{S^{n-1}}`; a non-constant lapse `q`
//! encodes a quasi-uniform arc-length grid and lets every invariant
//! perturbation `g + t h` be represented without reparametrizing.

mod curvature;
pub mod io;
mod quadrature;
pub mod stencil;

pub use curvature::{curvature, CurvaturePack, Geometry};
pub use quadrature::{integrate, norms, tensor_norms, FieldNorms, Quadrature};
pub use stencil::Parity;

use crate::error::{LabError, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Minimum number of cells accepted by the curvature routines.
pub const MIN_CELLS: usize = 16;

/// Largest allowed ratio between the longest and shortest arc-length cell.
pub const MAX_SPACING_RATIO: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpedProfile {
    dim: usize,
    length: f64,
    phi: Vec<f64>,
    lapse: Vec<f64>,
}

impl WarpedProfile {
    pub fn new(dim: usize, length: f64, phi: Vec<f64>, lapse: Vec<f64>) -> Result<Self> {
        let p = Self { dim, length, phi, lapse };
        p.validate()?;
        Ok(p)
    }

    /// Arc-length profile sampled from a closed-form warping function.
    pub fn from_fn(dim: usize, cells: usize, length: f64, phi: impl Fn(f64) -> f64) -> Result<Self> {
        let h = length / cells as f64;
        let samples = (0..cells).map(|i| phi((i as f64 + 0.5) * h)).collect();
        Self::new(dim, length, samples, vec![1.0; cells])
    }

    /// Round sphere of the given radius: `phi(r) = c sin(r / c)` on `[0, c pi]`.
    pub fn round(dim: usize, cells: usize, radius: f64) -> Result<Self> {
        // sample from the nearer pole so both ends carry the same rounding
        let h = PI / cells as f64;
        let phi = (0..cells)
            .map(|i| radius * ((i.min(cells - 1 - i) as f64 + 0.5) * h).sin())
            .collect();
        Self::new(dim, radius * PI, phi, vec![1.0; cells])
    }

    /// Unit round sphere.
    pub fn unit_sphere(dim: usize, cells: usize) -> Result<Self> {
        Self::round(dim, cells, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.phi.len()
    }

    /// Parameter length `L` of the coordinate interval.
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.cells() as f64
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn lapse(&self) -> &[f64] {
        &self.lapse
    }

    pub fn is_arc_length(&self) -> bool {
        self.lapse.iter().all(|&q| q == 1.0)
    }

    /// Cell-centre coordinates.
    pub fn centres(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.cells()).map(|i| (i as f64 + 0.5) * h).collect()
    }

    /// Metric `g + t h` for an invariant tensor `h = a ds^2 + b phi^2 g_S`
    /// given in orthonormal components.
    pub fn perturbed(&self, a: &[f64], b: &[f64], t: f64) -> Result<Self> {
        self.check_len(a.len())?;
        self.check_len(b.len())?;
        let mut lapse = Vec::with_capacity(self.cells());
        let mut phi = Vec::with_capacity(self.cells());
        for i in 0..self.cells() {
            let sa = 1.0 + t * a[i];
            let sb = 1.0 + t * b[i];
            if sa <= 0.0 || sb <= 0.0 {
                return Err(LabError::DegenerateMetric(format!(
                    "perturbation leaves the cone of metrics at cell {i}"
                )));
            }
            lapse.push(self.lapse[i] * sa.sqrt());
            phi.push(self.phi[i] * sb.sqrt());
        }
        Self::new(self.dim, self.length, phi, lapse)
    }

    /// Homothety `alpha * g`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(LabError::InvalidArgument(format!("scale factor {alpha} must be positive")));
        }
        let s = alpha.sqrt();
        Self::new(
            self.dim,
            self.length,
            self.phi.iter().map(|p| p * s).collect(),
            self.lapse.iter().map(|q| q * s).collect(),
        )
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.cells() {
            return Err(LabError::GridMismatch { expected: self.cells(), found: len });
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(LabError::InvalidArgument(format!("dimension {} < 2", self.dim)));
        }
        if self.cells() < MIN_CELLS {
            return Err(LabError::Resolution { cells: self.cells(), min: MIN_CELLS });
        }
        self.check_len(self.lapse.len())?;
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(LabError::InvalidArgument(format!("length {} must be positive", self.length)));
        }
        if let Some(i) = self.phi.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(LabError::DegenerateMetric(format!(
                "warping function {} at cell {i} is not positive",
                self.phi[i]
            )));
        }
        if let Some(i) = self.lapse.iter().position(|q| !(q.is_finite() && *q > 0.0)) {
            return Err(LabError::DegenerateMetric(format!("lapse {} at cell {i} is not positive", self.lapse[i])));
        }
        let (lo, hi) = self
            .lapse
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &q| (lo.min(q), hi.max(q)));
        if hi / lo > MAX_SPACING_RATIO {
            return Err(LabError::DegenerateMetric(format!(
                "arc-length spacing ratio {:.3} exceeds {MAX_SPACING_RATIO}",
                hi / lo
            )));
        }
        Ok(())
    }
}

/// Rotation-invariant function `u(r)` sampled on the cell centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarProfile {
    pub values: Vec<f64>,
    pub parity: Parity,
}

impl ScalarProfile {
    pub fn even(values: Vec<f64>) -> Self {
        Self { values, parity: Parity::Even }
    }

    pub fn constant(cells: usize, c: f64) -> Self {
        Self::even(vec![c; cells])
    }

    pub fn from_fn(profile: &WarpedProfile, u: impl Fn(f64) -> f64) -> Self {
        Self::even(profile.centres().into_iter().map(u).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Volume of the unit round sphere `S^k`.
pub fn unit_sphere_volume(k: usize) -> f64 {
    // vol(S^k) = 2 pi^{(k+1)/2} / Gamma((k+1)/2)
    2.0 * PI.powf((k as f64 + 1.0) / 2.0) / half_integer_gamma(k + 1)
}

/// `Gamma(m / 2)` for a positive integer `m`.
pub fn half_integer_gamma(m: usize) -> f64 {
    assert!(m > 0);
    let (mut g, mut x) = if m % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    while x + 0.5 < m as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_volumes() {
        assert!((unit_sphere_volume(1) - 2.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_volume(2) - 4.0 * PI).abs() < 1e-13);
        assert!((unit_sphere_volume(3) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((unit_sphere_volume(4) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_profiles() {
        let mut phi = vec![1.0; 32];
        phi[5] = -0.1;
        assert!(matches!(
            WarpedProfile::new(2, 3.0, phi, vec![1.0; 32]),
            Err(LabError::DegenerateMetric(_))
        ));
        assert!(matches!(WarpedProfile::unit_sphere(2, 8), Err(LabError::Resolution { .. })));
        let mut lapse = vec![1.0; 32];
        lapse[3] = 20.0;
        assert!(WarpedProfile::new(2, 3.0, vec![1.0; 32], lapse).is_err());
    }

    #[test]
    fn perturbation_composes_with_scaling() {
        let p = WarpedProfile::unit_sphere(3, 32).unwrap();
        let a = vec![1.0; 32];
        let q = p.perturbed(&a, &a, 0.21).unwrap();
        let s = p.scaled(1.21).unwrap();
        for (x, y) in q.phi().iter().zip(s.phi()) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
