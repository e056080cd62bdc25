//! Diagonal metrics `g = sum x_i g_i` on products of positive Einstein factors.
//!
//! Everything here is closed form: with constant `f` the entropy is explicit,
//! the flows reduce to ODEs in the scales, and the stability operator acts on
//! the span of the factor metrics.

use crate::entropy::EntropyCertificate;
use crate::error::{LabError, Result};
use crate::geometry::{unit_sphere_volume, Parity, ScalarProfile};
use crate::stability::{Classification, NEUTRAL_THRESHOLD};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Closed Einstein manifold `(M_i, g_i)` with `Ric_i = einstein * g_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EinsteinFactor {
    pub dim: usize,
    pub einstein: f64,
    /// Volume of `(M_i, g_i)`.
    pub volume: f64,
}

impl EinsteinFactor {
    pub fn new(dim: usize, einstein: f64, volume: f64) -> Result<Self> {
        if dim < 2 {
            return Err(LabError::InvalidArgument(format!("factor dimension {dim} < 2")));
        }
        if !(einstein > 0.0 && einstein.is_finite()) {
            return Err(LabError::InvalidArgument(format!("Einstein constant must be positive, got {einstein}")));
        }
        if !(volume > 0.0 && volume.is_finite()) {
            return Err(LabError::InvalidArgument(format!("volume must be positive, got {volume}")));
        }
        Ok(Self { dim, einstein, volume })
    }

    /// Unit round sphere `S^k` (`Ric = (k - 1) g`).
    pub fn unit_sphere(k: usize) -> Result<Self> {
        Self::new(k, k as f64 - 1.0, unit_sphere_volume(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousMetric {
    pub factors: Vec<EinsteinFactor>,
    pub scales: Vec<f64>,
}

/// Which flow a velocity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// `-2 Ric + (2/n) avg(scal) g`.
    Normalized,
    /// `-2 Ric + g / tau_g`.
    Tau,
    /// `-2 (Ric + Hess f) + g / tau_g`.
    ModifiedTau,
}

/// Relative tolerance of the fixed-point test `x_i = 2 tau mu_i`.
pub const SOLITON_TOL: f64 = 1e-12;

impl HomogeneousMetric {
    pub fn new(factors: Vec<EinsteinFactor>, scales: Vec<f64>) -> Result<Self> {
        if factors.is_empty() {
            return Err(LabError::InvalidArgument("no factors".into()));
        }
        if factors.len() != scales.len() {
            return Err(LabError::GridMismatch { expected: factors.len(), found: scales.len() });
        }
        if let Some(x) = scales.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(LabError::DegenerateMetric(format!("scale {x} is not positive")));
        }
        Ok(Self { factors, scales })
    }

    /// Product of unit round spheres with unit scales.
    pub fn sphere_product(dims: &[usize]) -> Result<Self> {
        let factors = dims.iter().map(|&k| EinsteinFactor::unit_sphere(k)).collect::<Result<Vec<_>>>()?;
        let scales = vec![1.0; dims.len()];
        Self::new(factors, scales)
    }

    /// The soliton of the given factors at `tau`: `x_i = 2 tau mu_i`.
    pub fn soliton(factors: Vec<EinsteinFactor>, tau: f64) -> Result<Self> {
        let scales = factors.iter().map(|f| 2.0 * tau * f.einstein).collect();
        Self::new(factors, scales)
    }

    pub fn with_scales(&self, scales: Vec<f64>) -> Result<Self> {
        Self::new(self.factors.clone(), scales)
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim).sum()
    }

    pub fn scal(&self) -> f64 {
        self.factors.iter().zip(&self.scales).map(|(f, x)| f.dim as f64 * f.einstein / x).sum()
    }

    pub fn volume(&self) -> f64 {
        self.factors
            .iter()
            .zip(&self.scales)
            .map(|(f, x)| f.volume * x.powf(0.5 * f.dim as f64))
            .product()
    }

    /// Ricci eigenvalue `mu_i / x_i` on each factor.
    pub fn ricci(&self) -> Vec<f64> {
        self.factors.iter().zip(&self.scales).map(|(f, x)| f.einstein / x).collect()
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        self.with_scales(self.scales.iter().map(|x| alpha * x).collect())
    }

    /// `tau` of the equivariant entropy, `n / (2 scal)`.
    pub fn tau(&self) -> Result<f64> {
        let s = self.scal();
        if s <= 0.0 {
            return Err(LabError::EntropyUndefined(format!("scal = {s} <= 0")));
        }
        Ok(0.5 * self.dim() as f64 / s)
    }

    /// `max_i |x_i - 2 tau mu_i|`, relative to `max_i x_i`.
    pub fn soliton_defect(&self) -> Result<f64> {
        let tau = self.tau()?;
        let xmax = self.scales.iter().cloned().fold(0.0, f64::max);
        Ok(self
            .factors
            .iter()
            .zip(&self.scales)
            .map(|(f, x)| (x - 2.0 * tau * f.einstein).abs())
            .fold(0.0, f64::max)
            / xmax)
    }

    pub fn is_soliton(&self) -> bool {
        self.soliton_defect().map(|d| d < SOLITON_TOL).unwrap_or(false)
    }

    /// Weighted L2 norm of `tau (Ric + Hess f) - g/2` with constant `f`,
    /// in the probability measure `(4 pi tau)^{-n/2} e^{-f} dV`.
    pub fn soliton_residual(&self) -> Result<f64> {
        let tau = self.tau()?;
        Ok(self
            .factors
            .iter()
            .zip(self.ricci())
            .map(|(f, r)| f.dim as f64 * (tau * r - 0.5).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

/// Entropy restricted to constant `f`, in closed form.
pub fn equivariant_entropy(m: &HomogeneousMetric) -> Result<EntropyCertificate> {
    let n = m.dim() as f64;
    let scal = m.scal();
    let tau = m.tau()?;
    let vol = m.volume();
    let f = (vol / (4.0 * PI * tau).powf(0.5 * n)).ln();
    let nu = f - 0.5 * n;
    // Residuals of the two Euler-Lagrange equations and the constraint
    let el1 = (-tau * scal - f + n + nu).abs();
    let el2 = (f - 0.5 * n - nu).abs();
    let constraint = ((4.0 * PI * tau).powf(-0.5 * n) * (-f).exp() * vol - 1.0).abs();
    Ok(EntropyCertificate {
        f: ScalarProfile { values: vec![f], parity: Parity::Even },
        tau,
        nu,
        residual_el1: el1,
        residual_el2: el2,
        residual_constraint: constraint,
        iterations: 0,
        converged: true,
        start: "closed form".into(),
    })
}

/// Scale velocities `x_i'` of the chosen flow.
pub fn flow_rhs(m: &HomogeneousMetric, kind: FlowKind) -> Result<Vec<f64>> {
    let tau = m.tau()?;
    let n = m.dim() as f64;
    let scal = m.scal();
    Ok(m
        .factors
        .iter()
        .zip(&m.scales)
        .map(|(f, x)| match kind {
            FlowKind::Normalized => -2.0 * f.einstein + 2.0 / n * scal * x,
            // f is constant here, so the gauge term vanishes
            FlowKind::Tau | FlowKind::ModifiedTau => -2.0 * f.einstein + x / tau,
        })
        .collect())
}

/// Stability operator on `span{g_i}` intersected with `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousStability {
    pub tau: f64,
    /// Matrix of `N` in a weighted-orthonormal basis of `V`.
    pub matrix: Vec<Vec<f64>>,
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as pointwise coefficients `e_i` of `h = sum e_i (x_i g_i)`.
    pub eigenvectors: Vec<Vec<f64>>,
}

impl HomogeneousStability {
    pub fn classification(&self) -> Classification {
        Classification::from_spectrum(self.eigenvalues.first().copied(), NEUTRAL_THRESHOLD)
    }
}

fn require_soliton(m: &HomogeneousMetric) -> Result<f64> {
    let d = m.soliton_defect()?;
    if d >= SOLITON_TOL {
        return Err(LabError::NotASoliton { residual: m.soliton_residual()? });
    }
    m.tau()
}

/// Closed-form spectrum: `R h = h / (2 tau)` on parallel tensors at the
/// soliton, so `N|V` is `1/(2 tau)` with multiplicity `k - 1`.
pub fn stability_matrix(m: &HomogeneousMetric) -> Result<HomogeneousStability> {
    let tau = require_soliton(m)?;
    let basis = v_basis(m);
    let k = basis.len();
    let lam = 0.5 / tau;
    let matrix = (0..k).map(|i| (0..k).map(|j| if i == j { lam } else { 0.0 }).collect()).collect();
    Ok(HomogeneousStability { tau, matrix, eigenvalues: vec![lam; k], eigenvectors: basis })
}

/// Weighted-orthonormal basis of `V` in pointwise coefficients. The pairing
/// of parallel tensors is `sum n_i e_i e'_i` (the constant density drops).
fn v_basis(m: &HomogeneousMetric) -> Vec<Vec<f64>> {
    let dims: Vec<f64> = m.factors.iter().map(|f| f.dim as f64).collect();
    let ric = m.ricci();
    let k = dims.len();
    let inner = |a: &[f64], b: &[f64]| (0..k).map(|i| dims[i] * a[i] * b[i]).sum::<f64>();
    let mut basis: Vec<Vec<f64>> = vec![ric.clone()];
    for j in 0..k {
        let mut v = vec![0.0; k];
        v[j] = 1.0;
        for b in &basis {
            let c = inner(&v, b) / inner(b, b);
            for i in 0..k {
                v[i] -= c * b[i];
            }
        }
        let nv = inner(&v, &v);
        if nv > 1e-20 {
            basis.push(v);
        }
    }
    basis
        .into_iter()
        .skip(1)
        .map(|v| {
            let s = inner(&v, &v).sqrt();
            v.iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Spectrum through the general second-variation formula restricted to
/// parallel tensors: `N h = R h - Ric <Ric, h> / int scal` (the Laplacian,
/// divergence and `v_h` terms vanish), Galerkin-projected onto `V`.
pub fn stability_matrix_generic(m: &HomogeneousMetric) -> Result<HomogeneousStability> {
    let tau = require_soliton(m)?;
    let dims: Vec<f64> = m.factors.iter().map(|f| f.dim as f64).collect();
    let ric = m.ricci();
    let k = dims.len();
    let scal = m.scal();
    // N on span{g_i}, pointwise coefficients
    let mut full = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let rank_one = ric[i] * dims[j] * ric[j] / scal;
            full[(i, j)] = if i == j { ric[i] } else { 0.0 } - rank_one;
        }
    }
    let basis = v_basis(m);
    let b = basis.len();
    let mut red = DMatrix::zeros(b, b);
    for p in 0..b {
        for q in 0..b {
            let mut s = 0.0;
            for i in 0..k {
                let nh: f64 = (0..k).map(|j| full[(i, j)] * basis[q][j]).sum();
                s += dims[i] * basis[p][i] * nh;
            }
            red[(p, q)] = s;
        }
    }
    let sym = (&red + red.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = order
        .iter()
        .map(|&c| (0..k).map(|i| (0..b).map(|p| eig.eigenvectors[(p, c)] * basis[p][i]).sum()).collect())
        .collect();
    let matrix = (0..b).map(|p| (0..b).map(|q| sym[(p, q)]).collect()).collect();
    Ok(HomogeneousStability { tau, matrix, eigenvalues, eigenvectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_entropies() {
        let s2 = HomogeneousMetric::sphere_product(&[2]).unwrap();
        let c = equivariant_entropy(&s2).unwrap();
        assert!((c.tau - 0.5).abs() < 1e-15);
        assert!((c.nu - (2f64.ln() - 1.0)).abs() < 1e-14);
        let s3 = HomogeneousMetric::sphere_product(&[3]).unwrap();
        let c = equivariant_entropy(&s3).unwrap();
        assert!((c.tau - 0.25).abs() < 1e-15);
        assert!((c.nu - (2f64.ln() + 0.5 * PI.ln() - 1.5)).abs() < 1e-14);
        let p = HomogeneousMetric::sphere_product(&[2, 2]).unwrap();
        let c = equivariant_entropy(&p).unwrap();
        assert!((c.nu - (2.0 * 2f64.ln() - 2.0)).abs() < 1e-14);
        assert!(c.max_residual() < 1e-14);
    }

    #[test]
    fn product_soliton_is_unstable() {
        let p = HomogeneousMetric::sphere_product(&[2, 2]).unwrap();
        let s = stability_matrix(&p).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0]);
        let g = stability_matrix_generic(&p).unwrap();
        assert!((g.eigenvalues[0] - 1.0).abs() < 1e-12);
        let e = &g.eigenvectors[0];
        assert!((e[0] + e[1]).abs() < 1e-12);
    }

    #[test]
    fn off_soliton_is_refused() {
        let p = HomogeneousMetric::sphere_product(&[2, 2]).unwrap().with_scales(vec![1.1, 1.0]).unwrap();
        assert!(matches!(stability_matrix(&p), Err(LabError::NotASoliton { .. })));
    }
}
