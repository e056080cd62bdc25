//! Second variation of the shrinker entropy at a warped soliton.
//!
//! Operators are assembled as dense stiffness matrices `S` over the `2M`
//! tensor unknowns `(a_0..a_M, b_0..b_M)`, so that `<N h, k>_w = k' S h` and
//! `N = G^{-1} S` with `G` the diagonal tensor Gram matrix.

use super::calculus::WeightedCalculus;
use crate::entropy::{generalized_eigen, EntropyCertificate};
use crate::error::{LabError, Result};
use crate::geometry::{Geometry, ScalarProfile, WarpedProfile};
use crate::linalg::BandMatrix;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Soliton residual above which the second variation is refused.
pub const SOLITON_GATE: f64 = 1e-6;
/// Eigenvalues with `|lambda|` below this count as kernel.
pub const NEUTRAL_THRESHOLD: f64 = 1e-6;

/// Invariant symmetric 2-tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantSymTensor {
    /// `h = a ds^2 + b phi^2 g_S` in orthonormal components.
    Warped { a: Vec<f64>, b: Vec<f64> },
    /// `h = sum c_i g_i` on a product of Einstein factors.
    Homogeneous { c: Vec<f64> },
}

impl InvariantSymTensor {
    pub fn warped(a: Vec<f64>, b: Vec<f64>) -> Self {
        Self::Warped { a, b }
    }

    /// Components of a warped tensor, or an error for the other backend.
    pub fn components(&self) -> Result<(&[f64], &[f64])> {
        match self {
            Self::Warped { a, b } => Ok((a, b)),
            Self::Homogeneous { .. } => Err(LabError::InvalidArgument("expected a warped tensor".into())),
        }
    }

    fn stacked(&self) -> Result<DVector<f64>> {
        let (a, b) = self.components()?;
        Ok(DVector::from_iterator(a.len() + b.len(), a.iter().chain(b).copied()))
    }

    fn from_stacked(x: &DVector<f64>) -> Self {
        let m = x.len() / 2;
        Self::Warped { a: x.rows(0, m).iter().copied().collect(), b: x.rows(m, m).iter().copied().collect() }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::Warped { a, b } => a.iter().chain(b).all(|v| v.is_finite()),
            Self::Homogeneous { c } => c.iter().all(|v| v.is_finite()),
        }
    }
}

/// Weighted `L2` norm of `tau (Ric + Hess f) - g/2` in the probability
/// measure `(4 pi tau)^{-n/2} e^{-f} dV`.
pub fn soliton_residual(profile: &WarpedProfile, cert: &EntropyCertificate) -> Result<f64> {
    let geom = Geometry::new(profile)?;
    let (a, b) = soliton_defect(&geom, cert)?;
    let n1 = (geom.dim - 1) as f64;
    let norm = (4.0 * PI * cert.tau).powf(-0.5 * geom.dim as f64);
    let s: f64 = (0..geom.cells)
        .map(|i| geom.mass[i] * (-cert.f.values[i]).exp() * (a[i] * a[i] + n1 * b[i] * b[i]))
        .sum();
    Ok((norm * s).sqrt())
}

/// Pointwise components of `tau (Ric + Hess f) - g/2`.
pub fn soliton_defect(geom: &Geometry, cert: &EntropyCertificate) -> Result<(Vec<f64>, Vec<f64>)> {
    if cert.f.len() != geom.cells {
        return Err(LabError::GridMismatch { expected: geom.cells, found: cert.f.len() });
    }
    let (fa, fb) = geom.hessian(&cert.f.values);
    let c = &geom.curvature;
    let a = (0..geom.cells).map(|i| cert.tau * (c.ric_rr[i] + fa[i]) - 0.5).collect();
    let b = (0..geom.cells).map(|i| cert.tau * (c.ric_sph[i] + fb[i]) - 0.5).collect();
    Ok((a, b))
}

/// Dense operator with its Gram matrix: `<A h, k>_w = k' stiffness h`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub stiffness: DMatrix<f64>,
    /// Diagonal of the weighted Gram matrix.
    pub gram: Vec<f64>,
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        self.gram.len()
    }

    pub fn apply(&self, h: &InvariantSymTensor) -> Result<InvariantSymTensor> {
        let x = h.stacked()?;
        self.check(x.len())?;
        let mut y = &self.stiffness * x;
        for (v, g) in y.iter_mut().zip(&self.gram) {
            *v /= g;
        }
        Ok(InvariantSymTensor::from_stacked(&y))
    }

    /// `<A h, k>_w`.
    pub fn bilinear(&self, h: &InvariantSymTensor, k: &InvariantSymTensor) -> Result<f64> {
        let (x, y) = (h.stacked()?, k.stacked()?);
        self.check(x.len())?;
        self.check(y.len())?;
        Ok(y.dot(&(&self.stiffness * x)))
    }

    /// `max |S - S'| / max |S|`.
    pub fn asymmetry(&self) -> f64 {
        let s = &self.stiffness;
        let scale = s.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        (s - s.transpose()).iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(LabError::GridMismatch { expected: self.dim(), found: len });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    LinearlyStable,
    NeutrallyLinearlyStable,
    LinearlyUnstable,
}

impl Classification {
    pub fn from_spectrum(top: Option<f64>, threshold: f64) -> Self {
        match top {
            Some(t) if t > threshold => Self::LinearlyUnstable,
            Some(t) if t >= -threshold => Self::NeutrallyLinearlyStable,
            _ => Self::LinearlyStable,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::LinearlyStable => "linearly stable",
            Self::NeutrallyLinearlyStable => "neutrally linearly stable",
            Self::LinearlyUnstable => "linearly unstable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Eigenvalues of `N` on `V`, descending.
    pub eigenvalues: Vec<f64>,
    /// Eigentensors of the leading eigenvalues.
    pub eigentensors: Vec<InvariantSymTensor>,
    pub classification: Classification,
    pub kernel_dim: usize,
}

impl SpectrumReport {
    pub fn from_eigenvalues(eigenvalues: Vec<f64>, eigentensors: Vec<InvariantSymTensor>) -> Self {
        let kernel_dim = eigenvalues.iter().filter(|v| v.abs() < NEUTRAL_THRESHOLD).count();
        let classification = Classification::from_spectrum(eigenvalues.first().copied(), NEUTRAL_THRESHOLD);
        Self { eigenvalues, eigentensors, classification, kernel_dim }
    }

    pub fn top(&self) -> Option<f64> {
        self.eigenvalues.first().copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Weighted operators of one soliton certificate.
#[derive(Debug, Clone)]
pub struct StabilityContext {
    pub calc: WeightedCalculus,
    pub tau: f64,
    /// Cell-to-face matrix of `d` on functions, `(M+1) x M`.
    grad: DMatrix<f64>,
    /// Face-to-tensor matrix of `sym nabla`, `2M x (M+1)`.
    gauge: DMatrix<f64>,
    gram: Vec<f64>,
}

impl StabilityContext {
    /// Weighted calculus for `f` without the soliton gate (first-order
    /// operators are defined for any weight).
    pub fn weighted(profile: &WarpedProfile, cert: &EntropyCertificate) -> Result<Self> {
        let geom = Geometry::new(profile)?;
        if cert.f.len() != geom.cells {
            return Err(LabError::GridMismatch { expected: geom.cells, found: cert.f.len() });
        }
        let calc = WeightedCalculus::new(geom, &cert.f.values);
        let m = calc.cells();
        let mut grad = DMatrix::zeros(m + 1, m);
        let mut e = vec![0.0; m];
        for j in 0..m {
            e[j] = 1.0;
            for (k, v) in calc.grad(&e).into_iter().enumerate() {
                grad[(k, j)] = v;
            }
            e[j] = 0.0;
        }
        let mut gauge = DMatrix::zeros(2 * m, m + 1);
        let mut w = vec![0.0; m + 1];
        for k in 1..m {
            w[k] = 1.0;
            let (a, b) = calc.gauge(&w);
            for i in 0..m {
                gauge[(i, k)] = a[i];
                gauge[(m + i, k)] = b[i];
            }
            w[k] = 0.0;
        }
        let gram = calc.tensor_gram();
        Ok(Self { calc, tau: cert.tau, grad, gauge, gram })
    }

    /// Context at a soliton; refuses certificates off the soliton.
    pub fn new(profile: &WarpedProfile, cert: &EntropyCertificate) -> Result<Self> {
        let residual = soliton_residual(profile, cert)?;
        if !(residual < SOLITON_GATE) {
            return Err(LabError::NotASoliton { residual });
        }
        Self::weighted(profile, cert)
    }

    pub fn cells(&self) -> usize {
        self.calc.cells()
    }

    fn check(&self, h: &InvariantSymTensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let (a, b) = h.components()?;
        let m = self.cells();
        for len in [a.len(), b.len()] {
            if len != m {
                return Err(LabError::GridMismatch { expected: m, found: len });
            }
        }
        Ok((a.to_vec(), b.to_vec()))
    }

    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub fn inner(&self, h: &InvariantSymTensor, k: &InvariantSymTensor) -> Result<f64> {
        let (a, b) = self.check(h)?;
        let (c, d) = self.check(k)?;
        Ok(self.calc.inner_tensor((&a, &b), (&c, &d)))
    }

    /// `Delta_f h` (non-negative rough Laplacian).
    pub fn weighted_laplacian(&self, h: &InvariantSymTensor) -> Result<InvariantSymTensor> {
        let (a, b) = self.check(h)?;
        let (x, y) = self.calc.laplacian_tensor(&a, &b);
        Ok(InvariantSymTensor::warped(x, y))
    }

    /// `delta_f h`, a radial 1-form on the faces.
    pub fn weighted_div(&self, h: &InvariantSymTensor) -> Result<Vec<f64>> {
        let (a, b) = self.check(h)?;
        Ok(self.calc.div_tensor(&a, &b))
    }

    /// `delta_f^* w = sym(nabla w)`.
    pub fn weighted_div_adjoint(&self, form: &[f64]) -> Result<InvariantSymTensor> {
        if form.len() != self.cells() + 1 {
            return Err(LabError::GridMismatch { expected: self.cells() + 1, found: form.len() });
        }
        let (a, b) = self.calc.gauge(form);
        Ok(InvariantSymTensor::warped(a, b))
    }

    /// `W (-Delta_f + 1/(2 tau))` on functions, with the compact Laplacian.
    fn vh_matrix(&self) -> BandMatrix {
        let m = self.cells();
        let k = self.calc.compact_energy();
        let c = 0.5 / self.tau;
        let mut out = BandMatrix::zeros(m, 1, 1);
        for i in 0..m {
            for j in i.saturating_sub(1)..=(i + 1).min(m - 1) {
                out.set(i, j, -k.get(i, j));
            }
            out.add(i, i, c * self.calc.w[i]);
        }
        out
    }

    /// Eigenvalue of the compact `Delta_f` closest to `1/(2 tau)`.
    fn resonance(&self) -> Result<(f64, f64)> {
        let (vals, _) = generalized_eigen(&self.calc.compact_energy().to_dense(), &self.calc.w, None)?;
        let c = 0.5 / self.tau;
        let near = vals.iter().copied().min_by(|a, b| (a - c).abs().total_cmp(&(b - c).abs())).unwrap_or(f64::NAN);
        Ok((near, (near - c).abs()))
    }

    /// `v_h` solving `(-Delta_f + 1/(2 tau)) v = delta_f delta_f h`.
    pub fn solve_vh(&self, h: &InvariantSymTensor) -> Result<ScalarProfile> {
        let (a, b) = self.check(h)?;
        let (near, gap) = self.resonance()?;
        if gap < 1e-8 {
            return Err(LabError::Resonant { eigenvalue: near, gap });
        }
        let rhs = self.calc.div_form(&self.calc.div_tensor(&a, &b));
        let wr: Vec<f64> = rhs.iter().zip(&self.calc.w).map(|(r, w)| r * w).collect();
        Ok(ScalarProfile::even(self.vh_matrix().solve(&wr)?))
    }

    /// Hessian of a function through the staggered gradient.
    pub fn hessian(&self, v: &[f64]) -> InvariantSymTensor {
        let (a, b) = self.calc.hessian(v);
        InvariantSymTensor::warped(a, b)
    }

    fn reduced_stiffness(&self) -> DMatrix<f64> {
        let m = self.cells();
        let mut s = self.calc.tensor_energy_matrix() * -0.5;
        let c = &self.calc.geom.curvature;
        let n1 = (self.calc.dim() - 1) as f64;
        let n2 = n1 - 1.0;
        for i in 0..m {
            let w = self.calc.w[i];
            // <R h, k> = w [(n-1) K_rad (a' b + b' a) + (n-1)(n-2) K_sph b b']
            s[(i, m + i)] += w * n1 * c.k_rad[i];
            s[(m + i, i)] += w * n1 * c.k_rad[i];
            s[(m + i, m + i)] += w * n1 * n2 * c.k_sph[i];
        }
        s
    }

    /// `-1/2 Delta_f + R`, the form of `N` on `V`.
    pub fn assemble_n_reduced(&self) -> OperatorMatrix {
        OperatorMatrix { stiffness: self.reduced_stiffness(), gram: self.gram.clone() }
    }

    /// Full second-variation operator
    /// `N h = -1/2 Delta_f h + R h + delta* delta h + 1/2 Hess v_h - Ric <Ric, h> / int scal`.
    pub fn assemble_n_full(&self) -> Result<OperatorMatrix> {
        let m = self.cells();
        let (near, gap) = self.resonance()?;
        if gap < 1e-8 {
            return Err(LabError::Resonant { eigenvalue: near, gap });
        }
        let mut s = self.reduced_stiffness();
        let gd = DMatrix::from_fn(2 * m, m + 1, |i, k| self.gram[i] * self.gauge[(i, k)]);
        // G D W_f^{-1} D' G
        let mut inv_form = DMatrix::zeros(m + 1, m + 1);
        for k in 1..m {
            inv_form[(k, k)] = 1.0 / self.calc.form_w[k];
        }
        s += &gd * &inv_form * gd.transpose();
        // 1/2 G H B^{-1} H' G with H = gauge . grad and B = W (-Delta_f + 1/(2 tau))
        let gh = &gd * &self.grad;
        let b = self.vh_matrix().to_dense();
        let lu = b.lu();
        let sol = lu
            .solve(&gh.transpose())
            .ok_or_else(|| LabError::LinearAlgebra("v_h system is singular".into()))?;
        s += (&gh * sol) * 0.5;
        // Ric projection
        let (rr, rs) = self.calc.ricci();
        let ric = DVector::from_iterator(2 * m, rr.iter().chain(&rs).copied());
        let gr = DVector::from_iterator(2 * m, (0..2 * m).map(|i| self.gram[i] * ric[i]));
        let z: f64 = (0..m).map(|i| self.calc.w[i] * self.calc.geom.curvature.scal[i]).sum();
        s -= (&gr * gr.transpose()) / z;
        Ok(OperatorMatrix { stiffness: s, gram: self.gram.clone() })
    }

    /// Rows of the constraints defining `V`: `delta_f h = 0` on interior faces
    /// and `<Ric, h>_w = 0`.
    fn constraints(&self) -> DMatrix<f64> {
        let m = self.cells();
        let (rr, rs) = self.calc.ricci();
        DMatrix::from_fn(m, 2 * m, |r, j| {
            if r + 1 < m {
                self.gauge[(j, r + 1)] * self.gram[j]
            } else {
                let ric = if j < m { rr[j] } else { rs[j - m] };
                ric * self.gram[j]
            }
        })
    }

    /// Weighted-orthogonal projection onto `V`.
    pub fn project_v(&self, h: &InvariantSymTensor) -> Result<InvariantSymTensor> {
        let x = h.stacked()?;
        let m = self.cells();
        if x.len() != 2 * m {
            return Err(LabError::GridMismatch { expected: 2 * m, found: x.len() });
        }
        let c = self.constraints();
        let ginv = DVector::from_iterator(2 * m, self.gram.iter().map(|g| 1.0 / g));
        let cg = DMatrix::from_fn(m, 2 * m, |r, j| c[(r, j)] * ginv[j]);
        let normal = &cg * c.transpose();
        let lam = normal
            .lu()
            .solve(&(&c * &x))
            .ok_or_else(|| LabError::LinearAlgebra("singular constraint system".into()))?;
        let y = x - cg.transpose() * lam;
        Ok(InvariantSymTensor::from_stacked(&y))
    }

    /// Orthonormal basis of `V` in the scaled variables `G^{1/2} h`.
    fn v_basis(&self) -> Result<DMatrix<f64>> {
        let m = self.cells();
        let c = self.constraints();
        let is: Vec<f64> = self.gram.iter().map(|g| 1.0 / g.sqrt()).collect();
        let cs = DMatrix::from_fn(m, 2 * m, |r, j| c[(r, j)] * is[j]);
        // null space of cs from the eigenvectors of cs' cs with zero eigenvalue
        let eig = SymmetricEigen::new(cs.transpose() * &cs);
        let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut cols: Vec<usize> = (0..2 * m).collect();
        cols.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let rank = cs.clone().svd(false, false).singular_values.iter().filter(|s| **s > 1e-10 * scale.sqrt()).count();
        let keep = 2 * m - rank;
        Ok(DMatrix::from_fn(2 * m, keep, |r, c| eig.eigenvectors[(r, cols[c])]))
    }

    /// Spectrum of `N` on `V`; `keep` leading eigentensors are returned.
    pub fn spectrum_on_v(&self, keep: usize) -> Result<SpectrumReport> {
        let q = self.v_basis()?;
        let is = DVector::from_iterator(self.gram.len(), self.gram.iter().map(|g| 1.0 / g.sqrt()));
        let s = self.reduced_stiffness();
        let scaled = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] * is[i] * is[j]);
        let red = q.transpose() * scaled * &q;
        let red = (&red + red.transpose()) * 0.5;
        let eig = SymmetricEigen::new(red);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let tensors = order
            .iter()
            .take(keep)
            .map(|&c| {
                let y = &q * eig.eigenvectors.column(c);
                let x = DVector::from_iterator(y.len(), y.iter().zip(is.iter()).map(|(a, b)| a * b));
                InvariantSymTensor::from_stacked(&x)
            })
            .collect();
        Ok(SpectrumReport::from_eigenvalues(values, tensors))
    }
}

/// `delta_f h`.
pub fn weighted_div(profile: &WarpedProfile, cert: &EntropyCertificate, h: &InvariantSymTensor) -> Result<Vec<f64>> {
    StabilityContext::weighted(profile, cert)?.weighted_div(h)
}

/// `delta_f^* w`.
pub fn weighted_div_adjoint(profile: &WarpedProfile, cert: &EntropyCertificate, form: &[f64]) -> Result<InvariantSymTensor> {
    StabilityContext::weighted(profile, cert)?.weighted_div_adjoint(form)
}

/// `Delta_f h`.
pub fn weighted_laplacian(profile: &WarpedProfile, cert: &EntropyCertificate, h: &InvariantSymTensor) -> Result<InvariantSymTensor> {
    StabilityContext::weighted(profile, cert)?.weighted_laplacian(h)
}

pub fn solve_vh(profile: &WarpedProfile, cert: &EntropyCertificate, h: &InvariantSymTensor) -> Result<ScalarProfile> {
    StabilityContext::new(profile, cert)?.solve_vh(h)
}

pub fn assemble_n_full(profile: &WarpedProfile, cert: &EntropyCertificate) -> Result<OperatorMatrix> {
    StabilityContext::new(profile, cert)?.assemble_n_full()
}

pub fn project_v(profile: &WarpedProfile, cert: &EntropyCertificate, h: &InvariantSymTensor) -> Result<InvariantSymTensor> {
    StabilityContext::new(profile, cert)?.project_v(h)
}

pub fn spectrum_on_v(profile: &WarpedProfile, cert: &EntropyCertificate) -> Result<SpectrumReport> {
    StabilityContext::new(profile, cert)?.spectrum_on_v(8)
}
