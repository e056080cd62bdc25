//! Infinitesimal solitonic deformations at an Einstein certificate: the
//! conformal branch `mu v g + Hess v` with `Delta v = 2 mu v`, and invariant
//! TT-tensors in the kernel of the Einstein operator `Delta - 2 R`.

use super::calculus::WeightedCalculus;
use super::operator::InvariantSymTensor;
use crate::entropy::{generalized_eigen, EntropyCertificate};
use crate::error::{LabError, Result};
use crate::geometry::{Geometry, WarpedProfile};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Eigenvalue window for `Delta v = 2 mu v`.
pub const EIGEN_TOL: f64 = 1e-6;
/// A conformal candidate is zero when `sup |h| < ZERO_TOL * sup |v|`.
pub const ZERO_TOL: f64 = 1e-6;
/// Kernel threshold for the Einstein operator on TT-tensors.
pub const KERNEL_TOL: f64 = 1e-6;

/// One eigenfunction of the conformal branch and what became of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalMode {
    pub eigenvalue: f64,
    /// `sup |mu v g + Hess v| / sup |v|`.
    pub relative_size: f64,
    pub discarded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsdReport {
    pub mu: f64,
    /// Laplace eigenvalues within `EIGEN_TOL` of `2 mu`.
    pub conformal_modes: Vec<ConformalMode>,
    /// Closest Laplace eigenvalue to `2 mu`, whether or not it qualified.
    pub nearest_eigenvalue: f64,
    /// Dimension of the discrete invariant TT space.
    pub tt_dimension: usize,
    /// Einstein-operator eigenvalues on invariant TT-tensors within `KERNEL_TOL` of 0.
    pub einstein_kernel: Vec<f64>,
    pub candidates: Vec<InvariantSymTensor>,
}

impl IsdReport {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

fn sup(u: &[f64]) -> f64 {
    u.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// ISD candidates in the invariant sector of an Einstein certificate
/// (`f` constant, `mu = 1 / (2 tau)`).
pub fn isd_candidates(profile: &WarpedProfile, cert: &EntropyCertificate) -> Result<IsdReport> {
    let geom = Geometry::new(profile)?;
    if cert.f.len() != geom.cells {
        return Err(LabError::GridMismatch { expected: geom.cells, found: cert.f.len() });
    }
    let (lo, hi) = cert.f.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if hi - lo > 1e-8 {
        return Err(LabError::NotIsdGenerator(format!("f is not constant (spread {:.2e})", hi - lo)));
    }
    let m = geom.cells;
    let n = geom.dim as f64;
    let mu = 0.5 / cert.tau;
    let calc = WeightedCalculus::unweighted(geom.clone());

    let (vals, vecs) = generalized_eigen(&calc.function_energy().to_dense(), &geom.mass, None)?;
    let nearest = vals.iter().copied().min_by(|a, b| (a - 2.0 * mu).abs().total_cmp(&(b - 2.0 * mu).abs())).unwrap_or(f64::NAN);
    let mut conformal_modes = Vec::new();
    let mut candidates = Vec::new();
    for (k, &lam) in vals.iter().enumerate() {
        if (lam - 2.0 * mu).abs() >= EIGEN_TOL * (2.0 * mu).max(1.0) {
            continue;
        }
        let v: Vec<f64> = vecs.column(k).iter().copied().collect();
        let (ha, hb) = geom.hessian(&v);
        let a: Vec<f64> = (0..m).map(|i| mu * v[i] + ha[i]).collect();
        let b: Vec<f64> = (0..m).map(|i| mu * v[i] + hb[i]).collect();
        let relative_size = sup(&a).max(sup(&b)) / sup(&v);
        let discarded = relative_size < ZERO_TOL;
        if !discarded {
            candidates.push(InvariantSymTensor::warped(a, b));
        }
        conformal_modes.push(ConformalMode { eigenvalue: lam, relative_size, discarded });
    }

    // invariant TT-tensors: a = -(n - 1) b and delta h = 0, parametrized by b.
    // Smoothness at a pole needs a = b there, so b vanishes at both poles;
    // without those rows the singular solution b ~ phi^{-n} survives.
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut cols = vec![vec![0.0; m]; m + 1];
    let mut e = vec![0.0; m];
    for j in 0..m {
        e[j] = 1.0;
        let a: Vec<f64> = e.iter().map(|b| -(n - 1.0) * b).collect();
        for (r, val) in calc.div_tensor(&a, &e).into_iter().enumerate() {
            cols[r][j] = val;
        }
        e[j] = 0.0;
    }
    rows.extend(cols.into_iter().skip(1).take(m - 1));
    for pole in [0, m - 1] {
        let inner = if pole == 0 { 1 } else { m - 2 };
        let mut r = vec![0.0; m];
        // even extrapolation of b to the pole face
        r[pole] = 9.0 / 8.0;
        r[inner] = -1.0 / 8.0;
        rows.push(r);
    }
    let mut div = DMatrix::zeros(rows.len(), m);
    for (i, r) in rows.iter().enumerate() {
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in 0..m {
            div[(i, j)] = r[j] / norm;
        }
    }
    let svd = div.svd(false, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, s| a.max(*s));
    let vt = svd.v_t.ok_or_else(|| LabError::LinearAlgebra("SVD without right singular vectors".into()))?;
    let null: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] < 1e-8 * smax).collect();
    let mut einstein_kernel = Vec::new();
    if !null.is_empty() {
        // Einstein operator Delta - 2R on the TT basis, as a generalized eigenproblem
        let lift = |j: usize| -> (Vec<f64>, Vec<f64>) {
            let b: Vec<f64> = vt.row(null[j]).iter().copied().collect();
            (b.iter().map(|x| -(n - 1.0) * x).collect(), b)
        };
        let basis: Vec<(Vec<f64>, Vec<f64>)> = (0..null.len()).map(lift).collect();
        let energy = calc.tensor_energy_matrix();
        let gram = calc.tensor_gram();
        let d = basis.len();
        let stacked = |h: &(Vec<f64>, Vec<f64>)| -> Vec<f64> { h.0.iter().chain(&h.1).copied().collect() };
        let mut stiff = DMatrix::zeros(d, d);
        let mut mass = DMatrix::zeros(d, d);
        for p in 0..d {
            let x = stacked(&basis[p]);
            let (ra, rb) = calc.curvature_action(&basis[p].0, &basis[p].1);
            let rx: Vec<f64> = ra.iter().chain(&rb).copied().collect();
            for q in 0..d {
                let y = stacked(&basis[q]);
                let mut s = 0.0;
                for i in 0..2 * m {
                    for j in 0..2 * m {
                        s += y[i] * energy[(i, j)] * x[j];
                    }
                }
                let r: f64 = (0..2 * m).map(|i| gram[i] * y[i] * rx[i]).sum();
                let g: f64 = (0..2 * m).map(|i| gram[i] * y[i] * x[i]).sum();
                stiff[(q, p)] = s - 2.0 * r;
                mass[(q, p)] = g;
            }
        }
        let chol = mass.cholesky().ok_or_else(|| LabError::LinearAlgebra("TT Gram matrix not positive".into()))?;
        let l = chol.l();
        let linv = l.clone().try_inverse().ok_or_else(|| LabError::LinearAlgebra("singular TT Gram factor".into()))?;
        let sym = &linv * ((&stiff + stiff.transpose()) * 0.5) * linv.transpose();
        let eig = SymmetricEigen::new(sym);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam.abs() < KERNEL_TOL {
                einstein_kernel.push(lam);
                let coeff = linv.transpose() * eig.eigenvectors.column(k);
                let mut a = vec![0.0; m];
                let mut b = vec![0.0; m];
                for (p, (ba, bb)) in basis.iter().enumerate() {
                    for i in 0..m {
                        a[i] += coeff[p] * ba[i];
                        b[i] += coeff[p] * bb[i];
                    }
                }
                candidates.push(InvariantSymTensor::warped(a, b));
            }
        }
    }
    Ok(IsdReport { mu, conformal_modes, nearest_eigenvalue: nearest, tt_dimension: null.len(), einstein_kernel, candidates })
}
