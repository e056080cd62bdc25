//! Shrinker entropy on the warped backend.
//!
//! The solver works with `u = w / (4 pi tau)^{n/4}`, `w^2 = e^{-f}`, so the
//! constraint reads `sum m_i u_i^2 = 1` and
//!
//! ```text
//! W = tau (4 u'Ku + sum m scal u^2) - sum m u^2 log u^2 - n/2 log(4 pi tau) - n
//! ```
//!
//! with `K` the Dirichlet energy matrix. The gradient term of `W` in the
//! `f` form is discretized through the same energy, `int |grad f|^2 e^{-f}
//! = 4 int |grad w|^2`, so both forms agree to rounding.
//!
//! Stationarity at fixed `tau` is solved by bordered Newton on
//! `tau (4K + M S) u - M u (log u^2 + 1) = Lambda M u`; the outer problem in
//! `tau` is the root of `tau E(tau) - n/2`, `E = 4 u'Ku + sum m scal u^2`,
//! which is `tau dmu/dtau` by the envelope theorem.

use crate::error::{LabError, Result};
use crate::geometry::{Geometry, Parity, ScalarProfile, WarpedProfile};
use crate::linalg::{BandLu, BandMatrix};
use crate::stability::WeightedCalculus;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::cell::{Cell, RefCell};
use std::f64::consts::PI;

/// Minimizing pair `(f, tau)` with the Euler-Lagrange residuals that certify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCertificate {
    pub f: ScalarProfile,
    pub tau: f64,
    pub nu: f64,
    /// `sup |tau (2 Delta f + |grad f|^2 - scal) - f + n + nu|`.
    pub residual_el1: f64,
    /// `|(4 pi tau)^{-n/2} int f e^{-f} dV - n/2 - nu|`.
    pub residual_el2: f64,
    /// `|(4 pi tau)^{-n/2} int e^{-f} dV - 1|`.
    pub residual_constraint: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Where the inner iteration started (`constant` or `warm`).
    pub start: String,
}

impl EntropyCertificate {
    pub fn max_residual(&self) -> f64 {
        self.residual_el1.max(self.residual_el2).max(self.residual_constraint)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Parse { line: e.line(), message: e.to_string() })
    }

    /// Normalized density `u` with `w = (4 pi tau)^{n/4} u`, recovered from `f`.
    pub fn density(&self, dim: usize) -> Vec<f64> {
        let shift = 0.25 * dim as f64 * (4.0 * PI * self.tau).ln();
        self.f.values.iter().map(|f| (-0.5 * f - shift).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaResult {
    pub lambda: f64,
    /// Minimizing `f` normalized by `int e^{-f} dV = 1`.
    pub f: ScalarProfile,
    /// Relative eigen-residual of the minimizer.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverControls {
    /// Certification tolerance for all three residuals.
    pub tol: f64,
    pub max_newton: usize,
    pub max_outer: usize,
    /// `W` values below this floor are taken as evidence of `lambda(g) < 0`.
    pub floor: f64,
}

impl Default for SolverControls {
    fn default() -> Self {
        Self { tol: 1e-9, max_newton: 60, max_outer: 80, floor: -1e6 }
    }
}

/// Discrete problem data shared by all solves on one profile.
struct Problem {
    n: f64,
    mass: Vec<f64>,
    scal: Vec<f64>,
    energy: BandMatrix,
}

impl Problem {
    fn new(profile: &WarpedProfile) -> Result<Self> {
        let geom = Geometry::new(profile)?;
        Ok(Self::from_geometry(&geom))
    }

    fn from_geometry(geom: &Geometry) -> Self {
        let calc = WeightedCalculus::unweighted(geom.clone());
        Self {
            n: geom.dim as f64,
            mass: geom.mass.clone(),
            scal: geom.curvature.scal.clone(),
            energy: calc.function_energy(),
        }
    }

    fn cells(&self) -> usize {
        self.mass.len()
    }

    /// `E(u) = 4 u'Ku + sum m scal u^2`.
    fn energy(&self, u: &[f64]) -> f64 {
        let ku = self.energy.mul_vec(u);
        let k: f64 = ku.iter().zip(u).map(|(a, b)| a * b).sum();
        let s: f64 = (0..u.len()).map(|i| self.mass[i] * self.scal[i] * u[i] * u[i]).sum();
        4.0 * k + s
    }

    fn entropy_term(&self, u: &[f64]) -> f64 {
        (0..u.len()).map(|i| self.mass[i] * u[i] * u[i] * (u[i] * u[i]).ln()).sum()
    }

    fn functional(&self, u: &[f64], tau: f64) -> f64 {
        tau * self.energy(u) - self.entropy_term(u) - 0.5 * self.n * (4.0 * PI * tau).ln() - self.n
    }

    fn norm2(&self, u: &[f64]) -> f64 {
        (0..u.len()).map(|i| self.mass[i] * u[i] * u[i]).sum()
    }

    fn normalize(&self, u: &mut [f64]) {
        let s = self.norm2(u).sqrt();
        u.iter_mut().for_each(|v| *v /= s);
    }

    /// `G(u) = tau (4K + M S) u - M u (log u^2 + 1) - Lambda M u`.
    fn stationarity(&self, u: &[f64], tau: f64, lambda: f64) -> Vec<f64> {
        let ku = self.energy.mul_vec(u);
        (0..u.len())
            .map(|i| {
                let m = self.mass[i];
                tau * (4.0 * ku[i] + m * self.scal[i] * u[i]) - m * u[i] * ((u[i] * u[i]).ln() + 1.0 + lambda)
            })
            .collect()
    }

    /// Multiplier consistent with the current value: `Lambda = W + n/2 log(4 pi tau) + n - 1`.
    fn multiplier(&self, u: &[f64], tau: f64) -> f64 {
        tau * self.energy(u) - self.entropy_term(u) - 1.0
    }

    fn residuals(&self, u: &[f64], tau: f64) -> (f64, f64, f64, f64) {
        let nu = self.functional(u, tau);
        let lambda = self.multiplier(u, tau);
        let g = self.stationarity(u, tau, lambda);
        let el1 = (0..u.len()).map(|i| (g[i] / (self.mass[i] * u[i])).abs()).fold(0.0, f64::max);
        let el2 = (0.5 * self.n - tau * self.energy(u)).abs();
        let c = (self.norm2(u) - 1.0).abs();
        (nu, el1, el2, c)
    }

    fn jacobian(&self, u: &[f64], tau: f64, lambda: f64) -> BandMatrix {
        let m = self.cells();
        let mut out = BandMatrix::zeros(m, 3, 3);
        for i in 0..m {
            for c in i.saturating_sub(3)..=(i + 3).min(m - 1) {
                out.set(i, c, 4.0 * tau * self.energy.get(i, c));
            }
            let d = self.mass[i] * (tau * self.scal[i] - (u[i] * u[i]).ln() - 3.0 - lambda);
            out.add(i, i, d);
        }
        out
    }

    /// Certificate at `(u, tau)`; `tau_optimal` adds the second equation to the
    /// convergence test (it only holds at the minimizing `tau`).
    fn certificate(&self, u: &[f64], tau: f64, iterations: usize, start: &str, tol: f64, tau_optimal: bool) -> EntropyCertificate {
        let (nu, el1, el2, c) = self.residuals(u, tau);
        let shift = 0.5 * self.n * (4.0 * PI * tau).ln();
        let f = u.iter().map(|v| -(v * v).ln() - shift).collect();
        EntropyCertificate {
            f: ScalarProfile { values: f, parity: Parity::Even },
            tau,
            nu,
            residual_el1: el1,
            residual_el2: el2,
            residual_constraint: c,
            iterations,
            converged: el1 < tol && c < tol && (!tau_optimal || el2 < tol),
            start: start.to_string(),
        }
    }
}

/// Result of the inner solve at fixed `tau`.
struct Inner {
    u: Vec<f64>,
    iterations: usize,
}

fn constant_start(p: &Problem) -> Vec<f64> {
    let vol: f64 = p.mass.iter().sum();
    vec![vol.powf(-0.5); p.cells()]
}

fn solve_inner(p: &Problem, tau: f64, start: Option<&[f64]>, ctl: &SolverControls) -> Result<Inner> {
    let m = p.cells();
    let mut u = match start {
        Some(s) if s.len() == m && s.iter().all(|v| *v > 0.0 && v.is_finite()) => s.to_vec(),
        _ => constant_start(p),
    };
    p.normalize(&mut u);
    let target = 1e-2 * ctl.tol;
    let mut best = (f64::INFINITY, u.clone());
    let mut stalled = 0;
    for it in 0..ctl.max_newton {
        let (value, el1, _, _) = p.residuals(&u, tau);
        if value < ctl.floor || !value.is_finite() {
            return Err(LabError::EntropyUndefined(format!("W fell below the floor {:.3e} at tau = {tau}", ctl.floor)));
        }
        if el1 < 0.5 * best.0 {
            stalled = 0;
        } else {
            stalled += 1;
        }
        if el1 < best.0 {
            best = (el1, u.clone());
        }
        // below target, or at the rounding floor under the tolerance
        if el1 < target || (best.0 < ctl.tol && stalled >= 2) {
            return Ok(Inner { u: best.1, iterations: it });
        }
        let lambda = p.multiplier(&u, tau);
        let g = p.stationarity(&u, tau, lambda);
        let mu: Vec<f64> = (0..m).map(|i| p.mass[i] * u[i]).collect();
        let c = 0.5 * (p.norm2(&u) - 1.0);
        let step = match BandLu::factor(&p.jacobian(&u, tau, lambda)) {
            Ok(lu) => {
                let x1 = lu.solve(&g.iter().map(|v| -v).collect::<Vec<_>>());
                let x2 = lu.solve(&mu);
                let den: f64 = mu.iter().zip(&x2).map(|(a, b)| a * b).sum();
                let num: f64 = -c - mu.iter().zip(&x1).map(|(a, b)| a * b).sum::<f64>();
                let dl = num / den;
                let du: Vec<f64> = (0..m).map(|i| x1[i] + dl * x2[i]).collect();
                Some(du)
            }
            Err(_) => None,
        };
        // Newton is accepted when it points downhill on the constraint
        // sphere; otherwise fall back to a projected gradient step.
        let value = p.functional(&u, tau);
        let descent = |d: &[f64]| -> f64 {
            let proj: f64 = g.iter().zip(d).map(|(a, b)| a * b).sum();
            2.0 * proj
        };
        let direction = match step {
            Some(d) if descent(&d) <= 1e-14 * value.abs().max(1.0) || el1 < 1e-4 => d,
            _ => {
                let d: Vec<f64> = (0..m).map(|i| -g[i] / p.mass[i]).collect();
                let along: f64 = (0..m).map(|i| p.mass[i] * d[i] * u[i]).sum();
                (0..m).map(|i| 0.01 * (d[i] - along * u[i])).collect()
            }
        };
        // keep positivity and require progress in value or residual
        let mut alpha: f64 = 1.0;
        for i in 0..m {
            if direction[i] < -0.5 * u[i] {
                alpha = alpha.min(-0.5 * u[i] / direction[i]);
            }
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial: Vec<f64> = (0..m).map(|i| u[i] + alpha * direction[i]).collect();
            p.normalize(&mut trial);
            let (tv, tel1, _, _) = p.residuals(&trial, tau);
            if tv <= value + 1e-13 * value.abs().max(1.0) || tel1 < 0.5 * el1 {
                u = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(Inner { u: best.1, iterations: ctl.max_newton })
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LabError::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

fn check_len(profile: &WarpedProfile, u: &ScalarProfile) -> Result<()> {
    if u.len() != profile.cells() {
        return Err(LabError::GridMismatch { expected: profile.cells(), found: u.len() });
    }
    Ok(())
}

/// `W(g, f, tau)`; requires `(4 pi tau)^{-n/2} int e^{-f} dV = 1` within 1e-8.
pub fn evaluate_w(profile: &WarpedProfile, f: &ScalarProfile, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_len(profile, f)?;
    let p = Problem::new(profile)?;
    let shift = 0.25 * p.n * (4.0 * PI * tau).ln();
    let u: Vec<f64> = f.values.iter().map(|f| (-0.5 * f - shift).exp()).collect();
    let c = p.norm2(&u) - 1.0;
    if c.abs() > 1e-8 {
        return Err(LabError::Constraint(format!("(4 pi tau)^(-n/2) int e^(-f) dV - 1 = {c:.3e}")));
    }
    Ok(p.functional(&u, tau))
}

/// `W~(g, w, tau)` for `w^2 = e^{-f}`; requires `w > 0` and the normalization.
pub fn evaluate_wtilde(profile: &WarpedProfile, w: &ScalarProfile, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_len(profile, w)?;
    if let Some(i) = w.values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(LabError::InvalidArgument(format!("w must be positive, w[{i}] = {}", w.values[i])));
    }
    let p = Problem::new(profile)?;
    let scale = (4.0 * PI * tau).powf(-0.25 * p.n);
    let u: Vec<f64> = w.values.iter().map(|v| v * scale).collect();
    let c = p.norm2(&u) - 1.0;
    if c.abs() > 1e-8 {
        return Err(LabError::Constraint(format!("(4 pi tau)^(-n/2) int w^2 dV - 1 = {c:.3e}")));
    }
    // (4 pi tau)^{-n/2} int [tau (4|grad w|^2 + scal w^2) - w^2 log w^2 - n w^2]
    let e = p.energy(&u);
    let vol_w2: f64 = (0..u.len()).map(|i| p.mass[i] * u[i] * u[i]).sum();
    let ent: f64 = (0..u.len())
        .map(|i| {
            let w2 = w.values[i] * w.values[i];
            p.mass[i] * u[i] * u[i] * w2.ln()
        })
        .sum();
    Ok(tau * e - ent - p.n * vol_w2)
}

/// Shifts `f` by a constant so that `(4 pi tau)^{-n/2} int e^{-f} dV = 1`.
pub fn normalize_f(profile: &WarpedProfile, f: &ScalarProfile, tau: f64) -> Result<ScalarProfile> {
    check_tau(tau)?;
    check_len(profile, f)?;
    let geom = Geometry::new(profile)?;
    let z: f64 = geom.mass.iter().zip(&f.values).map(|(m, f)| m * (-f).exp()).sum();
    let shift = (z * (4.0 * PI * tau).powf(-0.5 * geom.dim as f64)).ln();
    Ok(ScalarProfile { values: f.values.iter().map(|v| v + shift).collect(), parity: f.parity })
}

/// `mu(g, tau)` and its minimizer.
pub fn minimize_mu(profile: &WarpedProfile, tau: f64) -> Result<EntropyCertificate> {
    minimize_mu_with(profile, tau, None, &SolverControls::default())
}

/// [`minimize_mu`] with an optional warm start (a previous certificate's `f`).
pub fn minimize_mu_with(
    profile: &WarpedProfile,
    tau: f64,
    warm: Option<&EntropyCertificate>,
    ctl: &SolverControls,
) -> Result<EntropyCertificate> {
    check_tau(tau)?;
    let p = Problem::new(profile)?;
    let start = warm.map(|c| c.density(profile.dim()));
    let inner = solve_inner(&p, tau, start.as_deref(), ctl)?;
    let label = if warm.is_some() { "warm" } else { "constant" };
    Ok(p.certificate(&inner.u, tau, inner.iterations, label, ctl.tol, false))
}

/// `nu(g) = inf_tau mu(g, tau)`.
pub fn minimize_nu(profile: &WarpedProfile) -> Result<EntropyCertificate> {
    minimize_nu_with(profile, None, &SolverControls::default())
}

pub fn minimize_nu_with(
    profile: &WarpedProfile,
    warm: Option<&EntropyCertificate>,
    ctl: &SolverControls,
) -> Result<EntropyCertificate> {
    let geom = Geometry::new(profile)?;
    let p = Problem::from_geometry(&geom);
    let n = p.n;
    let smax = p.scal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let smin = p.scal.iter().cloned().fold(f64::INFINITY, f64::min);
    // lambda >= min scal, so the eigensolve is only needed when scal dips to zero
    let lam = if smin > 0.0 { None } else { Some(lambda_of(&geom)?.lambda) };
    if let Some(l) = lam.filter(|l| *l <= 0.0) {
        return Err(LabError::EntropyUndefined(format!("lambda(g) = {l:.6e} <= 0")));
    }

    let state = RefCell::new(warm.map(|c| c.density(profile.dim())));
    let total_iters = Cell::new(0usize);
    let failure: RefCell<Option<LabError>> = RefCell::new(None);
    let samples: RefCell<Vec<(f64, f64)>> = RefCell::new(Vec::new());
    // tau E(tau) - n/2, warm-starting each inner solve from the previous one
    let slope = |tau: f64| -> Option<f64> {
        let start = state.borrow().clone();
        match solve_inner(&p, tau, start.as_deref(), ctl) {
            Ok(inner) => {
                total_iters.set(total_iters.get() + inner.iterations);
                let g = tau * p.energy(&inner.u) - 0.5 * n;
                samples.borrow_mut().push((tau, p.functional(&inner.u, tau)));
                *state.borrow_mut() = Some(inner.u);
                Some(g)
            }
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                None
            }
        }
    };

    // Initial bracket [n / (2 max scal), n / (2 min scal)], widened until
    // tau E - n/2 changes sign.
    let (mut lo, mut hi) = match warm {
        Some(c) => (c.tau / 1.05, c.tau * 1.05),
        None if smin > 0.0 => (0.5 * n / smax / 1.1, 0.5 * n / smin * 1.1),
        None => {
            let l = lam.unwrap_or(smin);
            (0.5 * n / l / 2.0, 0.5 * n / l * 2.0)
        }
    };
    let mut glo = slope(lo);
    let mut ghi = slope(hi);
    for _ in 0..40 {
        match (glo, ghi) {
            (Some(a), Some(b)) if a < 0.0 && b > 0.0 => break,
            (Some(a), Some(_)) if a >= 0.0 => {
                lo /= 1.3;
                glo = slope(lo);
            }
            (Some(_), Some(_)) => {
                hi *= 1.3;
                ghi = slope(hi);
            }
            _ => break,
        }
    }
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    if !matches!((glo, ghi), (Some(a), Some(b)) if a < 0.0 && b > 0.0) {
        let listing: Vec<String> = samples.borrow().iter().map(|(t, m)| format!("mu({t:.6})={m:.9}")).collect();
        return Err(LabError::Bracket(listing.join(", ")));
    }

    let mut conv = roots::SimpleConvergency { eps: 1e-14, max_iter: ctl.max_outer };
    let root = roots::find_root_brent(lo, hi, |t: f64| slope(t).unwrap_or(f64::NAN), &mut conv);
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    let tau = root.map_err(|e| LabError::Bracket(format!("{e:?}")))?;
    let start = state.borrow().clone();
    let inner = solve_inner(&p, tau, start.as_deref(), ctl)?;
    let label = if warm.is_some() { "warm" } else { "constant" };
    Ok(p.certificate(&inner.u, tau, total_iters.get() + inner.iterations, label, ctl.tol, true))
}

fn lambda_of(geom: &Geometry) -> Result<LambdaResult> {
    let p = Problem::from_geometry(geom);
    let (vals, vecs) = generalized_eigen(&p.energy.to_dense().scale(4.0), &p.mass, Some(&p.scal))?;
    let lambda = vals[0];
    let mut u: Vec<f64> = vecs.column(0).iter().copied().collect();
    if u.iter().sum::<f64>() < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    let a = p.energy.mul_vec(&u);
    let r: Vec<f64> = (0..u.len())
        .map(|i| 4.0 * a[i] + p.mass[i] * (p.scal[i] - lambda) * u[i])
        .collect();
    let residual = r.iter().map(|v| v.abs()).sum::<f64>() / (lambda.abs().max(1.0) * p.mass.iter().zip(&u).map(|(m, u)| m * u.abs()).sum::<f64>());
    let f: Vec<f64> = u.iter().map(|v| -(v * v).max(1e-300).ln()).collect();
    Ok(LambdaResult { lambda, f: ScalarProfile { values: f, parity: Parity::Even }, residual })
}

/// `lambda(g)`: bottom of the spectrum of `4 Delta + scal`.
pub fn lambda_functional(profile: &WarpedProfile) -> Result<LambdaResult> {
    lambda_of(&Geometry::new(profile)?)
}

/// Generalized symmetric eigenproblem `(A + diag(m s)) x = lambda diag(m) x`,
/// eigenvalues ascending and eigenvectors normalized in the `m` pairing.
pub fn generalized_eigen(a: &DMatrix<f64>, mass: &[f64], potential: Option<&[f64]>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = mass.len();
    let is = DVector::from_iterator(n, mass.iter().map(|m| 1.0 / m.sqrt()));
    let mut b = a.clone();
    if let Some(s) = potential {
        for i in 0..n {
            b[(i, i)] += mass[i] * s[i];
        }
    }
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] *= is[i] * is[j];
        }
    }
    let b = (&b + b.transpose()) * 0.5;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(LabError::LinearAlgebra("non-finite operator".into()));
    }
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])] * is[r]);
    Ok((vals, vecs))
}

/// Spectrum of `Delta_f` on functions for a certificate's `f`, ascending.
pub fn weighted_laplacian_spectrum(profile: &WarpedProfile, f: &ScalarProfile, count: usize) -> Result<Vec<f64>> {
    check_len(profile, f)?;
    let geom = Geometry::new(profile)?;
    let calc = WeightedCalculus::new(geom, &f.values);
    let (vals, _) = generalized_eigen(&calc.function_energy().to_dense(), &calc.fw, None)?;
    Ok(vals.into_iter().take(count).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_the_soliton_minimizer_on_s2() {
        let p = WarpedProfile::unit_sphere(2, 200).unwrap();
        let c = minimize_mu(&p, 0.5).unwrap();
        assert!(c.converged, "{c:?}");
        assert!((c.nu - (2f64.ln() - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn nu_on_round_spheres() {
        let p = WarpedProfile::unit_sphere(2, 200).unwrap();
        let c = minimize_nu(&p).unwrap();
        assert!(c.converged, "{:?}", (c.residual_el1, c.residual_el2, c.residual_constraint));
        assert!((c.tau - 0.5).abs() < 1e-6, "{}", c.tau);
        assert!((c.nu - (2f64.ln() - 1.0)).abs() < 1e-6, "{}", c.nu);
    }
}
