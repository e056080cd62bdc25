//! Finite-difference checks of the variation formulas of `nu`, the
//! third-variation obstruction, and Lojasiewicz exponent fits.

use crate::entropy::{minimize_nu_with, EntropyCertificate, SolverControls};
use crate::error::{LabError, Result};
use crate::flow::FlowTrajectory;
use crate::homogeneous::{equivariant_entropy, HomogeneousMetric};
use crate::geometry::{stencil, Geometry, Parity, ScalarProfile, WarpedProfile};
use crate::stability::{soliton_defect, InvariantSymTensor, StabilityContext, WeightedCalculus};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Finite difference against the analytic value of one variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub order: u8,
    pub analytic: f64,
    /// Centered difference at the smallest step.
    pub finite_difference: f64,
    pub steps: Vec<f64>,
    /// Centered differences at each step.
    pub differences: Vec<f64>,
    pub richardson: f64,
    /// `|richardson - analytic| / max(|analytic|, floor)`.
    pub relative_error: f64,
    /// Ratios of successive FD increments (about 4 for second-order truncation).
    pub convergence_ratios: Vec<f64>,
    /// Raw `nu` probes `(t, nu)`.
    pub probes: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Per-order relative tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationTolerances {
    pub first: f64,
    pub second: f64,
    /// Absolute floor used when the analytic value vanishes.
    pub floor: f64,
}

impl Default for VariationTolerances {
    fn default() -> Self {
        Self { first: 1e-5, second: 1e-4, floor: 1e-3 }
    }
}

fn sup(h: &InvariantSymTensor) -> Result<f64> {
    let (a, b) = h.components()?;
    Ok(a.iter().chain(b).fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// `nu(g + t h)`, warm-started from `warm`.
fn nu_along(profile: &WarpedProfile, h: &InvariantSymTensor, t: f64, warm: &EntropyCertificate) -> Result<f64> {
    let (a, b) = h.components()?;
    let p = profile.perturbed(a, b, t)?;
    let c = minimize_nu_with(&p, Some(warm), &SolverControls::default())?;
    if !c.converged {
        return Err(LabError::EntropyUndefined(format!("entropy solve did not certify at t = {t:e}")));
    }
    Ok(c.nu)
}

/// Default step `1e-3 / |h|_sup` and its halvings.
fn default_steps(h: &InvariantSymTensor, base: Option<f64>) -> Result<Vec<f64>> {
    let s = sup(h)?;
    if s == 0.0 {
        return Ok(vec![]);
    }
    let t0 = base.unwrap_or(1e-2) / s;
    Ok(vec![t0, 0.5 * t0, 0.25 * t0])
}

fn ratios(d: &[f64]) -> Vec<f64> {
    d.windows(3)
        .map(|w| {
            let (x, y) = (w[0] - w[1], w[1] - w[2]);
            if y == 0.0 {
                f64::INFINITY
            } else {
                (x / y).abs()
            }
        })
        .collect()
}

fn report(order: u8, analytic: f64, steps: Vec<f64>, diffs: Vec<f64>, probes: Vec<(f64, f64)>, tol: f64, floor: f64) -> VariationReport {
    let k = diffs.len();
    let (fd, rich) = if k >= 2 {
        (diffs[k - 1], (4.0 * diffs[k - 1] - diffs[k - 2]) / 3.0)
    } else if k == 1 {
        (diffs[0], diffs[0])
    } else {
        (0.0, 0.0)
    };
    let rel = (rich - analytic).abs() / analytic.abs().max(floor);
    VariationReport {
        order,
        analytic,
        finite_difference: fd,
        convergence_ratios: ratios(&diffs),
        steps,
        differences: diffs,
        richardson: rich,
        relative_error: rel,
        probes,
        pass: rel < tol,
    }
}

/// `nu'(h) = -(4 pi tau)^{-n/2} int <tau (Ric + Hess f) - g/2, h> e^{-f} dV`.
pub fn first_variation(profile: &WarpedProfile, cert: &EntropyCertificate, h: &InvariantSymTensor) -> Result<f64> {
    let geom = Geometry::new(profile)?;
    let (ta, tb) = soliton_defect(&geom, cert)?;
    let (a, b) = h.components()?;
    if a.len() != geom.cells || b.len() != geom.cells {
        return Err(LabError::GridMismatch { expected: geom.cells, found: a.len().min(b.len()) });
    }
    // pointwise pairing, integrated with the same weights as the entropy
    let calc = WeightedCalculus::new(geom, &cert.f.values);
    let n1 = (calc.dim() - 1) as f64;
    let norm = (4.0 * PI * cert.tau).powf(-0.5 * calc.dim() as f64);
    let pair: f64 = (0..calc.cells()).map(|i| calc.fw[i] * (ta[i] * a[i] + n1 * tb[i] * b[i])).sum();
    Ok(-norm * pair)
}

pub fn check_first_variation(
    profile: &WarpedProfile,
    h: &InvariantSymTensor,
    steps: Option<&[f64]>,
    tol: &VariationTolerances,
) -> Result<VariationReport> {
    let cert = minimize_nu_with(profile, None, &SolverControls::default())?;
    let analytic = first_variation(profile, &cert, h)?;
    let steps = match steps {
        Some(s) => s.to_vec(),
        None => default_steps(h, None)?,
    };
    let mut probes = Vec::new();
    let mut diffs = Vec::new();
    for &t in &steps {
        let up = nu_along(profile, h, t, &cert)?;
        let dn = nu_along(profile, h, -t, &cert)?;
        probes.push((t, up));
        probes.push((-t, dn));
        diffs.push((up - dn) / (2.0 * t));
    }
    Ok(report(1, analytic, steps, diffs, probes, tol.first, tol.floor))
}

/// `tau (4 pi tau)^{-n/2} <N h, h>_w`.
pub fn second_variation(ctx: &StabilityContext, h: &InvariantSymTensor) -> Result<f64> {
    let n = ctx.calc.dim() as f64;
    let norm = ctx.tau * (4.0 * PI * ctx.tau).powf(-0.5 * n);
    Ok(norm * ctx.assemble_n_reduced().bilinear(h, h)?)
}

/// Second variation along `h` in `V` at a soliton.
pub fn check_second_variation(
    profile: &WarpedProfile,
    cert: &EntropyCertificate,
    h: &InvariantSymTensor,
    tol: &VariationTolerances,
) -> Result<VariationReport> {
    let ctx = StabilityContext::new(profile, cert)?;
    let full = ctx.assemble_n_full()?;
    let n = ctx.calc.dim() as f64;
    let analytic = ctx.tau * (4.0 * PI * ctx.tau).powf(-0.5 * n) * full.bilinear(h, h)?;
    let steps = default_steps(h, None)?;
    let mut probes = vec![(0.0, cert.nu)];
    let mut diffs = Vec::new();
    for &t in &steps {
        let up = nu_along(profile, h, t, cert)?;
        let dn = nu_along(profile, h, -t, cert)?;
        probes.push((t, up));
        probes.push((-t, dn));
        diffs.push((up - 2.0 * cert.nu + dn) / (t * t));
    }
    Ok(report(2, analytic, steps, diffs, probes, tol.second, tol.floor))
}

/// Second variation on the homogeneous backend along `h = sum e_i (x_i g_i)`
/// (pointwise coefficients `e_i`), at a soliton. The analytic side is
/// `tau sum n_i e_i (N e)_i` with `N e = R e - Ric <Ric, e> / scal`.
pub fn check_second_variation_homogeneous(m: &HomogeneousMetric, e: &[f64], tol: &VariationTolerances) -> Result<VariationReport> {
    if e.len() != m.factors.len() {
        return Err(LabError::GridMismatch { expected: m.factors.len(), found: e.len() });
    }
    if !m.is_soliton() {
        return Err(LabError::NotASoliton { residual: m.soliton_residual()? });
    }
    let tau = m.tau()?;
    let ric = m.ricci();
    let dims: Vec<f64> = m.factors.iter().map(|f| f.dim as f64).collect();
    let pair: f64 = (0..e.len()).map(|i| dims[i] * ric[i] * e[i]).sum();
    let analytic = tau * (0..e.len()).map(|i| dims[i] * e[i] * (ric[i] * e[i] - ric[i] * pair / m.scal())).sum::<f64>();
    let nu0 = equivariant_entropy(m)?.nu;
    let sup = e.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let steps = if sup == 0.0 { vec![] } else { (0..3).map(|k| 1e-2 / sup / 2f64.powi(k)).collect() };
    let nu_at = |t: f64| -> Result<f64> {
        let xs = m.scales.iter().zip(e).map(|(x, c)| x * (1.0 + t * c)).collect();
        Ok(equivariant_entropy(&m.with_scales(xs)?)?.nu)
    };
    let mut probes = vec![(0.0, nu0)];
    let mut diffs = Vec::new();
    for &t in &steps {
        let (up, dn) = (nu_at(t)?, nu_at(-t)?);
        probes.push((t, up));
        probes.push((-t, dn));
        diffs.push((up - 2.0 * nu0 + dn) / (t * t));
    }
    Ok(report(2, analytic, steps, diffs, probes, tol.second, tol.floor))
}

/// Third-variation probe: `|nu'''(h)| / (|h|_{H1}^2 |h|_{C2})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThirdVariationProbe {
    pub third: f64,
    pub h1: f64,
    pub c2: f64,
    pub ratio: f64,
    pub step: f64,
    pub probes: Vec<(f64, f64)>,
    /// Estimated FD noise in `nu'''` from the entropy solver tolerance.
    pub noise: f64,
    pub noise_exceeded: bool,
}

/// Discrete `C^2` norm of an invariant tensor (values and first two radial
/// derivatives of both components).
pub fn c2_norm(geom: &Geometry, h: &InvariantSymTensor) -> Result<f64> {
    let (a, b) = h.components()?;
    let mut out = 0.0_f64;
    for u in [a, b] {
        let d1 = stencil::d1(u, Parity::Even, geom.h);
        let d2 = stencil::d2(u, Parity::Even, geom.h);
        for i in 0..u.len() {
            let q = geom.lapse[i];
            out = out.max(u[i].abs() + (d1[i] / q).abs() + (d2[i] / (q * q)).abs());
        }
    }
    Ok(out)
}

pub fn third_variation_bound_probe(profile: &WarpedProfile, h: &InvariantSymTensor) -> Result<ThirdVariationProbe> {
    let cert = minimize_nu_with(profile, None, &SolverControls::default())?;
    let geom = Geometry::new(profile)?;
    let (a, b) = h.components()?;
    let calc = WeightedCalculus::unweighted(geom.clone());
    let l2: f64 = calc.inner_tensor((a, b), (a, b));
    let h1 = (l2 + calc.tensor_energy(a, b)).sqrt();
    let c2 = c2_norm(&geom, h)?;
    let s = sup(h)?;
    if s == 0.0 {
        return Ok(ThirdVariationProbe { third: 0.0, h1, c2, ratio: 0.0, step: 0.0, probes: vec![], noise: 0.0, noise_exceeded: false });
    }
    let t = 0.05 / s;
    let mut probes = Vec::new();
    let mut val = |k: f64| -> Result<f64> {
        let v = nu_along(profile, h, k * t, &cert)?;
        probes.push((k * t, v));
        Ok(v)
    };
    let (p2, p1, m1, m2) = (val(2.0)?, val(1.0)?, val(-1.0)?, val(-2.0)?);
    let third = (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * t * t * t);
    let noise = 6.0 * 1e-12 / (2.0 * t * t * t);
    let ratio = third.abs() / (h1 * h1 * c2);
    Ok(ThirdVariationProbe { third, h1, c2, ratio, step: t, probes, noise, noise_exceeded: third.abs() < noise })
}

/// `(2n - 2) / vol * int v^3 dV` for an eigenfunction `Delta v = 2 mu v` of an
/// Einstein certificate (`mu = 1 / (2 tau)`).
pub fn obstruction_integral(profile: &WarpedProfile, cert: &EntropyCertificate, v: &ScalarProfile) -> Result<f64> {
    let geom = Geometry::new(profile)?;
    if v.len() != geom.cells {
        return Err(LabError::GridMismatch { expected: geom.cells, found: v.len() });
    }
    let spread = cert.f.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - cert.f.values.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread > 1e-8 {
        return Err(LabError::NotIsdGenerator(format!("f is not constant (spread {spread:.2e}); not an Einstein certificate")));
    }
    let calc = WeightedCalculus::unweighted(geom.clone());
    let lv = calc.laplacian_fn(&v.values);
    let mu2 = 1.0 / cert.tau;
    let res: f64 = (0..geom.cells).map(|i| geom.mass[i] * (lv[i] - mu2 * v.values[i]).powi(2)).sum::<f64>().sqrt();
    let nv: f64 = (0..geom.cells).map(|i| geom.mass[i] * v.values[i].powi(2)).sum::<f64>().sqrt();
    if !(nv > 0.0) || res > 1e-6 * nv {
        return Err(LabError::NotIsdGenerator(format!("|Delta v - 2 mu v| / |v| = {:.3e}", res / nv)));
    }
    Ok(obstruction_quadrature(&geom, v))
}

/// `(2n - 2) / vol * int v^3 dV` without the eigenfunction check.
pub fn obstruction_quadrature(geom: &Geometry, v: &ScalarProfile) -> f64 {
    let n = geom.dim as f64;
    let cube: f64 = geom.mass.iter().zip(&v.values).map(|(m, v)| m * v * v * v).sum();
    (2.0 * n - 2.0) / geom.volume() * cube
}

/// Fitted Lojasiewicz exponent and constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LojasiewiczFit {
    pub sigma: f64,
    pub constant: f64,
    /// Sample index range `[start, end)` used.
    pub window: (usize, usize),
    /// RMS residual of the log-log regression.
    pub fit_residual: f64,
    /// Largest `|nu - nu_inf|^sigma / (C residual)` over the window.
    pub worst_ratio: f64,
    /// Slope of `log |nu - nu_inf|` against `log (t + 1)`.
    pub temporal_exponent: f64,
    /// Exponential rate of `|nu - nu_inf|` in `t` over the window.
    pub exponential_rate: f64,
    /// Temporal decay at least as fast as `(t + 1)^{-1/(2 sigma - 1)}`.
    pub rate_consistent: bool,
    /// The 1/2 expectation for a nondegenerate maximum is a model assumption.
    pub note: String,
}

/// One tail sample of a converging trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub t: f64,
    pub nu: f64,
    pub residual: f64,
}

pub const MIN_TAIL: usize = 20;

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, rms)
}

/// Fits `|nu - nu_inf|^sigma = C residual` on the tail of a trajectory.
/// Samples with `|nu - nu_inf| <= noise` are excluded; `converged` states
/// whether the trajectory ended on the soliton criterion.
pub fn fit_lojasiewicz(samples: &[DecaySample], nu_inf: f64, converged: bool, noise: f64) -> Result<LojasiewiczFit> {
    if !converged {
        return Err(LabError::InsufficientData("trajectory did not converge".into()));
    }
    let usable: Vec<(usize, DecaySample)> = samples
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, s)| (s.nu - nu_inf).abs() > noise && s.residual > 0.0)
        .collect();
    if usable.len() < MIN_TAIL {
        return Err(LabError::InsufficientData(format!("{} usable tail samples, need {MIN_TAIL}", usable.len())));
    }
    // tail window: the later half of the usable samples, at least MIN_TAIL
    let take = (usable.len() / 2).max(MIN_TAIL).min(usable.len());
    let tail = &usable[usable.len() - take..];
    let x: Vec<f64> = tail.iter().map(|(_, s)| (s.nu - nu_inf).abs().ln()).collect();
    let y: Vec<f64> = tail.iter().map(|(_, s)| s.residual.ln()).collect();
    let (sigma, icpt, rms) = linear_fit(&x, &y);
    let constant = (-icpt).exp();
    let worst = tail
        .iter()
        .map(|(_, s)| (s.nu - nu_inf).abs().powf(sigma) / (constant * s.residual))
        .fold(0.0, f64::max);
    let lt: Vec<f64> = tail.iter().map(|(_, s)| (s.t + 1.0).ln()).collect();
    let (temporal, _, _) = linear_fit(&lt, &x);
    let tt: Vec<f64> = tail.iter().map(|(_, s)| s.t).collect();
    let (rate, _, _) = linear_fit(&tt, &x);
    let expected = if sigma > 0.5 { 1.0 / (2.0 * sigma - 1.0) } else { f64::INFINITY };
    let rate_consistent = if expected.is_finite() {
        -temporal >= 0.5 * expected
    } else {
        // sigma = 1/2 predicts exponential decay
        rate < 0.0
    };
    Ok(LojasiewiczFit {
        sigma,
        constant,
        window: (tail[0].0, tail[tail.len() - 1].0 + 1),
        fit_residual: rms,
        worst_ratio: worst,
        temporal_exponent: -temporal,
        exponential_rate: -rate,
        rate_consistent,
        note: "sigma = 1/2 for a nondegenerate maximum is a model assumption".into(),
    })
}

/// Fit on a flow trajectory with `nu_inf` the final `nu`. Samples are kept
/// while `nu_inf - nu` exceeds a hundred times the largest overshoot of `nu`
/// past `nu_inf`, which bounds the uncertainty of the limit.
pub fn fit_trajectory(traj: &FlowTrajectory) -> Result<LojasiewiczFit> {
    let samples = traj.decay_samples();
    let last = samples.last().ok_or_else(|| LabError::InsufficientData("empty trajectory".into()))?;
    let overshoot = samples.iter().map(|s| s.nu - last.nu).fold(0.0, f64::max);
    fit_lojasiewicz(&samples, last.nu, traj.converged(), (100.0 * overshoot).max(1e-11))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_power_law_is_recovered() {
        let samples: Vec<DecaySample> = (0..60)
            .map(|k| {
                let t = k as f64;
                let dnu = 1e-2 * (1.0 + t).powf(-5.0);
                DecaySample { t, nu: -dnu, residual: dnu.powf(0.6) / 3.0 }
            })
            .collect();
        let fit = fit_lojasiewicz(&samples, 0.0, true, 1e-15).unwrap();
        assert!((fit.sigma - 0.6).abs() < 1e-10);
        assert!((fit.constant - 3.0).abs() < 1e-8);
    }

    #[test]
    fn short_tails_are_rejected() {
        let samples = vec![DecaySample { t: 0.0, nu: 0.0, residual: 1.0 }; 5];
        assert!(matches!(fit_lojasiewicz(&samples, 1.0, true, 0.0), Err(LabError::InsufficientData(_))));
        assert!(matches!(fit_lojasiewicz(&samples, 1.0, false, 0.0), Err(LabError::InsufficientData(_))));
    }
}
