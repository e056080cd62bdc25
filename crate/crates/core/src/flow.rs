//! Volume-normalized Ricci flow, tau-flow and modified tau-flow on the warped
//! and homogeneous backends.
//!
//! The warped backend works in the conformal slice: every invariant metric on
//! `S^n` is `e^{2u} (d rho^2 + sin^2 rho g_S)` for an even `u`, which makes
//! smoothness at the poles automatic. The radial gauge field that keeps the
//! metric in this form is solved for at every stage, so the tau-flow and the
//! modified tau-flow describe the same curve of geometries. `u` is advanced
//! with an explicit second-order Runge-Kutta-Chebyshev scheme whose stage
//! count follows the parabolic stiffness. `f` and `tau` are frozen within a
//! step and recomputed by a warm-started entropy solve once the step is
//! proposed; the step is accepted only if `nu` does not decrease.

pub use crate::homogeneous::FlowKind;

use crate::entropy::{minimize_nu_with, EntropyCertificate, SolverControls};
use crate::error::{LabError, Result};
use crate::geometry::{stencil, Geometry, Parity, ScalarProfile, WarpedProfile};
use crate::homogeneous::{equivariant_entropy, flow_rhs, HomogeneousMetric};
use crate::stability::{soliton_residual as warped_residual, InvariantSymTensor};
use crate::variation::DecaySample;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum FlowMetric {
    Warped(WarpedProfile),
    Homogeneous(HomogeneousMetric),
}

impl FlowMetric {
    fn certificate(&self, warm: Option<&EntropyCertificate>, ctl: &SolverControls) -> Result<EntropyCertificate> {
        match self {
            Self::Warped(p) => minimize_nu_with(p, warm, ctl),
            Self::Homogeneous(m) => equivariant_entropy(m),
        }
    }

    pub fn curvature_sup(&self) -> Result<f64> {
        match self {
            Self::Warped(p) => Ok(Geometry::new(p)?.curvature.sup_abs()),
            Self::Homogeneous(m) => Ok(m.ricci().into_iter().fold(0.0, f64::max)),
        }
    }
}

/// One point of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub metric: FlowMetric,
    pub t: f64,
    pub certificate: EntropyCertificate,
    /// Radial component of `X = -grad f`, for the modified flow.
    pub gauge: Option<ScalarProfile>,
}

impl FlowState {
    pub fn new(metric: FlowMetric, kind: FlowKind) -> Result<Self> {
        let certificate = metric.certificate(None, &SolverControls::default())?;
        Self::with_certificate(metric, 0.0, certificate, kind)
    }

    fn with_certificate(metric: FlowMetric, t: f64, certificate: EntropyCertificate, kind: FlowKind) -> Result<Self> {
        if !certificate.converged {
            return Err(LabError::EntropyUndefined(format!(
                "entropy solve did not certify (residual {:.3e})",
                certificate.max_residual()
            )));
        }
        let gauge = match (&metric, kind) {
            (FlowMetric::Warped(p), FlowKind::ModifiedTau) => {
                let g = Geometry::new(p)?;
                Some(ScalarProfile::even(g.ds(&certificate.f.values).into_iter().map(|v| -v).collect()))
            }
            _ => None,
        };
        Ok(Self { metric, t, certificate, gauge })
    }

    /// `|tau (Ric + Hess f) - g/2|` in `L2((4 pi tau)^{-n/2} e^{-f} dV)`.
    pub fn soliton_residual(&self) -> Result<f64> {
        match &self.metric {
            FlowMetric::Warped(p) => warped_residual(p, &self.certificate),
            FlowMetric::Homogeneous(m) => m.soliton_residual(),
        }
    }
}

/// Per-step record of an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowStep {
    pub t: f64,
    pub nu: f64,
    pub tau: f64,
    /// `|tau (Ric + Hess f) - g/2|`.
    pub residual: f64,
    /// `|Ric + Hess f - g/(2 tau)|`, the gradient magnitude of `nu`.
    pub grad_norm: f64,
    pub step: f64,
    pub curvature_sup: f64,
    /// `nu_k - nu_{k+1}` when positive, else 0.
    pub monotonicity_defect: f64,
    pub stages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    Converged,
    Horizon,
    BlowUp { curvature: f64 },
    MaxSteps,
    Failed { step: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub kind: FlowKind,
    pub states: Vec<FlowState>,
    /// `steps[k]` describes `states[k]`; the first entry has `step = 0`.
    pub steps: Vec<FlowStep>,
    pub termination: Termination,
}

pub const CSV_HEADER: &str = "t,nu,tau,residual,grad_norm,step,curvature_sup,monotonicity_defect";

impl FlowTrajectory {
    pub fn last(&self) -> &FlowState {
        self.states.last().expect("trajectories hold the initial state")
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// Largest decrease of `nu` over an accepted step.
    pub fn worst_monotonicity_defect(&self) -> f64 {
        self.steps.iter().map(|s| s.monotonicity_defect).fold(0.0, f64::max)
    }

    /// One row per accepted step, columns as in [`CSV_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{:.12e},{:.15e},{:.15e},{:.6e},{:.6e},{:.6e},{:.6e},{:.3e}",
                s.t, s.nu, s.tau, s.residual, s.grad_norm, s.step, s.curvature_sup, s.monotonicity_defect
            );
        }
        out
    }

    /// Samples for a Lojasiewicz fit.
    pub fn decay_samples(&self) -> Vec<DecaySample> {
        self.steps.iter().map(|s| DecaySample { t: s.t, nu: s.nu, residual: s.residual }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowControls {
    pub horizon: f64,
    /// Convergence when both `residual` and `grad_norm` fall below this.
    pub tol: f64,
    pub dt_initial: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Absolute local-error tolerance on `(log q, log phi)`.
    pub error_tol: f64,
    pub curvature_ceiling: f64,
    /// Allowed decrease of `nu` over one step.
    pub monotone_tol: f64,
    pub max_steps: usize,
    pub max_stages: usize,
    /// Step of the homogeneous RK4 integrator.
    pub homogeneous_dt: f64,
    pub solver: SolverControls,
}

impl Default for FlowControls {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            tol: 1e-6,
            dt_initial: 1e-3,
            dt_min: 1e-9,
            dt_max: 0.05,
            error_tol: 1e-5,
            curvature_ceiling: 1e4,
            monotone_tol: 1e-10,
            max_steps: 100_000,
            max_stages: 400,
            homogeneous_dt: 1e-3,
            solver: SolverControls::default(),
        }
    }
}

/// What drives the velocity inside a step.
#[derive(Debug, Clone, Copy)]
enum Drive<'a> {
    Normalized,
    Tau(f64),
    Modified(f64, &'a [f64]),
}

/// Orthonormal components `(a, b)` of the metric velocity.
fn velocity_of(geom: &Geometry, drive: Drive) -> (Vec<f64>, Vec<f64>) {
    let c = &geom.curvature;
    let m = geom.cells;
    let (shift, hess) = match drive {
        Drive::Normalized => {
            let avg = c.scal.iter().zip(&geom.mass).map(|(s, w)| s * w).sum::<f64>() / geom.volume();
            (2.0 / geom.dim as f64 * avg, None)
        }
        Drive::Tau(tau) => (1.0 / tau, None),
        Drive::Modified(tau, f) => (1.0 / tau, Some(geom.hessian(f))),
    };
    let mut a: Vec<f64> = (0..m).map(|i| -2.0 * c.ric_rr[i] + shift).collect();
    let mut b: Vec<f64> = (0..m).map(|i| -2.0 * c.ric_sph[i] + shift).collect();
    if let Some((fa, fb)) = hess {
        for i in 0..m {
            a[i] -= 2.0 * fa[i];
            b[i] -= 2.0 * fb[i];
        }
    }
    (a, b)
}

/// `-2 Ric + (2/n) avg(scal) g`.
pub fn rhs_normalized(profile: &WarpedProfile) -> Result<InvariantSymTensor> {
    let (a, b) = velocity_of(&Geometry::new(profile)?, Drive::Normalized);
    Ok(InvariantSymTensor::warped(a, b))
}

/// `-2 Ric + g / tau`, with `tau` from the certificate.
pub fn rhs_tau(profile: &WarpedProfile, cert: &EntropyCertificate) -> Result<InvariantSymTensor> {
    let (a, b) = velocity_of(&Geometry::new(profile)?, Drive::Tau(cert.tau));
    Ok(InvariantSymTensor::warped(a, b))
}

/// `-2 (Ric + Hess f) + g / tau`.
pub fn rhs_modified_tau(profile: &WarpedProfile, cert: &EntropyCertificate) -> Result<InvariantSymTensor> {
    let geom = Geometry::new(profile)?;
    if cert.f.len() != geom.cells {
        return Err(LabError::GridMismatch { expected: geom.cells, found: cert.f.len() });
    }
    let (a, b) = velocity_of(&geom, Drive::Modified(cert.tau, &cert.f.values));
    Ok(InvariantSymTensor::warped(a, b))
}

/// Velocity of a state on either backend.
pub fn velocity(state: &FlowState, kind: FlowKind) -> Result<InvariantSymTensor> {
    match &state.metric {
        FlowMetric::Warped(p) => match kind {
            FlowKind::Normalized => rhs_normalized(p),
            FlowKind::Tau => rhs_tau(p, &state.certificate),
            FlowKind::ModifiedTau => rhs_modified_tau(p, &state.certificate),
        },
        FlowMetric::Homogeneous(m) => Ok(InvariantSymTensor::Homogeneous { c: flow_rhs(m, kind)? }),
    }
}

/// `int_0^x u dx` at the cell centres and over the whole interval.
fn cumulative(u: &[f64], parity: Parity, h: f64) -> (Vec<f64>, f64) {
    let ext = |i: isize| stencil::ext(u, parity, i);
    let mut face = 0.0;
    let mut centre = vec![0.0; u.len()];
    for (i, c) in centre.iter_mut().enumerate() {
        let (um, u0, up) = (ext(i as isize - 1), u[i], ext(i as isize + 1));
        let curv = up - 2.0 * u0 + um;
        *c = face + h * (0.5 * u0 - (up - um) / 16.0 + curv / 48.0);
        face += h * (u0 + curv / 24.0);
    }
    (centre, face)
}

/// Arc length at the cell centres and the total length.
fn arc_length(profile: &WarpedProfile) -> (Vec<f64>, f64) {
    cumulative(profile.lapse(), Parity::Even, profile.spacing())
}

/// 4-point Lagrange interpolation of `(x, u)` samples, extended by two
/// mirrored ghosts past each end (`u` even about both ends).
fn interpolate_even(x: &[f64], u: &[f64], right: f64, targets: &[f64]) -> Vec<f64> {
    let m = x.len();
    let mut xe = vec![-x[1], -x[0]];
    xe.extend_from_slice(x);
    xe.push(2.0 * right - x[m - 1]);
    xe.push(2.0 * right - x[m - 2]);
    let mut ue = vec![u[1], u[0]];
    ue.extend_from_slice(u);
    ue.push(u[m - 1]);
    ue.push(u[m - 2]);
    targets
        .iter()
        .map(|&t| {
            let k = xe.partition_point(|&s| s <= t).saturating_sub(1).clamp(1, xe.len() - 3);
            let xs = &xe[k - 1..k + 3];
            (0..4)
                .map(|j| {
                    let w: f64 = (0..4).filter(|&l| l != j).map(|l| (t - xs[l]) / (xs[j] - xs[l])).product();
                    w * ue[k - 1 + j]
                })
                .sum()
        })
        .collect()
}

/// Conformal factor `u` if the profile is already `e^{2u} (d rho^2 + sin^2 rho g_S)`
/// on `[0, pi]`.
pub fn conformal_factor(profile: &WarpedProfile) -> Option<Vec<f64>> {
    if (profile.length() - std::f64::consts::PI).abs() > 1e-14 {
        return None;
    }
    let ok = profile
        .centres()
        .iter()
        .zip(profile.phi().iter().zip(profile.lapse()))
        .all(|(r, (p, q))| (p - q * r.sin()).abs() <= 1e-13 * p.abs().max(1e-3));
    ok.then(|| profile.lapse().iter().map(|q| q.ln()).collect())
}

/// Rewrites a profile in the conformal slice `e^{2u} (d rho^2 + sin^2 rho g_S)`
/// on a uniform `rho` grid of the same size. The Mobius freedom is fixed by
/// centring `log tan(rho / 2) - int ds / phi` between the poles.
pub fn conformal_gauge(profile: &WarpedProfile) -> Result<WarpedProfile> {
    if conformal_factor(profile).is_some() {
        return Ok(profile.clone());
    }
    let m = profile.cells();
    let (s, length) = arc_length(profile);
    let pi = std::f64::consts::PI;
    // 1/phi minus the round-sphere singular part, bounded at both poles
    let sigma: Vec<f64> = s.iter().map(|v| pi * v / length).collect();
    let rq: Vec<f64> = (0..m)
        .map(|i| (1.0 / profile.phi()[i] - pi / (length * sigma[i].sin())) * profile.lapse()[i])
        .collect();
    let (big, total) = cumulative(&rq, Parity::Odd, profile.spacing());
    let rho: Vec<f64> = (0..m)
        .map(|i| 2.0 * ((0.5 * sigma[i]).tan() * (big[i] - 0.5 * total).exp()).atan())
        .collect();
    let w: Vec<f64> = (0..m).map(|i| (profile.phi()[i] / rho[i].sin()).ln()).collect();
    let h = pi / m as f64;
    let targets: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) * h).collect();
    let u = interpolate_even(&rho, &w, pi, &targets);
    conformal_profile(profile.dim(), &u)
}

/// Profile of `e^{2u} (d rho^2 + sin^2 rho g_S)` on a uniform cell-centred grid.
pub fn conformal_profile(dim: usize, u: &[f64]) -> Result<WarpedProfile> {
    let m = u.len();
    let h = std::f64::consts::PI / m as f64;
    // sample sin from the nearer pole, as for the round profile
    let phi = (0..m).map(|i| u[i].exp() * ((i.min(m - 1 - i) as f64 + 0.5) * h).sin()).collect();
    WarpedProfile::new(dim, std::f64::consts::PI, phi, u.iter().map(|v| v.exp()).collect())
}

/// Coefficients `(mu, nu, mu_tilde, gamma_tilde)` of the damped RKC2 scheme.
fn rkc_coefficients(s: usize) -> Vec<(f64, f64, f64, f64)> {
    let eps = 2.0 / 13.0;
    let w0 = 1.0 + eps / (s * s) as f64;
    let mut t = vec![0.0; s + 1];
    let mut dt = vec![0.0; s + 1];
    let mut ddt = vec![0.0; s + 1];
    t[0] = 1.0;
    t[1] = w0;
    dt[1] = 1.0;
    for j in 2..=s {
        t[j] = 2.0 * w0 * t[j - 1] - t[j - 2];
        dt[j] = 2.0 * t[j - 1] + 2.0 * w0 * dt[j - 1] - dt[j - 2];
        ddt[j] = 4.0 * dt[j - 1] + 2.0 * w0 * ddt[j - 1] - ddt[j - 2];
    }
    let w1 = dt[s] / ddt[s];
    let mut b = vec![0.0; s + 1];
    for j in 2..=s {
        b[j] = ddt[j] / (dt[j] * dt[j]);
    }
    b[0] = b[2];
    b[1] = b[2];
    let a: Vec<f64> = (0..=s).map(|j| 1.0 - b[j] * t[j]).collect();
    let mut out = vec![(0.0, 0.0, b[1] * w1, 0.0)];
    for j in 2..=s {
        let mu = 2.0 * b[j] * w0 / b[j - 1];
        let nu = -b[j] / b[j - 2];
        let mt = 2.0 * b[j] * w1 / b[j - 1];
        out.push((mu, nu, mt, -a[j - 1] * mt));
    }
    out
}

/// Conformal-slice evolution of `u` for a metric velocity `(a, b)`:
/// `u_t = b/2 - (I + C)(cos rho + sin rho u')` with `I = int_0^rho (a - b) / (2 sin)`,
/// the radial gauge field being `sin rho (I + C)`. `C` removes the first-order
/// Mobius drift of `u`.
fn conformal_rate(geom: &Geometry, u: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let m = u.len();
    let h = geom.h;
    let rho: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) * h).collect();
    let g: Vec<f64> = (0..m).map(|i| (a[i] - b[i]) / (2.0 * rho[i].sin())).collect();
    let mut integral = vec![0.0; m];
    let mut acc = 0.0;
    for i in 0..m {
        integral[i] = acc + 0.5 * h * g[i];
        acc += h * g[i];
    }
    let du = stencil::d1(u, Parity::Even, h);
    let drift: Vec<f64> = (0..m).map(|i| rho[i].cos() + rho[i].sin() * du[i]).collect();
    let n1 = (geom.dim - 1) as i32;
    let weight: Vec<f64> = rho.iter().map(|r| r.sin().powi(n1) * r.cos()).collect();
    let num: f64 = (0..m).map(|i| (0.5 * b[i] - integral[i] * drift[i]) * weight[i]).sum();
    let den: f64 = (0..m).map(|i| drift[i] * weight[i]).sum();
    let c = if den.abs() > 1e-12 { num / den } else { 0.0 };
    (0..m).map(|i| 0.5 * b[i] - (integral[i] + c) * drift[i]).collect()
}

struct WarpedStepper<'a> {
    dim: usize,
    kind: FlowKind,
    tau: f64,
    f: &'a [f64],
}

impl WarpedStepper<'_> {
    fn rhs(&self, u: &[f64]) -> Result<Vec<f64>> {
        let geom = Geometry::new(&conformal_profile(self.dim, u)?)?;
        let drive = match self.kind {
            FlowKind::Normalized => Drive::Normalized,
            FlowKind::Tau => Drive::Tau(self.tau),
            FlowKind::ModifiedTau => Drive::Modified(self.tau, self.f),
        };
        let (a, b) = velocity_of(&geom, drive);
        let out = conformal_rate(&geom, u, &a, &b);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(LabError::DegenerateMetric("non-finite velocity".into()))
        }
    }

    /// Power iteration on finite differences of the right-hand side.
    fn spectral_radius(&self, y: &[f64], f0: &[f64], v: &mut Vec<f64>) -> Result<f64> {
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ynorm = norm(y);
        let mut rho = 0.0;
        for _ in 0..20 {
            let nv = norm(v);
            let eps = 1e-7 * (1.0 + ynorm) / nv;
            let yp: Vec<f64> = y.iter().zip(v.iter()).map(|(a, b)| a + eps * b).collect();
            let fp = self.rhs(&yp)?;
            let w: Vec<f64> = fp.iter().zip(f0).map(|(a, b)| (a - b) / eps).collect();
            let nw = norm(&w);
            if !(nw > 0.0 && nw.is_finite()) {
                break;
            }
            let next = nw / nv;
            let settled = (next - rho).abs() < 0.01 * next;
            rho = next;
            *v = w.into_iter().map(|x| x / nw).collect();
            if settled {
                break;
            }
        }
        Ok(1.2 * rho)
    }

    /// One RKC2 step with `s` stages; returns the new state and the local
    /// error estimate.
    fn step(&self, y0: &[f64], f0: &[f64], dt: f64, s: usize) -> Result<(Vec<f64>, f64)> {
        let coeffs = rkc_coefficients(s);
        let n = y0.len();
        let mut prev2 = y0.to_vec();
        let mut prev: Vec<f64> = (0..n).map(|i| y0[i] + coeffs[0].2 * dt * f0[i]).collect();
        for &(mu, nu, mt, gt) in &coeffs[1..] {
            let fj = self.rhs(&prev)?;
            let next: Vec<f64> = (0..n)
                .map(|i| (1.0 - mu - nu) * y0[i] + mu * prev[i] + nu * prev2[i] + mt * dt * fj[i] + gt * dt * f0[i])
                .collect();
            prev2 = std::mem::replace(&mut prev, next);
        }
        let f1 = self.rhs(&prev)?;
        let err = (0..n)
            .map(|i| (0.8 * (y0[i] - prev[i]) + 0.4 * dt * (f0[i] + f1[i])).abs())
            .fold(0.0, f64::max);
        Ok((prev, err))
    }
}

fn record(state: &FlowState, step: f64, prev_nu: Option<f64>, stages: usize) -> Result<FlowStep> {
    let residual = state.soliton_residual()?;
    let c = &state.certificate;
    Ok(FlowStep {
        t: state.t,
        nu: c.nu,
        tau: c.tau,
        residual,
        grad_norm: residual / c.tau,
        step,
        curvature_sup: state.metric.curvature_sup()?,
        monotonicity_defect: prev_nu.map(|p| (p - c.nu).max(0.0)).unwrap_or(0.0),
        stages,
    })
}

/// Integrates `kind` from `initial` until convergence to a soliton, the
/// horizon, or the curvature ceiling. Warped initial data are first moved
/// to the conformal slice.
pub fn run_flow(initial: FlowMetric, kind: FlowKind, controls: &FlowControls) -> Result<FlowTrajectory> {
    let initial = match initial {
        FlowMetric::Warped(p) => FlowMetric::Warped(conformal_gauge(&p)?),
        h => h,
    };
    let cert = initial.certificate(None, &controls.solver)?;
    let state = FlowState::with_certificate(initial, 0.0, cert, kind)?;
    let first = record(&state, 0.0, None, 0)?;
    let mut traj = FlowTrajectory { kind, states: vec![state], steps: vec![first], termination: Termination::Horizon };
    if let Some(t) = check_stop(&first, controls) {
        traj.termination = t;
        return Ok(traj);
    }
    match &traj.states[0].metric {
        FlowMetric::Warped(_) => run_warped(&mut traj, controls),
        FlowMetric::Homogeneous(_) => run_homogeneous(&mut traj, controls),
    }
    Ok(traj)
}

fn check_stop(step: &FlowStep, controls: &FlowControls) -> Option<Termination> {
    if step.residual < controls.tol && step.grad_norm < controls.tol {
        Some(Termination::Converged)
    } else if step.curvature_sup > controls.curvature_ceiling {
        Some(Termination::BlowUp { curvature: step.curvature_sup })
    } else {
        None
    }
}

fn run_warped(traj: &mut FlowTrajectory, controls: &FlowControls) {
    let kind = traj.kind;
    let mut dt = controls.dt_initial;
    let mut power: Vec<f64> = Vec::new();
    while traj.steps.len() <= controls.max_steps {
        let state = traj.last().clone();
        let FlowMetric::Warped(profile) = &state.metric else { unreachable!() };
        if state.t >= controls.horizon {
            traj.termination = Termination::Horizon;
            return;
        }
        let index = traj.steps.len();
        let stepper = WarpedStepper { dim: profile.dim(), kind, tau: state.certificate.tau, f: &state.certificate.f.values };
        let y0: Vec<f64> = profile.lapse().iter().map(|v| v.ln()).collect();
        let fail = |msg: String| Termination::Failed { step: index, message: msg };
        let f0 = match stepper.rhs(&y0) {
            Ok(f) => f,
            Err(e) => {
                traj.termination = fail(e.to_string());
                return;
            }
        };
        if power.len() != y0.len() {
            power = (0..y0.len()).map(|i| ((i as f64) * 0.7).sin() + 0.1).collect();
        }
        let rho = match stepper.spectral_radius(&y0, &f0, &mut power) {
            Ok(r) => r,
            Err(e) => {
                traj.termination = fail(e.to_string());
                return;
            }
        };
        let s_cap = controls.max_stages as f64;
        let dt_cap = ((s_cap - 1.0).powi(2) - 1.0) / (1.54 * rho.max(1e-300));
        dt = dt.min(controls.dt_max).min(dt_cap).min(controls.horizon - state.t);

        let mut accepted = None;
        let mut last_error = String::new();
        while dt >= controls.dt_min {
            let stages = ((1.0 + (1.0 + 1.54 * dt * rho).sqrt().ceil()) as usize).max(2);
            let attempt = stepper.step(&y0, &f0, dt, stages).and_then(|(y1, err)| {
                let ratio = err / controls.error_tol;
                if !(ratio <= 1.0) {
                    return Ok(Err(ratio));
                }
                let p1 = conformal_profile(profile.dim(), &y1)?;
                let cert = minimize_nu_with(&p1, Some(&state.certificate), &controls.solver)?;
                Ok(Ok((p1, cert, ratio)))
            });
            match attempt {
                Ok(Ok((p1, cert, ratio))) if cert.converged && cert.nu >= state.certificate.nu - controls.monotone_tol => {
                    accepted = Some((p1, cert, ratio, stages, dt));
                    break;
                }
                Ok(Ok((_, cert, _))) => {
                    last_error = if cert.converged {
                        format!("nu decreased by {:.3e}", state.certificate.nu - cert.nu)
                    } else {
                        "entropy solve did not certify".into()
                    };
                    dt *= 0.5;
                }
                Ok(Err(ratio)) => {
                    last_error = format!("local error ratio {ratio:.3e}");
                    dt *= if ratio.is_finite() { (0.8 * ratio.powf(-1.0 / 3.0)).clamp(0.1, 0.5) } else { 0.25 };
                }
                Err(e) => {
                    last_error = e.to_string();
                    dt *= 0.5;
                }
            }
        }
        let Some((p1, cert, ratio, stages, used)) = accepted else {
            traj.termination = fail(format!("step size fell below {:.1e}: {last_error}", controls.dt_min));
            return;
        };
        let next = match FlowState::with_certificate(FlowMetric::Warped(p1), state.t + used, cert, kind)
            .and_then(|s| record(&s, used, Some(state.certificate.nu), stages).map(|r| (s, r)))
        {
            Ok(v) => v,
            Err(e) => {
                traj.termination = fail(e.to_string());
                return;
            }
        };
        traj.states.push(next.0);
        traj.steps.push(next.1);
        if let Some(t) = check_stop(&next.1, controls) {
            traj.termination = t;
            return;
        }
        dt = used * (0.8 * ratio.max(1e-10).powf(-1.0 / 3.0)).clamp(0.2, 2.0);
    }
    traj.termination = Termination::MaxSteps;
}

fn run_homogeneous(traj: &mut FlowTrajectory, controls: &FlowControls) {
    let kind = traj.kind;
    let rhs = |m: &HomogeneousMetric, x: &[f64]| -> Result<Vec<f64>> { flow_rhs(&m.with_scales(x.to_vec())?, kind) };
    while traj.steps.len() <= controls.max_steps {
        let state = traj.last().clone();
        let FlowMetric::Homogeneous(m) = &state.metric else { unreachable!() };
        if state.t >= controls.horizon {
            traj.termination = Termination::Horizon;
            return;
        }
        let index = traj.steps.len();
        let dt = controls.homogeneous_dt.min(controls.horizon - state.t);
        let x0 = m.scales.clone();
        let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x0.iter().zip(k).map(|(x, k)| x + a * dt * k).collect() };
        let step = (|| -> Result<(HomogeneousMetric, EntropyCertificate)> {
            let k1 = rhs(m, &x0)?;
            let k2 = rhs(m, &axpy(0.5, &k1))?;
            let k3 = rhs(m, &axpy(0.5, &k2))?;
            let k4 = rhs(m, &axpy(1.0, &k3))?;
            let x1: Vec<f64> = (0..x0.len())
                .map(|i| x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect();
            let next = m.with_scales(x1)?;
            let cert = equivariant_entropy(&next)?;
            Ok((next, cert))
        })();
        let (next, cert) = match step {
            Ok(v) => v,
            Err(LabError::DegenerateMetric(msg)) => {
                // a factor collapsed within the step
                let _ = msg;
                traj.termination = Termination::BlowUp { curvature: f64::INFINITY };
                return;
            }
            Err(e) => {
                traj.termination = Termination::Failed { step: index, message: e.to_string() };
                return;
            }
        };
        if cert.nu < state.certificate.nu - controls.monotone_tol {
            traj.termination = Termination::Failed {
                step: index,
                message: format!("nu decreased by {:.3e}", state.certificate.nu - cert.nu),
            };
            return;
        }
        let made = FlowState::with_certificate(FlowMetric::Homogeneous(next), state.t + dt, cert, kind)
            .and_then(|s| record(&s, dt, Some(state.certificate.nu), 4).map(|r| (s, r)));
        match made {
            Ok((s, r)) => {
                traj.states.push(s);
                traj.steps.push(r);
                if let Some(t) = check_stop(&r, controls) {
                    traj.termination = t;
                    return;
                }
            }
            Err(e) => {
                traj.termination = Termination::Failed { step: index, message: e.to_string() };
                return;
            }
        }
    }
    traj.termination = Termination::MaxSteps;
}

/// Fitted exponential growth rate of `|x_1 / x_2 - 1|` over the samples where
/// it stays below `window`, and whether it grows monotonically there.
pub fn asymmetry_growth(traj: &FlowTrajectory, window: f64) -> Result<(f64, bool)> {
    let mut t = Vec::new();
    let mut y = Vec::new();
    for s in &traj.states {
        let FlowMetric::Homogeneous(m) = &s.metric else {
            return Err(LabError::InvalidArgument("asymmetry is defined for two-factor homogeneous trajectories".into()));
        };
        if m.scales.len() != 2 {
            return Err(LabError::InvalidArgument("asymmetry needs exactly two factors".into()));
        }
        let d = (m.scales[0] / m.scales[1] - 1.0).abs();
        if d > window {
            break;
        }
        t.push(s.t);
        y.push(d);
    }
    if t.len() < 3 {
        return Err(LabError::InsufficientData(format!("{} samples below the window", t.len())));
    }
    let monotone = y.windows(2).all(|w| w[1] > w[0]);
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = t.iter().zip(&ly).map(|(a, b)| (a - mt) * (b - my)).sum();
    let den: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    Ok((num / den, monotone))
}
