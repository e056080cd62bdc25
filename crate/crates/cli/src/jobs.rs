//! Job execution: build the metric a config describes, run the job, collect
//! named quantities and auxiliary tables.

use crate::config::{Backend, ExperimentConfig, Job, Shape};
use crate::error::{CliError, Result};
use crate::expect::Value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use soliton_lab::entropy::{minimize_nu_with, EntropyCertificate, SolverControls};
use soliton_lab::flow::{asymmetry_growth, run_flow, FlowControls, FlowMetric, FlowTrajectory, Termination};
use soliton_lab::geometry::{ScalarProfile, WarpedProfile};
use soliton_lab::homogeneous::{
    equivariant_entropy, stability_matrix, stability_matrix_generic, EinsteinFactor, HomogeneousMetric,
};
use soliton_lab::stability::{isd_candidates, InvariantSymTensor, StabilityContext};
use soliton_lab::variation::{
    check_first_variation, check_second_variation, check_second_variation_homogeneous, fit_trajectory,
    obstruction_integral, VariationReport, VariationTolerances,
};
use soliton_lab::LabError;
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Everything a job produced.
#[derive(Debug, Clone, Default)]
pub struct JobOutput {
    pub quantities: BTreeMap<String, Value>,
    /// File name to contents.
    pub files: BTreeMap<String, String>,
}

impl JobOutput {
    fn num(&mut self, key: &str, v: f64) {
        self.quantities.insert(key.into(), Value::Number(v));
    }

    fn label(&mut self, key: &str, v: impl Into<String>) {
        self.quantities.insert(key.into(), Value::Label(v.into()));
    }
}

/// Column order of `spectrum.csv`.
pub const SPECTRUM_HEADER: [&str; 2] = ["index", "eigenvalue"];
/// Column order of `variations.csv`.
pub const VARIATIONS_HEADER: [&str; 7] =
    ["trial", "order", "analytic", "richardson", "relative_error", "min_fd_ratio", "pass"];

enum Metric {
    Warped(WarpedProfile),
    Homogeneous(HomogeneousMetric),
}

fn bump(amplitude: f64) -> impl Fn(f64) -> f64 {
    move |r: f64| r.sin() + amplitude * (2.0 * r).sin() * r.sin().powi(2)
}

/// Smooth invariant tensor with `a = b` at both poles, drawn from `rng`.
pub fn random_tensor(rng: &mut ChaCha8Rng, x: &[f64]) -> InvariantSymTensor {
    let cb: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ca: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = x.iter().map(|r| (0..5).map(|k| cb[k] * (k as f64 * r).cos()).sum()).collect();
    let a = x
        .iter()
        .zip(&b)
        .map(|(r, b)| b + r.sin().powi(2) * (0..4).map(|k| ca[k] * (k as f64 * r).cos()).sum::<f64>())
        .collect();
    InvariantSymTensor::warped(a, b)
}

/// Fixed smooth invariant tensor used by the `tensor` shape.
fn fixed_tensor(x: &[f64]) -> InvariantSymTensor {
    let b: Vec<f64> = x.iter().map(|r| (2.0 * r).cos()).collect();
    let a = x.iter().zip(&b).map(|(r, b)| b + r.sin().powi(2) * r.cos()).collect();
    InvariantSymTensor::warped(a, b)
}

/// Positions on the unit-length parameter, for tensors defined on `[0, pi]`.
fn unit_centres(p: &WarpedProfile) -> Vec<f64> {
    let s = PI / p.length();
    p.centres().into_iter().map(|r| r * s).collect()
}

fn build(cfg: &ExperimentConfig) -> std::result::Result<Metric, LabError> {
    let g = &cfg.geometry;
    let pert = &cfg.perturbation;
    match cfg.experiment.backend {
        Backend::Warped => {
            let (n, m) = (g.dim.unwrap_or(2), g.cells.unwrap_or(0));
            let round = WarpedProfile::round(n, m, g.radius)?;
            let p = match pert.shape {
                Shape::None | Shape::Asymmetry => round,
                Shape::Bump => WarpedProfile::from_fn(n, m, PI, bump(pert.amplitude))?.scaled(g.radius * g.radius)?,
                Shape::Tensor => {
                    let h = fixed_tensor(&unit_centres(&round));
                    let (a, b) = h.components()?;
                    round.perturbed(a, b, pert.amplitude)?
                }
                Shape::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(pert.seed);
                    let h = random_tensor(&mut rng, &unit_centres(&round));
                    let (a, b) = h.components()?;
                    round.perturbed(a, b, pert.amplitude)?
                }
            };
            Ok(Metric::Warped(p))
        }
        Backend::Homogeneous => {
            let dims = g.factors.clone().unwrap_or_default();
            let factors = dims.iter().map(|k| EinsteinFactor::unit_sphere(*k)).collect::<std::result::Result<Vec<_>, _>>()?;
            let base = match (g.soliton_tau, &g.scales) {
                (Some(tau), _) => HomogeneousMetric::soliton(factors, tau)?,
                (None, Some(s)) => HomogeneousMetric::new(factors, s.clone())?,
                (None, None) => HomogeneousMetric::new(factors, vec![1.0; dims.len()])?,
            };
            let eps = pert.amplitude;
            let scales: Vec<f64> = match pert.shape {
                Shape::Asymmetry => base
                    .scales
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x * if i % 2 == 0 { 1.0 + eps } else { 1.0 - eps })
                    .collect(),
                Shape::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(pert.seed);
                    base.scales.iter().map(|x| x * (1.0 + eps * rng.gen_range(-1.0..1.0))).collect()
                }
                _ => base.scales.clone(),
            };
            Ok(Metric::Homogeneous(base.with_scales(scales)?))
        }
    }
}

fn solver_controls(cfg: &ExperimentConfig) -> SolverControls {
    SolverControls { tol: cfg.solver.tol, ..Default::default() }
}

fn flow_controls(cfg: &ExperimentConfig) -> FlowControls {
    let s = &cfg.solver;
    FlowControls {
        horizon: s.horizon,
        tol: s.flow_tol,
        curvature_ceiling: s.curvature_ceiling,
        max_steps: s.max_steps,
        solver: solver_controls(cfg),
        ..Default::default()
    }
}

fn certificate(cfg: &ExperimentConfig, p: &WarpedProfile) -> std::result::Result<EntropyCertificate, LabError> {
    let c = minimize_nu_with(p, None, &solver_controls(cfg))?;
    if !c.converged {
        return Err(LabError::EntropyUndefined(format!("entropy solve did not certify (residual {:.3e})", c.max_residual())));
    }
    Ok(c)
}

/// Runs the configured job. Nothing is written here.
pub fn run(cfg: &ExperimentConfig) -> Result<JobOutput> {
    let job = cfg.experiment.job;
    let wrap = |source: LabError| CliError::Job { job: job.name().into(), source };
    let metric = build(cfg).map_err(wrap)?;
    let out = match job {
        Job::Entropy => entropy(cfg, &metric),
        Job::Flow => flow(cfg, metric, false),
        Job::Spectrum => spectrum(cfg, &metric),
        Job::Variations => variations(cfg, &metric),
        Job::Lojasiewicz => flow(cfg, metric, true),
        Job::Isd => isd(cfg, &metric),
    }
    .map_err(wrap)?;
    for key in cfg.expect.keys() {
        if !out.quantities.contains_key(key) {
            return Err(CliError::MissingQuantity { job: job.name().into(), key: key.clone() });
        }
    }
    Ok(out)
}

type JobResult = std::result::Result<JobOutput, LabError>;

fn record_certificate(out: &mut JobOutput, c: &EntropyCertificate) {
    out.num("nu", c.nu);
    out.num("tau", c.tau);
    out.num("max_residual", c.max_residual());
    out.num("residual_el1", c.residual_el1);
    out.num("residual_el2", c.residual_el2);
    out.num("residual_constraint", c.residual_constraint);
}

fn entropy(cfg: &ExperimentConfig, metric: &Metric) -> JobResult {
    let mut out = JobOutput::default();
    let c = match metric {
        Metric::Warped(p) => certificate(cfg, p)?,
        Metric::Homogeneous(m) => equivariant_entropy(m)?,
    };
    record_certificate(&mut out, &c);
    out.num("iterations", c.iterations as f64);
    out.files.insert("certificate.json".into(), c.to_json());
    Ok(out)
}

fn termination_label(t: &Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::Horizon => "horizon",
        Termination::BlowUp { .. } => "blow_up",
        Termination::MaxSteps => "max_steps",
        Termination::Failed { .. } => "failed",
    }
}

fn flow(cfg: &ExperimentConfig, metric: Metric, fit: bool) -> JobResult {
    let start = match metric {
        Metric::Warped(p) => FlowMetric::Warped(p),
        Metric::Homogeneous(m) => FlowMetric::Homogeneous(m),
    };
    let traj = run_flow(start, cfg.solver.flow, &flow_controls(cfg))?;
    let mut out = trajectory_quantities(cfg, &traj)?;
    if fit {
        let f = fit_trajectory(&traj)?;
        out.num("sigma", f.sigma);
        out.num("constant", f.constant);
        out.num("fit_residual", f.fit_residual);
        out.num("worst_ratio", f.worst_ratio);
        out.num("temporal_exponent", f.temporal_exponent);
        out.label("rate_consistent", f.rate_consistent.to_string());
        out.files.insert("fit.json".into(), serde_json::to_string_pretty(&f).expect("fits serialize"));
    }
    Ok(out)
}

fn trajectory_quantities(cfg: &ExperimentConfig, traj: &FlowTrajectory) -> JobResult {
    let mut out = JobOutput::default();
    let first = traj.steps.first().expect("trajectories hold the initial state");
    let last = traj.steps.last().expect("trajectories hold the initial state");
    let min_dnu = traj.steps.windows(2).map(|w| w[1].nu - w[0].nu).fold(f64::INFINITY, f64::min);
    out.num("initial_nu", first.nu);
    out.num("final_nu", last.nu);
    out.num("final_tau", last.tau);
    out.num("final_t", last.t);
    out.num("final_residual", last.residual);
    out.num("nu_increase", last.nu - first.nu);
    out.num("min_dnu", if min_dnu.is_finite() { min_dnu } else { 0.0 });
    out.num("steps", (traj.steps.len() - 1) as f64);
    out.num("max_curvature", traj.steps.iter().map(|s| s.curvature_sup).fold(0.0, f64::max));
    out.label("termination", termination_label(&traj.termination));
    out.label("converged", traj.converged().to_string());
    if let FlowMetric::Homogeneous(m) = &traj.last().metric {
        if m.scales.len() == 2 {
            let (rate, monotone) = asymmetry_growth(traj, cfg.solver.growth_window)?;
            out.num("growth_rate", rate);
            out.label("growth_monotone", monotone.to_string());
        }
    }
    out.files.insert("trajectory.csv".into(), traj.to_csv());
    Ok(out)
}

fn spectrum_csv(values: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SPECTRUM_HEADER).expect("writing to memory");
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:.15e}")]).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv output is utf-8")
}

fn spectrum(cfg: &ExperimentConfig, metric: &Metric) -> JobResult {
    let mut out = JobOutput::default();
    match metric {
        Metric::Warped(p) => {
            let c = certificate(cfg, p)?;
            let r = StabilityContext::new(p, &c)?.spectrum_on_v(cfg.solver.keep)?;
            out.num("top_eigenvalue", r.top().unwrap_or(f64::NAN));
            out.num("kernel_dim", r.kernel_dim as f64);
            out.label("classification", r.classification.label());
            out.files.insert("spectrum.csv".into(), spectrum_csv(&r.eigenvalues));
            out.files.insert("spectrum.json".into(), r.to_json());
        }
        Metric::Homogeneous(m) => {
            let closed = stability_matrix(m)?;
            let generic = stability_matrix_generic(m)?;
            out.num("tau", closed.tau);
            out.num("top_eigenvalue", closed.eigenvalues.first().copied().unwrap_or(f64::NAN));
            out.num("generic_top", generic.eigenvalues.first().copied().unwrap_or(f64::NAN));
            out.label("classification", closed.classification().label());
            out.label("generic_classification", generic.classification().label());
            out.files.insert("spectrum.csv".into(), spectrum_csv(&closed.eigenvalues));
        }
    }
    Ok(out)
}

fn variations_csv(reports: &[VariationReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(VARIATIONS_HEADER).expect("writing to memory");
    for (i, r) in reports.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.order.to_string(),
            format!("{:.15e}", r.analytic),
            format!("{:.15e}", r.richardson),
            format!("{:.6e}", r.relative_error),
            format!("{:.6}", min_ratio(r)),
            r.pass.to_string(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv output is utf-8")
}

fn min_ratio(r: &VariationReport) -> f64 {
    r.convergence_ratios.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Random directions checked against finite differences: second variation on
/// `V` at a soliton, first variation elsewhere. Trials run on the rayon pool.
fn variations(cfg: &ExperimentConfig, metric: &Metric) -> JobResult {
    let tol = VariationTolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.perturbation.seed);
    let trials = cfg.solver.trials;
    let reports: Vec<VariationReport> = match metric {
        Metric::Warped(p) => {
            let c = certificate(cfg, p)?;
            let x = unit_centres(p);
            let dirs: Vec<InvariantSymTensor> = (0..trials).map(|_| random_tensor(&mut rng, &x)).collect();
            match StabilityContext::new(p, &c) {
                Ok(ctx) => dirs
                    .par_iter()
                    .map(|h| check_second_variation(p, &c, &ctx.project_v(h)?, &tol))
                    .collect::<std::result::Result<_, _>>()?,
                Err(LabError::NotASoliton { .. }) => {
                    dirs.par_iter().map(|h| check_first_variation(p, h, None, &tol)).collect::<std::result::Result<_, _>>()?
                }
                Err(e) => return Err(e),
            }
        }
        Metric::Homogeneous(m) => {
            let k = m.scales.len();
            let dirs: Vec<Vec<f64>> = (0..trials).map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            dirs.par_iter().map(|e| check_second_variation_homogeneous(m, e, &tol)).collect::<std::result::Result<_, _>>()?
        }
    };
    let mut out = JobOutput::default();
    out.num("order", reports.first().map(|r| r.order as f64).unwrap_or(0.0));
    out.num("worst_relative_error", reports.iter().map(|r| r.relative_error).fold(0.0, f64::max));
    out.num("min_fd_ratio", reports.iter().map(min_ratio).fold(f64::INFINITY, f64::min));
    out.num("trials_passed", reports.iter().filter(|r| r.pass).count() as f64);
    out.files.insert("variations.csv".into(), variations_csv(&reports));
    Ok(out)
}

fn isd(cfg: &ExperimentConfig, metric: &Metric) -> JobResult {
    let Metric::Warped(p) = metric else {
        return Err(LabError::InvalidArgument("the isd job needs the warped backend".into()));
    };
    let c = certificate(cfg, p)?;
    let r = isd_candidates(p, &c)?;
    let mut out = JobOutput::default();
    out.num("mu", r.mu);
    out.num("conformal_modes", r.conformal_modes.len() as f64);
    out.num("discarded_modes", r.conformal_modes.iter().filter(|m| m.discarded).count() as f64);
    out.num("max_relative_size", r.conformal_modes.iter().map(|m| m.relative_size).fold(0.0, f64::max));
    out.num("nearest_eigenvalue", r.nearest_eigenvalue);
    out.num("tt_dimension", r.tt_dimension as f64);
    out.num("einstein_kernel", r.einstein_kernel.len() as f64);
    out.num("candidates", r.candidates.len() as f64);
    if !r.conformal_modes.is_empty() {
        // first zonal eigenfunction of a round sphere
        let s = PI / p.length();
        let v = ScalarProfile::from_fn(p, |x| (s * x).cos());
        match obstruction_integral(p, &c, &v) {
            Ok(o) => out.num("obstruction", o),
            Err(LabError::NotIsdGenerator(_)) => {}
            Err(e) => return Err(e),
        }
    }
    out.files.insert("isd.json".into(), serde_json::to_string_pretty(&r).expect("reports serialize"));
    Ok(out)
}
