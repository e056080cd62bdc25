use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use soliton_lab_cli::config::{ExperimentConfig, Job};
use soliton_lab_cli::expect::verdict_table;
use soliton_lab_cli::record::run_and_write;
use soliton_lab_cli::{CliError, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "soliton-lab", version, about = "Run entropy, flow and stability experiments from config files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Directory receiving one record directory per experiment.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides `perturbation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiplies every `x +- tol` tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tolerance_scale: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Entropy minimizer and certificate.
    Entropy(Single),
    /// Flow trajectory.
    Flow(Single),
    /// Stability spectrum on V.
    Spectrum(Single),
    /// Analytic variations against finite differences.
    Variations(Single),
    /// Flow followed by a Lojasiewicz fit of its tail.
    Lojasiewicz(Single),
    /// Integrability screen for the kernel.
    Isd(Single),
    /// Every config given, or every `*.toml` in a directory.
    Suite {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Single {
    #[arg(long)]
    config: PathBuf,
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.perturbation.seed = s;
    }
    Ok(cfg)
}

fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "toml"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    if !(c.tolerance_scale > 0.0 && c.tolerance_scale.is_finite()) {
        return Err(CliError::Config {
            path: "--tolerance-scale".into(),
            line: None,
            field: "tolerance_scale".into(),
            message: format!("must be positive, got {}", c.tolerance_scale),
        });
    }
    let (paths, job) = match &cli.command {
        Command::Entropy(s) => (vec![s.config.clone()], Some(Job::Entropy)),
        Command::Flow(s) => (vec![s.config.clone()], Some(Job::Flow)),
        Command::Spectrum(s) => (vec![s.config.clone()], Some(Job::Spectrum)),
        Command::Variations(s) => (vec![s.config.clone()], Some(Job::Variations)),
        Command::Lojasiewicz(s) => (vec![s.config.clone()], Some(Job::Lojasiewicz)),
        Command::Isd(s) => (vec![s.config.clone()], Some(Job::Isd)),
        Command::Suite { configs } => (expand(configs)?, None),
    };
    // parse everything before running anything
    let mut cfgs = Vec::new();
    for p in &paths {
        let cfg = load(p, c.seed)?;
        if let Some(j) = job {
            if cfg.experiment.job != j {
                return Err(CliError::Config {
                    path: p.display().to_string(),
                    line: None,
                    field: "experiment.job".into(),
                    message: format!("config runs `{}`, not `{}`", cfg.experiment.job.name(), j.name()),
                });
            }
        }
        if cfgs.iter().any(|o: &ExperimentConfig| o.experiment.name == cfg.experiment.name) {
            return Err(CliError::Config {
                path: p.display().to_string(),
                line: None,
                field: "experiment.name".into(),
                message: format!("`{}` is used by another config in this batch", cfg.experiment.name),
            });
        }
        cfgs.push(cfg);
    }
    // each job owns its record directory; results come back in config order
    let results: Vec<_> = cfgs.par_iter().map(|cfg| run_and_write(&c.out, cfg, c.tolerance_scale)).collect();
    let mut rows = Vec::new();
    let mut pass = true;
    let mut first_error = None;
    for (cfg, r) in cfgs.iter().zip(results) {
        match r {
            Ok((record, dir)) => {
                eprintln!("{}: {} in {:.2} s -> {}", record.name, if record.pass { "pass" } else { "FAIL" }, record.wall_time, dir.display());
                pass &= record.pass;
                rows.extend(record.verdicts);
            }
            Err(e) => {
                eprintln!("{}: error: {e}", cfg.experiment.name);
                first_error.get_or_insert(e);
            }
        }
    }
    print!("{}", verdict_table(&rows));
    match first_error {
        Some(e) => Err(e),
        None => Ok(pass),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.common.workers {
        pool = pool.num_threads(n);
    }
    if let Err(e) = pool.build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
