//! Run records and the output directory layout.
//!
//! A run named `name` writes `<out>/<name>/` containing `record.json`,
//! `config.json` (the effective config), `verdicts.csv` and the job's own
//! files. Everything is staged in a sibling directory and renamed into place
//! once complete, so a failed run leaves nothing behind. An existing record
//! is never overwritten.

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::expect::{verdict_table, Value, VerdictRow};
use crate::jobs::{self, JobOutput};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub job: String,
    /// SHA-256 of the effective config.
    pub config_hash: String,
    pub version: String,
    pub tolerance_scale: f64,
    /// Seconds.
    pub wall_time: f64,
    pub quantities: BTreeMap<String, Value>,
    pub verdicts: Vec<VerdictRow>,
    pub pass: bool,
}

/// Checks every expectation against the measured quantities.
pub fn verdicts(cfg: &ExperimentConfig, quantities: &BTreeMap<String, Value>, scale: f64) -> Vec<VerdictRow> {
    cfg.expectations()
        .into_iter()
        .filter_map(|(key, e)| {
            let measured = quantities.get(&key)?.clone();
            let e = e.scaled(scale);
            let (pass, deviation) = e.check(&measured);
            Some(VerdictRow {
                experiment: cfg.experiment.name.clone(),
                quantity: key,
                expectation: e.to_string(),
                measured,
                deviation,
                pass,
            })
        })
        .collect()
}

/// Runs the job and assembles its record without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig, scale: f64) -> Result<(RunRecord, JobOutput)> {
    let clock = Instant::now();
    let out = jobs::run(cfg)?;
    let wall_time = clock.elapsed().as_secs_f64();
    let verdicts = verdicts(cfg, &out.quantities, scale);
    let record = RunRecord {
        name: cfg.experiment.name.clone(),
        job: cfg.experiment.job.name().into(),
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").into(),
        tolerance_scale: scale,
        wall_time,
        pass: verdicts.iter().all(|v| v.pass),
        quantities: out.quantities.clone(),
        verdicts,
    };
    Ok((record, out))
}

fn write_new(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new().write(true).create_new(true).open(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

/// Writes a completed run under `out_dir`; returns the record directory.
pub fn write(out_dir: &Path, cfg: &ExperimentConfig, record: &RunRecord, output: &JobOutput) -> Result<PathBuf> {
    let target = out_dir.join(&record.name);
    if target.exists() {
        return Err(CliError::RecordExists(target.display().to_string()));
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let staging = out_dir.join(format!(".{}.staging-{}", record.name, std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| CliError::io(&staging, e))?;
    let staged = (|| {
        write_new(&staging.join("record.json"), &serde_json::to_string_pretty(record).expect("records serialize"))?;
        write_new(&staging.join("config.json"), &serde_json::to_string_pretty(cfg).expect("configs serialize"))?;
        write_new(&staging.join("verdicts.csv"), &verdict_table(&record.verdicts))?;
        for (name, text) in &output.files {
            write_new(&staging.join(name), text)?;
        }
        if target.exists() {
            return Err(CliError::RecordExists(target.display().to_string()));
        }
        fs::rename(&staging, &target).map_err(|e| CliError::io(&target, e))
    })();
    if staged.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    staged.map(|_| target)
}

/// Runs `cfg` and writes its record; a failed job writes nothing.
pub fn run_and_write(out_dir: &Path, cfg: &ExperimentConfig, scale: f64) -> Result<(RunRecord, PathBuf)> {
    let target = out_dir.join(&cfg.experiment.name);
    if target.exists() {
        return Err(CliError::RecordExists(target.display().to_string()));
    }
    let (record, output) = execute(cfg, scale)?;
    let dir = write(out_dir, cfg, &record, &output)?;
    Ok((record, dir))
}
