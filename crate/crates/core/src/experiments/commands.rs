//! File-level drivers behind the command-line subcommands.
//!
//! Output layout under the run directory:
//!
//! ```text
//! trajectories/threshold_0000.traj ...   full resolution
//! trajectories/training_0000.traj ...    projected to K, coarse forcing attached
//! thresholds/tau_8.json tau_16.json tau_128.json diagnostics.json
//! params/nar.json fit_report.json coefficients.csv
//! predict/rates.csv masks_r0000_{truth,truncated,nar}.csv
//! assimilate/rates.csv mode_error.csv mean_r0000_{truncated,nar}.traj
//! report/summary.json boxplot.csv
//! timings.csv                             wall-clock only, not reproducible
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{self, stream, Diagnostics, ModeError, TrainOutcome};
use super::stats::{merge_rates, read_rates, summarize, write_boxplot_csv, write_rates, BoxSummary, Stamp, Stamped};
use super::trajectory_file::{hash_bytes, Stage, TrajectoryFile};
use crate::error::{Error, Result};
use crate::full_model::Trajectory;
use crate::reduced::NarParameters;
use crate::shock::ShockThreshold;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleSet {
    Threshold,
    Training,
    Both,
}

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    pub fn trajectories(&self, prefix: &str) -> Result<Vec<PathBuf>> {
        let d = self.root.join("trajectories");
        let mut files: Vec<PathBuf> = fs::read_dir(&d)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", d.display()))))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(prefix) && n.ends_with(".traj"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no {prefix}_*.traj files in {}", d.display()),
            )));
        }
        Ok(files)
    }

    pub fn threshold_path(&self, kmodes: usize) -> PathBuf {
        self.root.join("thresholds").join(format!("tau_{kmodes}.json"))
    }

    pub fn params_path(&self) -> PathBuf {
        self.root.join("params").join("nar.json")
    }

    fn log_timing(&self, stage: &str, started: Instant) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join("timings.csv"))?;
        writeln!(f, "{stage},{:.3}", started.elapsed().as_secs_f64())?;
        Ok(())
    }
}

fn stamp(cfg: &ExperimentConfig) -> Stamp {
    Stamp::new(cfg.hash(), cfg.seed)
}

fn write_json<T: Serialize>(path: &Path, cfg: &ExperimentConfig, body: &T) -> Result<()> {
    let doc = Stamped {
        stamp: stamp(cfg),
        body,
    };
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Trajectory>> {
    paths
        .iter()
        .map(|p| TrajectoryFile::load(p).map(|f| f.trajectory))
        .collect()
}

/// Writes the threshold and/or training ensembles.
pub fn cmd_generate(cfg: &ExperimentConfig, run: &RunDir, set: EnsembleSet) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let dir = run.dir("trajectories")?;
    let hash = hash_bytes(&cfg.hash());
    let mut written = Vec::new();
    if set != EnsembleSet::Training {
        let trajs = pipeline::generate_ensemble(cfg, stream::THRESHOLD, cfg.threshold.trajectories, cfg.threshold.horizon, None)?;
        for (i, t) in trajs.into_iter().enumerate() {
            let p = dir.join(format!("threshold_{i:04}.traj"));
            TrajectoryFile {
                stage: Stage::Full,
                config_hash: hash,
                trajectory: t,
            }
            .save(&p)?;
            written.push(p);
        }
    }
    if set != EnsembleSet::Threshold {
        // only the resolved modes are needed downstream
        let trajs = pipeline::generate_ensemble(
            cfg,
            stream::TRAINING,
            cfg.training.trajectories,
            cfg.training.length,
            Some(cfg.reduced.kmodes),
        )?;
        for (i, t) in trajs.into_iter().enumerate() {
            let p = dir.join(format!("training_{i:04}.traj"));
            TrajectoryFile {
                stage: Stage::Full,
                config_hash: hash,
                trajectory: t,
            }
            .save(&p)?;
            written.push(p);
        }
    }
    run.log_timing("generate", started)?;
    Ok(written)
}

/// Thresholds for `K`, `2K`, `N` plus CFL and energy diagnostics of the ensemble.
pub fn cmd_threshold(cfg: &ExperimentConfig, run: &RunDir) -> Result<(Vec<ShockThreshold>, Diagnostics)> {
    let started = Instant::now();
    let trajs = load_all(&run.trajectories("threshold")?)?;
    let thresholds = pipeline::thresholds(cfg, &trajs)?;
    let diag = pipeline::diagnostics(cfg, &trajs)?;
    run.dir("thresholds")?;
    for t in &thresholds {
        write_json(&run.threshold_path(t.kmodes), cfg, t)?;
    }
    write_json(&run.root.join("thresholds").join("diagnostics.json"), cfg, &diag)?;
    run.log_timing("threshold", started)?;
    Ok((thresholds, diag))
}

pub fn cmd_train(cfg: &ExperimentConfig, run: &RunDir) -> Result<TrainOutcome> {
    let started = Instant::now();
    let trajs = load_all(&run.trajectories("training")?)?;
    let outcome = pipeline::train(cfg, &trajs)?;
    let dir = run.dir("params")?;
    write_json(&run.params_path(), cfg, &outcome.params)?;
    write_json(&dir.join("fit_report.json"), cfg, &outcome)?;
    let mut w = create(&dir.join("coefficients.csv"))?;
    writeln!(w, "{}", stamp(cfg).header_line())?;
    writeln!(w, "k,lag,cv,cr,cr_plus_one,cf,cw,sigma_g,condition")?;
    let p = &outcome.params;
    for k in 0..p.kmodes {
        for j in 0..p.p {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                k + 1,
                j + 1,
                p.cv[k][j],
                p.cr[k][j],
                1.0 + p.cr[k][j],
                p.cf[k][j],
                p.cw[k][j],
                p.sigma_g[k],
                outcome.condition[k]
            )?;
        }
    }
    w.flush()?;
    run.log_timing("train", started)?;
    Ok(outcome)
}

fn load_inputs(cfg: &ExperimentConfig, run: &RunDir, params: Option<&Path>) -> Result<(NarParameters, ShockThreshold)> {
    let params = NarParameters::load(&params.map_or_else(|| run.params_path(), Path::to_path_buf))?;
    if params.kmodes != cfg.reduced.kmodes || (params.delta - cfg.delta()).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "parameters are for K = {}, delta = {}; config has K = {}, delta = {}",
            params.kmodes,
            params.delta,
            cfg.reduced.kmodes,
            cfg.delta()
        )));
    }
    let thr = ShockThreshold::load(&run.threshold_path(cfg.reduced.kmodes))?;
    Ok((params, thr))
}

pub fn cmd_predict(cfg: &ExperimentConfig, run: &RunDir, params: Option<&Path>) -> Result<pipeline::PredictOutcome> {
    let started = Instant::now();
    let (params, thr) = load_inputs(cfg, run, params)?;
    let out = pipeline::predict(cfg, &params, &thr)?;
    let dir = run.dir("predict")?;
    write_rates(&stamp(cfg), &out.rows, create(&dir.join("rates.csv"))?)?;
    for m in &out.masks {
        for (name, field) in [("truth", &m.truth), ("truncated", &m.truncated), ("nar", &m.nar)] {
            let mut w = create(&dir.join(format!("masks_r{:04}_{name}.csv", m.realization)))?;
            writeln!(w, "{}", stamp(cfg).header_line())?;
            field.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    run.log_timing("predict", started)?;
    Ok(out)
}

fn write_mode_errors(cfg: &ExperimentConfig, errs: &[ModeError], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", stamp(cfg).header_line())?;
    writeln!(w, "realization,model,step,time,abs_error,spread")?;
    for e in errs {
        for (n, (err, spread)) in e.errors.iter().zip(&e.spreads).enumerate() {
            writeln!(
                w,
                "{},{},{n},{},{err},{spread}",
                e.realization,
                e.model,
                n as f64 * cfg.delta()
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_assimilate(cfg: &ExperimentConfig, run: &RunDir, params: Option<&Path>) -> Result<pipeline::AssimilateOutcome> {
    let started = Instant::now();
    let (params, thr) = load_inputs(cfg, run, params)?;
    let out = pipeline::assimilate(cfg, &params, &thr)?;
    let dir = run.dir("assimilate")?;
    write_rates(&stamp(cfg), &out.rows, create(&dir.join("rates.csv"))?)?;
    write_mode_errors(cfg, &out.mode_errors, &dir.join("mode_error.csv"))?;
    let hash = hash_bytes(&cfg.hash());
    for (r, model, traj) in &out.means {
        TrajectoryFile {
            stage: Stage::Assimilation,
            config_hash: hash,
            trajectory: traj.clone(),
        }
        .save(&dir.join(format!("mean_r{r:04}_{model}.traj")))?;
    }
    run.log_timing("assimilate", started)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub inputs: Vec<Stamp>,
    pub groups: std::collections::BTreeMap<String, BoxSummary>,
    pub diagnostics: Option<Diagnostics>,
}

/// Summarizes rate tables; with no explicit inputs, uses whatever the run directory holds.
pub fn cmd_report(cfg: &ExperimentConfig, run: &RunDir, inputs: &[PathBuf]) -> Result<Report> {
    let inputs: Vec<PathBuf> = if inputs.is_empty() {
        ["predict", "assimilate"]
            .iter()
            .map(|d| run.root.join(d).join("rates.csv"))
            .filter(|p| p.exists())
            .collect()
    } else {
        inputs.to_vec()
    };
    if inputs.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "no rate tables to report on",
        )));
    }
    let tables = inputs
        .iter()
        .map(|p| read_rates(std::io::BufReader::new(File::open(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let (stamps, rows) = merge_rates(tables)?;
    let diag_path = run.root.join("thresholds").join("diagnostics.json");
    let diagnostics = if diag_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&diag_path)?)?)
    } else {
        None
    };
    let report = Report {
        inputs: stamps,
        groups: summarize(&rows)?,
        diagnostics,
    };
    let dir = run.dir("report")?;
    write_json(&dir.join("summary.json"), cfg, &report)?;
    let mut w = create(&dir.join("boxplot.csv"))?;
    write_boxplot_csv(&report.groups, &mut w)?;
    w.flush()?;
    Ok(report)
}
