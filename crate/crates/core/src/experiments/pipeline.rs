//! Experiment stages on top of the solver, threshold, inference and filter modules.
//!
//! Every random stream is derived from the master seed as
//! `derive_seed(derive_seed(master, stream), index)` with the stream tags below.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::stats::RateRow;
use crate::enkf::{from_real, run_filter, to_real, AnalysisOptions, Ensemble, ObservationModel, ReducedForecast};
use crate::error::{Error, Result};
use crate::forcing::{coarsen, derive_seed, rng_from_seed, sample_path};
use crate::full_model::{cfl, simulate, spin_up, unresolved_energy_fraction, FullModel, Trajectory, TrajectoryMeta};
use crate::inference::{convergence_diagnostic, fit_data, select_model, ConvergenceReport, ModelSelection, TrainingData};
use crate::reduced::{simulate_reduced, NarParameters, ReducedModel};
use crate::shock::{estimate_threshold, false_rates, shock_trace, ShockThreshold, ShockTraceField};
use crate::spectral::{project, SpectralState};

pub mod stream {
    pub const THRESHOLD: u64 = 1;
    pub const TRAINING: u64 = 2;
    pub const PREDICTION_ICS: u64 = 3;
    pub const PREDICTION: u64 = 4;
    pub const PREDICTION_NOISE: u64 = 5;
    pub const ASSIMILATION_ICS: u64 = 6;
    pub const ASSIMILATION: u64 = 7;
    pub const OBSERVATION: u64 = 8;
    pub const INITIAL_ENSEMBLE: u64 = 9;
    pub const MEMBER_NOISE: u64 = 10;
    pub const FILTER: u64 = 11;
}

pub fn stream_seed(master: u64, stream: u64, index: u64) -> u64 {
    derive_seed(derive_seed(master, stream), index)
}

pub const TRUNCATED: &str = "truncated";
pub const NAR: &str = "nar";
pub const STAGE_PREDICTION: &str = "prediction";
pub const STAGE_ASSIMILATION: &str = "assimilation";
/// Free ensemble run after the filtering window.
pub const STAGE_AFTER_ASSIMILATION: &str = "post_assimilation";

/// Full-model ensemble: each member spun up from rest, then recorded every
/// reduced step for `horizon` with its coarse forcing attached. With `keep`,
/// snapshots are projected to that many modes as they are produced.
pub fn generate_ensemble(
    cfg: &ExperimentConfig,
    stream_tag: u64,
    count: usize,
    horizon: f64,
    keep: Option<usize>,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let full = cfg.full_config();
    let stride = cfg.reduced.stride;
    let nsteps = cfg.reduced_steps(horizon) * stride;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let spin_seed = stream_seed(cfg.seed, stream_tag, 2 * i as u64);
            let path_seed = stream_seed(cfg.seed, stream_tag, 2 * i as u64 + 1);
            let u0 = spin_up(&full, cfg.spinup, spin_seed)?;
            let path = sample_path(&full.forcing, nsteps, path_seed)?;
            let mut tr = simulate(&full, &path, &u0, nsteps, stride)?;
            tr.forcing = Some(coarsen(&path, stride)?);
            if let Some(k) = keep {
                tr.states = tr.states.iter().map(|s| project(s, k)).collect::<Result<_>>()?;
                tr.meta.nmodes = k;
            }
            Ok(tr)
        })
        .collect()
}

/// Snapshot statistics of an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// CFL on the `2N`-point grid.
    pub cfl_mean: f64,
    pub cfl_max: f64,
    /// Unresolved energy fraction beyond `K`, in percent.
    pub energy_mean: f64,
    pub energy_std: f64,
    pub energy_max: f64,
    pub samples: usize,
}

pub fn diagnostics(cfg: &ExperimentConfig, trajs: &[Trajectory]) -> Result<Diagnostics> {
    let ngrid = 2 * cfg.full.nmodes;
    let per: Vec<Vec<(f64, f64)>> = trajs
        .par_iter()
        .map(|t| {
            t.states
                .iter()
                .map(|s| Ok((cfl(s, t.meta.dt, ngrid)?, 100.0 * unresolved_energy_fraction(s, cfg.reduced.kmodes))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<(f64, f64)> = per.into_iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::InvalidArgument("no snapshots for diagnostics".into()));
    }
    let n = all.len() as f64;
    let cfl_mean = all.iter().map(|x| x.0).sum::<f64>() / n;
    let energy_mean = all.iter().map(|x| x.1).sum::<f64>() / n;
    let energy_var = all.iter().map(|x| (x.1 - energy_mean).powi(2)).sum::<f64>() / n;
    Ok(Diagnostics {
        cfl_mean,
        cfl_max: all.iter().map(|x| x.0).fold(0.0, f64::max),
        energy_mean,
        energy_std: energy_var.sqrt(),
        energy_max: all.iter().map(|x| x.1).fold(0.0, f64::max),
        samples: all.len(),
    })
}

/// Thresholds for the `K`-mode, `2K`-mode and full resolutions, in that order.
pub fn thresholds(cfg: &ExperimentConfig, trajs: &[Trajectory]) -> Result<Vec<ShockThreshold>> {
    let spec = cfg.threshold_spec();
    let k = cfg.reduced.kmodes;
    [k, 2 * k, cfg.full.nmodes]
        .into_iter()
        .map(|m| estimate_threshold(trajs, m, &spec))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: NarParameters,
    pub selection: Option<ModelSelection>,
    pub convergence: Option<ConvergenceReport>,
    /// Condition number of each mode's normal matrix.
    pub condition: Vec<f64>,
}

pub fn train(cfg: &ExperimentConfig, trajs: &[Trajectory]) -> Result<TrainOutcome> {
    let rc = cfg.reduced_config();
    let data = TrainingData::from_trajectories(trajs, &rc)?;
    let lags = cfg.training.lags;
    let mut params = fit_data(&data, &rc, lags, cfg.training.rcond)?;
    params.provenance = format!(
        "{} trajectories x {} time units, sigma {}, seed {}",
        data.len(),
        cfg.training.length,
        cfg.sigma,
        cfg.seed
    );
    let system = crate::inference::assemble(&data, &rc, lags)?;
    let condition = system
        .a
        .iter()
        .map(|a| {
            let sv = a.clone().singular_values();
            sv.max() / sv.min()
        })
        .collect();
    let selection = if cfg.training.select_pmax > 0 {
        Some(select_model(&data, &rc, cfg.training.select_pmax)?)
    } else {
        None
    };
    let convergence = if data.len() >= 4 {
        Some(convergence_diagnostic(&data, &rc, lags, &[0.25, 0.5, 1.0])?)
    } else if data.len() >= 2 {
        Some(convergence_diagnostic(&data, &rc, lags, &[0.5, 1.0])?)
    } else {
        None
    };
    Ok(TrainOutcome {
        params,
        selection,
        convergence,
        condition,
    })
}

/// `count` states `ic_spacing` apart along one long run after spin-up.
pub fn reservoir(cfg: &ExperimentConfig, stream_tag: u64, count: usize) -> Result<Vec<SpectralState>> {
    let full = cfg.full_config();
    let mut state = spin_up(&full, cfg.spinup, stream_seed(cfg.seed, stream_tag, 0))?;
    let chunk = (cfg.ic_spacing / full.dt).round() as usize;
    let mut model = FullModel::new(full)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        out.push(state.clone());
        if i + 1 < count {
            let path = sample_path(&full.forcing, chunk, stream_seed(cfg.seed, stream_tag, i as u64 + 1))?;
            state = model.run(&path, &state, chunk, chunk, |_, _| {})?;
        }
    }
    Ok(out)
}

/// Truth, truncated and NAR masks of one realization.
#[derive(Clone, Debug)]
pub struct MaskSet {
    pub realization: usize,
    pub truth: ShockTraceField,
    pub truncated: ShockTraceField,
    pub nar: ShockTraceField,
}

#[derive(Clone, Debug, Default)]
pub struct PredictOutcome {
    pub rows: Vec<RateRow>,
    pub masks: Vec<MaskSet>,
}

fn reduced_trajectory_meta(cfg: &ExperimentConfig, seed: u64) -> TrajectoryMeta {
    TrajectoryMeta {
        nmodes: cfg.reduced.kmodes,
        nu: cfg.full.nu,
        dt: cfg.delta(),
        stride: 1,
        sigma: cfg.sigma,
        k0: cfg.full.k0,
        seed,
    }
}

/// Noise-free initial data: full model vs truncated and NAR from the projected state.
pub fn predict(cfg: &ExperimentConfig, params: &NarParameters, thr: &ShockThreshold) -> Result<PredictOutcome> {
    cfg.validate()?;
    let n = cfg.prediction.realizations;
    let ics = reservoir(cfg, stream::PREDICTION_ICS, n)?;
    let full = cfg.full_config();
    let rc = cfg.reduced_config();
    let spec = cfg.threshold_spec();
    let k = cfg.reduced.kmodes;
    let stride = cfg.reduced.stride;
    let coarse_steps = cfg.reduced_steps(cfg.prediction.horizon);
    let nar = ReducedModel::Nar(params.clone());
    let per: Vec<(Vec<RateRow>, Option<MaskSet>)> = ics
        .par_iter()
        .enumerate()
        .map(|(r, u0)| {
            let path = sample_path(&full.forcing, coarse_steps * stride, stream_seed(cfg.seed, stream::PREDICTION, r as u64))?;
            let truth_traj = simulate(&full, &path, u0, coarse_steps * stride, stride)?;
            let coarse = coarsen(&path, stride)?;
            let v0 = project(u0, k)?;
            let noise = cfg
                .prediction
                .residual_noise
                .then(|| stream_seed(cfg.seed, stream::PREDICTION_NOISE, r as u64));
            let tr = simulate_reduced(&ReducedModel::Truncated, &rc, &coarse, &v0, coarse_steps, None)?;
            let nr = simulate_reduced(&nar, &rc, &coarse, &v0, coarse_steps, noise)?;
            let truth = shock_trace(&truth_traj, k, thr, &spec)?;
            let mt = shock_trace(&tr, k, thr, &spec)?;
            let mn = shock_trace(&nr, k, thr, &spec)?;
            let row = |model: &str, m: &ShockTraceField| -> Result<RateRow> {
                let rates = false_rates(m, &truth)?;
                Ok(RateRow {
                    realization: r,
                    model: model.into(),
                    stage: STAGE_PREDICTION.into(),
                    false_positive: rates.false_positive,
                    false_negative: rates.false_negative,
                    truth_area: rates.truth_area,
                })
            };
            let rows = match (row(TRUNCATED, &mt), row(NAR, &mn)) {
                (Ok(a), Ok(b)) => vec![a, b],
                (Err(Error::EmptyTruth), _) => {
                    log::warn!("realization {r}: no true shock cells, rates undefined");
                    Vec::new()
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            let masks = (r < cfg.prediction.mask_dumps).then(|| MaskSet {
                realization: r,
                truth,
                truncated: mt,
                nar: mn,
            });
            Ok((rows, masks))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = PredictOutcome::default();
    for (rows, masks) in per {
        out.rows.extend(rows);
        out.masks.extend(masks);
    }
    Ok(out)
}

/// Ensemble-mean error of the real part of mode `K` during the filtering window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeError {
    pub realization: usize,
    pub model: String,
    pub errors: Vec<f64>,
    pub spreads: Vec<f64>,
}

impl ModeError {
    /// Mean error over the second half of the window.
    pub fn late_mean(&self) -> f64 {
        let half = &self.errors[self.errors.len() / 2..];
        half.iter().sum::<f64>() / half.len() as f64
    }
}

#[derive(Clone, Debug, Default)]
pub struct AssimilateOutcome {
    pub rows: Vec<RateRow>,
    pub mode_errors: Vec<ModeError>,
    /// Ensemble-mean trajectories `(realization, model, mean)` for the dumped realizations.
    pub means: Vec<(usize, String, Trajectory)>,
}

/// Filtering on noisy observations over the window, then free ensemble prediction.
pub fn assimilate(cfg: &ExperimentConfig, params: &NarParameters, thr: &ShockThreshold) -> Result<AssimilateOutcome> {
    cfg.validate()?;
    let a = cfg.assimilation;
    let ics = reservoir(cfg, stream::ASSIMILATION_ICS, a.realizations)?;
    let mut out = AssimilateOutcome::default();
    let per = ics
        .iter()
        .enumerate()
        .map(|(r, u0)| assimilate_one(cfg, params, thr, r, u0))
        .collect::<Result<Vec<_>>>()?;
    for (rows, errs, means) in per {
        out.rows.extend(rows);
        out.mode_errors.extend(errs);
        out.means.extend(means);
    }
    Ok(out)
}

type OneAssimilation = (Vec<RateRow>, Vec<ModeError>, Vec<(usize, String, Trajectory)>);

fn assimilate_one(
    cfg: &ExperimentConfig,
    params: &NarParameters,
    thr: &ShockThreshold,
    r: usize,
    u0: &SpectralState,
) -> Result<OneAssimilation> {
    let a = cfg.assimilation;
    let full = cfg.full_config();
    let rc = cfg.reduced_config();
    let spec = cfg.threshold_spec();
    let k = cfg.reduced.kmodes;
    let stride = cfg.reduced.stride;
    let window = cfg.reduced_steps(a.window);
    let total = window + cfg.reduced_steps(a.horizon);
    let path = sample_path(&full.forcing, total * stride, stream_seed(cfg.seed, stream::ASSIMILATION, r as u64))?;
    let truth_traj = simulate(&full, &path, u0, total * stride, stride)?;
    let coarse = coarsen(&path, stride)?;
    let truth_k: Vec<DVector<f64>> = truth_traj
        .states
        .iter()
        .map(|s| Ok(to_real(&project(s, k)?)))
        .collect::<Result<_>>()?;

    let mut obs_rng = rng_from_seed(stream_seed(cfg.seed, stream::OBSERVATION, r as u64));
    let noisy: Vec<DVector<f64>> = truth_k[..=window]
        .iter()
        .map(|x| x.map(|v| v + a.obs_std * crate::enkf::normal(&mut obs_rng)))
        .collect();
    let mut ens_rng = rng_from_seed(stream_seed(cfg.seed, stream::INITIAL_ENSEMBLE, r as u64));
    let initial = Ensemble::gaussian(&noisy[0], a.init_spread, a.particles, &mut ens_rng);
    let observations: Vec<Option<DVector<f64>>> = (0..total)
        .map(|n| {
            let m = n + 1;
            (m <= window && m % a.obs_every == 0).then(|| noisy[m].clone())
        })
        .collect();
    let om = ObservationModel::identity(2 * k, a.obs_std)?;
    let options = AnalysisOptions {
        inflation: a.inflation,
        localization: a.localization,
    };
    let truth_mask = shock_trace(&truth_traj, k, thr, &spec)?;
    let split_time = a.window + 1e-9 * cfg.delta();
    let stage_rows = |m: &ShockTraceField| -> (usize, usize) {
        let assim_end = m.times.iter().take_while(|t| **t <= split_time).count();
        (assim_end, m.ntimes())
    };

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut means = Vec::new();
    for (name, model) in [(TRUNCATED, ReducedModel::Truncated), (NAR, ReducedModel::Nar(params.clone()))] {
        let forecast = ReducedForecast {
            config: rc,
            model,
            path: coarse.clone(),
            stochastic: true,
            seed: stream_seed(cfg.seed, stream::MEMBER_NOISE, r as u64),
        };
        let (_, rec) = run_filter(
            &forecast,
            &om,
            &observations,
            initial.clone(),
            &options,
            stream_seed(cfg.seed, stream::FILTER, r as u64),
            None,
        )?;
        let states = rec
            .means
            .iter()
            .map(|x| from_real(x.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        let mean_traj = Trajectory {
            times: (0..states.len()).map(|i| i as f64 * cfg.delta()).collect(),
            states,
            meta: reduced_trajectory_meta(cfg, coarse.seed()),
            forcing: None,
        };
        let mask = shock_trace(&mean_traj, k, thr, &spec)?;
        let (split, end) = stage_rows(&mask);
        for (stage, lo, hi) in [(STAGE_ASSIMILATION, 0, split), (STAGE_AFTER_ASSIMILATION, split, end)] {
            if hi <= lo {
                continue;
            }
            let rates = false_rates(&mask.rows(lo, hi)?, &truth_mask.rows(lo, hi)?);
            let rates = match rates {
                Ok(x) => x,
                Err(Error::EmptyTruth) => {
                    log::warn!("realization {r}: no true shock cells in the {stage} stage");
                    continue;
                }
                Err(e) => return Err(e),
            };
            rows.push(RateRow {
                realization: r,
                model: name.into(),
                stage: stage.into(),
                false_positive: rates.false_positive,
                false_negative: rates.false_negative,
                truth_area: rates.truth_area,
            });
        }
        let re = 2 * (k - 1);
        errors.push(ModeError {
            realization: r,
            model: name.into(),
            errors: (0..=window).map(|n| (rec.means[n][re] - truth_k[n][re]).abs()).collect(),
            spreads: (0..=window).map(|n| rec.spreads[n][re]).collect(),
        });
        if r < cfg.prediction.mask_dumps {
            means.push((r, name.to_string(), mean_traj));
        }
    }
    Ok((rows, errors, means))
}
