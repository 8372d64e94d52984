use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forcing::ForcingSpec;
use crate::full_model::FullModelConfig;
use crate::reduced::ReducedConfig;
use crate::shock::{DerivativeCoordinate, ThresholdSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Reduced ensemble sizes and horizons that finish in minutes.
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Config(format!("unknown scale {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullBlock {
    pub nu: f64,
    pub nmodes: usize,
    pub dt: f64,
    pub k0: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedBlock {
    pub kmodes: usize,
    /// Full-model steps per reduced step.
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdBlock {
    pub lambda: f64,
    pub eval_ngrid: usize,
    pub sample_dt: f64,
    pub coordinate: DerivativeCoordinate,
    pub trajectories: usize,
    pub horizon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub trajectories: usize,
    pub length: f64,
    pub lags: usize,
    pub rcond: f64,
    /// Largest lag order tried by model selection (0 skips it).
    pub select_pmax: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionBlock {
    pub realizations: usize,
    pub horizon: f64,
    /// Residual noise in NAR runs; off gives the mean path.
    pub residual_noise: bool,
    /// Realizations whose space-time masks are written out.
    pub mask_dumps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssimilationBlock {
    pub realizations: usize,
    pub particles: usize,
    pub obs_std: f64,
    pub init_spread: f64,
    /// Length of the filtering window starting at `t = 0`.
    pub window: f64,
    /// Free-run prediction after the window.
    pub horizon: f64,
    /// Reduced steps between analyses.
    pub obs_every: usize,
    pub inflation: f64,
    pub localization: Option<f64>,
}

/// Full experiment description; every output is stamped with its hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sigma: f64,
    pub seed: u64,
    /// Spin-up from rest before any recorded trajectory.
    pub spinup: f64,
    /// Spacing of initial conditions drawn from the long reservoir run.
    pub ic_spacing: f64,
    pub full: FullBlock,
    pub reduced: ReducedBlock,
    pub threshold: ThresholdBlock,
    pub training: TrainingBlock,
    pub prediction: PredictionBlock,
    pub assimilation: AssimilationBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn preset(sigma: f64, scale: Scale) -> Self {
        let paper = scale == Scale::Paper;
        Self {
            sigma,
            seed: 2021,
            spinup: if paper { 50.0 } else { 20.0 },
            ic_spacing: 10.0,
            full: FullBlock {
                nu: 0.02,
                nmodes: 128,
                dt: 1e-3,
                k0: 4,
            },
            reduced: ReducedBlock { kmodes: 8, stride: 10 },
            threshold: ThresholdBlock {
                lambda: 1.0,
                eval_ngrid: 256,
                sample_dt: 0.01,
                coordinate: DerivativeCoordinate::Radian,
                trajectories: if paper { 512 } else { 20 },
                horizon: if paper { 160.0 } else { 50.0 },
            },
            training: TrainingBlock {
                trajectories: if paper { 512 } else { 64 },
                length: if paper { 160.0 } else { 40.0 },
                lags: 1,
                rcond: crate::inference::DEFAULT_RCOND,
                select_pmax: 2,
            },
            prediction: PredictionBlock {
                realizations: if paper { 200 } else { 50 },
                horizon: 10.0,
                residual_noise: false,
                mask_dumps: 1,
            },
            assimilation: AssimilationBlock {
                realizations: if paper { 200 } else { 20 },
                particles: 100,
                obs_std: 0.01,
                init_spread: 0.0254,
                window: 5.0,
                horizon: 5.0,
                obs_every: 1,
                inflation: 1.0,
                localization: None,
            },
            out_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn full_config(&self) -> FullModelConfig {
        FullModelConfig {
            nu: self.full.nu,
            nmodes: self.full.nmodes,
            dt: self.full.dt,
            forcing: ForcingSpec {
                sigma: self.sigma,
                k0: self.full.k0,
                dt: self.full.dt,
            },
        }
    }

    pub fn delta(&self) -> f64 {
        self.full.dt * self.reduced.stride as f64
    }

    pub fn reduced_config(&self) -> ReducedConfig {
        ReducedConfig {
            kmodes: self.reduced.kmodes,
            delta: self.delta(),
            nu: self.full.nu,
            forcing: ForcingSpec {
                sigma: self.sigma,
                k0: self.full.k0,
                dt: self.delta(),
            },
        }
    }

    pub fn threshold_spec(&self) -> ThresholdSpec {
        ThresholdSpec {
            lambda: self.threshold.lambda,
            eval_ngrid: self.threshold.eval_ngrid,
            sample_dt: self.threshold.sample_dt,
            coordinate: self.threshold.coordinate,
        }
    }

    /// Number of reduced steps covering `duration`.
    pub fn reduced_steps(&self, duration: f64) -> usize {
        (duration / self.delta()).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.full_config().validate()?;
        if self.reduced.stride == 0 {
            return bad("reduced stride must be positive");
        }
        if 2 * self.reduced.kmodes > self.full.nmodes {
            return bad("reduced model needs K ≤ N/2");
        }
        self.reduced_config().validate()?;
        if !(self.spinup >= 0.0) || !(self.ic_spacing > 0.0) {
            return bad("spin-up must be non-negative and IC spacing positive");
        }
        let t = &self.threshold;
        if t.trajectories == 0 || !(t.horizon > 0.0) || !(t.sample_dt > 0.0) || !t.lambda.is_finite() {
            return bad("threshold block needs trajectories, horizon and sampling step");
        }
        let whole = |x: f64, unit: f64| ((x / unit).round() * unit - x).abs() <= 1e-9 * x.abs().max(1.0);
        if !whole(t.sample_dt, self.delta()) {
            return bad("threshold sampling step must be a multiple of the reduced step");
        }
        let tr = &self.training;
        if tr.trajectories == 0 || tr.lags == 0 || !(tr.rcond > 0.0) || self.reduced_steps(tr.length) <= tr.lags {
            return bad("training block needs trajectories longer than the lag order");
        }
        if !whole(self.prediction.horizon, self.delta()) || self.prediction.horizon <= 0.0 {
            return bad("prediction horizon must be a positive multiple of the reduced step");
        }
        let a = &self.assimilation;
        if a.particles < 2 || a.obs_every == 0 || !(a.obs_std > 0.0) || !(a.init_spread >= 0.0) || !(a.inflation > 0.0) {
            return bad("assimilation block needs ≥ 2 particles, positive noise and cadence");
        }
        if !whole(a.window, self.delta()) || !whole(a.horizon, self.delta()) || a.window <= 0.0 {
            return bad("assimilation window and horizon must be multiples of the reduced step");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
