//! Shock traces: resolution-adaptive thresholds on the most negative spatial
//! derivative, binary space-time indicator fields and false prediction rates.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::full_model::Trajectory;
use crate::spectral::{spectral_derivative, GridTransform, SpectralState};

/// Coordinate the spatial derivative is taken with respect to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeCoordinate {
    /// `∂/∂x` with `x ∈ [0, 2π)`.
    #[default]
    Radian,
    /// `∂/∂ξ` with `ξ = x/2π ∈ [0, 1)`; values are `2π` times the radian ones.
    Period,
}

impl DerivativeCoordinate {
    pub fn scale(self) -> f64 {
        match self {
            DerivativeCoordinate::Radian => 1.0,
            DerivativeCoordinate::Period => 2.0 * PI,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    /// Multiplier on the standard deviation.
    pub lambda: f64,
    /// Common evaluation grid.
    pub eval_ngrid: usize,
    /// Temporal sampling of the statistics and masks.
    pub sample_dt: f64,
    #[serde(default)]
    pub coordinate: DerivativeCoordinate,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            eval_ngrid: 256,
            sample_dt: 0.01,
            coordinate: DerivativeCoordinate::Radian,
        }
    }
}

impl ThresholdSpec {
    /// Grid used for `kmodes`: `eval_ngrid`, enlarged when it would alias.
    pub fn grid_for(&self, kmodes: usize) -> usize {
        let min = 2 * kmodes + 2;
        if self.eval_ngrid >= min && self.eval_ngrid % 2 == 0 {
            self.eval_ngrid
        } else {
            min.max(self.eval_ngrid + self.eval_ngrid % 2)
        }
    }
}

/// Where a threshold came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProvenance {
    pub sigma: Option<f64>,
    pub horizon: Option<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShockThreshold {
    pub tau: f64,
    pub dbar: f64,
    pub eta: f64,
    pub lambda: f64,
    pub kmodes: usize,
    pub ensemble_size: usize,
    pub nsamples: usize,
    pub coordinate: DerivativeCoordinate,
    #[serde(default)]
    pub provenance: ThresholdProvenance,
}

impl ShockThreshold {
    /// A fixed threshold, e.g. `±∞` for the trivial masks.
    pub fn fixed(tau: f64, kmodes: usize) -> Self {
        Self {
            tau,
            dbar: tau,
            eta: 0.0,
            lambda: 1.0,
            kmodes,
            ensemble_size: 0,
            nsamples: 0,
            coordinate: DerivativeCoordinate::Radian,
            provenance: ThresholdProvenance::default(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Evaluates `∂_x u_k` on a fixed grid for repeated snapshots.
pub struct DerivativeGrid {
    kmodes: usize,
    scale: f64,
    transform: GridTransform,
    values: Vec<f64>,
}

impl DerivativeGrid {
    pub fn new(kmodes: usize, spec: &ThresholdSpec) -> Self {
        let ngrid = spec.grid_for(kmodes);
        Self {
            kmodes,
            scale: spec.coordinate.scale(),
            transform: GridTransform::new(ngrid),
            values: vec![0.0; ngrid],
        }
    }

    pub fn ngrid(&self) -> usize {
        self.values.len()
    }

    /// Derivative of the `kmodes`-projection of `s` at every grid point.
    pub fn evaluate(&mut self, s: &SpectralState) -> &[f64] {
        let k = self.kmodes.min(s.nmodes());
        let d: Vec<_> = s.coeffs()[..k]
            .iter()
            .enumerate()
            .map(|(i, &c)| c * num_complex::Complex64::new(0.0, (i + 1) as f64 * self.scale))
            .collect();
        self.transform.synthesize(&d, &mut self.values);
        &self.values
    }

    pub fn minimum(&mut self, s: &SpectralState) -> f64 {
        self.evaluate(s).iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Minimum of `∂_x u` over the evaluation grid.
pub fn most_negative_derivative(s: &SpectralState, spec: &ThresholdSpec) -> f64 {
    let ngrid = spec.grid_for(s.nmodes());
    let mut t = GridTransform::new(ngrid);
    let mut values = vec![0.0; ngrid];
    t.synthesize(spectral_derivative(s).coeffs(), &mut values);
    values.iter().fold(f64::INFINITY, |m, &v| m.min(v)) * spec.coordinate.scale()
}

/// Snapshot step that realizes `spec.sample_dt` on `traj`.
fn sampling_step(traj: &Trajectory, spec: &ThresholdSpec) -> usize {
    let interval = traj.meta.sample_interval();
    if interval <= 0.0 || spec.sample_dt <= interval {
        1
    } else {
        (spec.sample_dt / interval).round().max(1.0) as usize
    }
}

/// Most negative derivative of the `kmodes`-projection for every sampled snapshot.
pub fn derivative_minima(traj: &Trajectory, kmodes: usize, spec: &ThresholdSpec) -> Vec<f64> {
    let mut grid = DerivativeGrid::new(kmodes, spec);
    traj.states
        .iter()
        .step_by(sampling_step(traj, spec))
        .map(|s| grid.minimum(s))
        .collect()
}

/// `τ = D̄ + λη` with population mean and standard deviation over all
/// (trajectory, time) samples.
pub fn estimate_threshold(
    trajectories: &[Trajectory],
    kmodes: usize,
    spec: &ThresholdSpec,
) -> Result<ShockThreshold> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories for threshold estimation".into()));
    }
    let per_traj: Vec<Vec<f64>> = trajectories
        .par_iter()
        .map(|t| derivative_minima(t, kmodes, spec))
        .collect();
    let samples: Vec<f64> = per_traj.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(Error::InvalidArgument("trajectories hold no snapshots".into()));
    }
    let (dbar, eta) = population_stats(&samples);
    if dbar + spec.lambda * eta >= 0.0 {
        log::warn!("non-negative shock threshold {} for {kmodes} modes", dbar + spec.lambda * eta);
    }
    Ok(ShockThreshold {
        tau: dbar + spec.lambda * eta,
        dbar,
        eta,
        lambda: spec.lambda,
        kmodes,
        ensemble_size: trajectories.len(),
        nsamples: samples.len(),
        coordinate: spec.coordinate,
        provenance: ThresholdProvenance {
            sigma: Some(trajectories[0].meta.sigma),
            horizon: trajectories[0].times.last().copied(),
            seeds: trajectories.iter().map(|t| t.meta.seed).collect(),
        },
    })
}

fn population_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Binary space-time mask, row-major `[time][grid point]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShockTraceField {
    mask: Vec<bool>,
    ngrid: usize,
    pub times: Vec<f64>,
    pub tau: f64,
}

impl ShockTraceField {
    pub fn from_mask(mask: Vec<bool>, ngrid: usize, times: Vec<f64>, tau: f64) -> Result<Self> {
        if ngrid == 0 || mask.len() != ngrid * times.len() {
            return Err(Error::InvalidArgument(format!(
                "mask of {} cells does not match {} times x {} points",
                mask.len(),
                times.len(),
                ngrid
            )));
        }
        Ok(Self {
            mask,
            ngrid,
            times,
            tau,
        })
    }

    pub fn ngrid(&self) -> usize {
        self.ngrid
    }

    pub fn ntimes(&self) -> usize {
        self.times.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn row(&self, l: usize) -> &[bool] {
        &self.mask[l * self.ngrid..(l + 1) * self.ngrid]
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Restricts to time rows `start..end`.
    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.ntimes() {
            return Err(Error::InvalidArgument(format!("row range {start}..{end} invalid")));
        }
        Self::from_mask(
            self.mask[start * self.ngrid..end * self.ngrid].to_vec(),
            self.ngrid,
            self.times[start..end].to_vec(),
            self.tau,
        )
    }

    /// CSV with one row per time: `t,c_0,...,c_{n-1}` (cells 0/1).
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        for (l, t) in self.times.iter().enumerate() {
            write!(w, "{t}")?;
            for &b in self.row(l) {
                write!(w, ",{}", b as u8)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Indicator of `∂_x u_k < τ` on the common space-time grid.
pub fn shock_trace(
    traj: &Trajectory,
    kmodes: usize,
    thr: &ShockThreshold,
    spec: &ThresholdSpec,
) -> Result<ShockTraceField> {
    if thr.kmodes != kmodes {
        return Err(Error::InvalidArgument(format!(
            "threshold estimated for {} modes applied to {kmodes}",
            thr.kmodes
        )));
    }
    if thr.coordinate != spec.coordinate && thr.tau.is_finite() {
        return Err(Error::InvalidArgument(
            "threshold and evaluation use different derivative coordinates".into(),
        ));
    }
    let mut grid = DerivativeGrid::new(kmodes, spec);
    let step = sampling_step(traj, spec);
    let mut mask = Vec::new();
    let mut times = Vec::new();
    for (s, &t) in traj.states.iter().zip(&traj.times).step_by(step) {
        mask.extend(grid.evaluate(s).iter().map(|&d| d < thr.tau));
        times.push(t);
    }
    ShockTraceField::from_mask(mask, grid.ngrid(), times, thr.tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalseRates {
    pub false_positive: f64,
    pub false_negative: f64,
    pub truth_area: usize,
    pub predicted_area: usize,
    pub hits: usize,
}

/// `R_FN = |S_truth \ S_pred| / |S_truth|`, `R_FP = |S_pred \ S_truth| / |S_truth|`,
/// with areas counted in cells of the shared mesh.
pub fn false_rates(pred: &ShockTraceField, truth: &ShockTraceField) -> Result<FalseRates> {
    if pred.ngrid != truth.ngrid || pred.ntimes() != truth.ntimes() {
        return Err(Error::InvalidArgument(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            pred.ntimes(),
            pred.ngrid,
            truth.ntimes(),
            truth.ngrid
        )));
    }
    if pred
        .times
        .iter()
        .zip(&truth.times)
        .any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
    {
        return Err(Error::InvalidArgument("mask time axes differ".into()));
    }
    let (mut hits, mut missed, mut spurious) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.mask.iter().zip(&truth.mask) {
        match (p, t) {
            (true, true) => hits += 1,
            (false, true) => missed += 1,
            (true, false) => spurious += 1,
            (false, false) => {}
        }
    }
    let truth_area = hits + missed;
    if truth_area == 0 {
        return Err(Error::EmptyTruth);
    }
    Ok(FalseRates {
        false_positive: spurious as f64 / truth_area as f64,
        false_negative: missed as f64 / truth_area as f64,
        truth_area,
        predicted_area: hits + spurious,
        hits,
    })
}
