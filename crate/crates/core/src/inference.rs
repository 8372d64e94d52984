//! Least-squares estimation of NAR closure coefficients.
//!
//! Each complex feature and response contributes its real and imaginary parts
//! as two real rows, so coefficients stay real. The response at step `n` is
//! `(v^n − v^{n−1})/δ − R̂^δ(v^{n−1}) − f̂^{n−1}`, which is exactly `Φ^{n−1}`
//! plus the scaled residual under the model. The normal equations are
//! normalized by the number of samples; solves use an SVD pseudo-inverse of
//! the diagonally equilibrated matrix with a relative singular-value cutoff.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{spectral_force_into, ForcingPath};
use crate::full_model::Trajectory;
use crate::reduced::{closure_features, LagEntry, NarParameters, ReducedConfig, ReducedModel, ReducedStepper};
use crate::spectral::{project, SpectralState};

pub const DEFAULT_RCOND: f64 = 1e-10;
/// Fraction of every trajectory held out by [`select_model`].
pub const HOLDOUT_FRACTION: f64 = 0.2;

pub const FAMILIES: [&str; 4] = ["cv", "cR", "cf", "cw"];

/// K-mode states sampled at `δ` with the coarse forcing over each interval.
#[derive(Clone, Debug)]
pub struct TrainingTrajectory {
    pub states: Vec<SpectralState>,
    pub forcing: ForcingPath,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingData {
    pub trajectories: Vec<TrainingTrajectory>,
    pub sigma: f64,
    pub seeds: Vec<u64>,
}

impl TrainingData {
    /// Projects full-model trajectories (sampled at `δ`, forcing kept) to `K` modes.
    pub fn from_trajectories(trajs: &[Trajectory], config: &ReducedConfig) -> Result<Self> {
        let mut data = TrainingData {
            sigma: config.forcing.sigma,
            ..Default::default()
        };
        for t in trajs {
            let dt = t.meta.sample_interval();
            if (dt - config.delta).abs() > 1e-9 * config.delta {
                return Err(Error::InvalidArgument(format!(
                    "trajectory sampled every {dt}, reduced step is {}",
                    config.delta
                )));
            }
            let forcing = t
                .forcing
                .clone()
                .ok_or_else(|| Error::InvalidArgument("training trajectory carries no forcing".into()))?;
            let states = t
                .states
                .iter()
                .map(|s| project(s, config.kmodes))
                .collect::<Result<Vec<_>>>()?;
            data.seeds.push(t.meta.seed);
            data.trajectories.push(TrainingTrajectory { states, forcing });
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// First `count` trajectories.
    pub fn subset(&self, count: usize) -> Self {
        let count = count.min(self.len());
        Self {
            trajectories: self.trajectories[..count].to_vec(),
            sigma: self.sigma,
            seeds: self.seeds.iter().take(count).copied().collect(),
        }
    }

    /// Keeps snapshots `[start, end)` of every trajectory.
    fn time_window(&self, frac_start: f64, frac_end: f64) -> Result<Self> {
        let mut out = Self {
            sigma: self.sigma,
            seeds: self.seeds.clone(),
            ..Default::default()
        };
        for t in &self.trajectories {
            let n = t.states.len();
            let a = (frac_start * n as f64).floor() as usize;
            let b = ((frac_end * n as f64).floor() as usize).min(n);
            if b <= a + 1 {
                return Err(Error::InvalidArgument("trajectory too short to split".into()));
            }
            out.trajectories.push(TrainingTrajectory {
                states: t.states[a..b].to_vec(),
                forcing: t.forcing.window(a, b - a - 1)?,
            });
        }
        Ok(out)
    }
}

/// Per-mode normal equations, averaged over samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSystem {
    pub kmodes: usize,
    pub p: usize,
    pub nu: f64,
    pub delta: f64,
    pub sigma: f64,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
    /// Mean squared response per mode.
    pub yy: Vec<f64>,
    pub count: usize,
}

impl RegressionSystem {
    fn empty(config: &ReducedConfig, p: usize) -> Self {
        let m = 4 * p;
        Self {
            kmodes: config.kmodes,
            p,
            nu: config.nu,
            delta: config.delta,
            sigma: config.forcing.sigma,
            a: vec![DMatrix::zeros(m, m); config.kmodes],
            b: vec![DVector::zeros(m); config.kmodes],
            yy: vec![0.0; config.kmodes],
            count: 0,
        }
    }

    /// Sample-weighted mean of two systems.
    fn merge(mut self, other: &Self) -> Self {
        let total = self.count + other.count;
        if total == 0 {
            return self;
        }
        let (wa, wb) = (
            self.count as f64 / total as f64,
            other.count as f64 / total as f64,
        );
        for k in 0..self.kmodes {
            self.a[k] = &self.a[k] * wa + &other.a[k] * wb;
            self.b[k] = &self.b[k] * wa + &other.b[k] * wb;
            self.yy[k] = self.yy[k] * wa + other.yy[k] * wb;
        }
        self.count = total;
        self
    }

    /// Mean squared one-step residual `|response − Φθ|²` of mode `k` (1-based).
    pub fn residual_mean_square(&self, k: usize, theta: &[f64]) -> f64 {
        let i = k - 1;
        let t = DVector::from_column_slice(theta);
        let quad = t.dot(&(&self.a[i] * &t));
        (self.yy[i] - 2.0 * t.dot(&self.b[i]) + quad).max(0.0)
    }
}

/// Feature rows and responses of every usable step of one trajectory, fed to `visit(k, features, response)`.
fn visit_samples(
    traj: &TrainingTrajectory,
    stepper: &mut ReducedStepper,
    p: usize,
    mut visit: impl FnMut(usize, &[Complex64], Complex64),
) -> Result<usize> {
    let cfg = *stepper.config();
    let n = traj.states.len();
    if n <= p {
        return Err(Error::InvalidArgument(format!(
            "trajectory of {n} snapshots is too short for {p} lags"
        )));
    }
    if traj.forcing.nsteps() < n - 1 {
        return Err(Error::InvalidArgument("forcing shorter than trajectory".into()));
    }
    let mut force = vec![Complex64::new(0.0, 0.0); cfg.forcing.k0];
    let entries: Vec<LagEntry> = (0..n - 1)
        .map(|i| {
            spectral_force_into(&traj.forcing, cfg.forcing.sigma, i, &mut force);
            stepper.lag_entry(traj.states[i].coeffs(), &force)
        })
        .collect();
    let mut window = Vec::with_capacity(p);
    for step in p..n {
        window.clear();
        window.extend((1..=p).map(|j| entries[step - j].clone()));
        let features = closure_features(&window, p, cfg.nu, cfg.delta);
        let prev = &window[0];
        let next = traj.states[step].coeffs();
        for k in 0..cfg.kmodes {
            let y = (next[k] - prev.v[k]) / cfg.delta - prev.r[k] - prev.f[k];
            visit(k, &features[k], y);
        }
    }
    Ok(n - p)
}

fn assemble_one(traj: &TrainingTrajectory, config: &ReducedConfig, p: usize) -> Result<RegressionSystem> {
    let mut sys = RegressionSystem::empty(config, p);
    let mut stepper = ReducedStepper::new(*config, ReducedModel::Truncated)?;
    let m = 4 * p;
    let count = visit_samples(traj, &mut stepper, p, |k, phi, y| {
        let a = &mut sys.a[k];
        for r in 0..m {
            for c in r..m {
                a[(r, c)] += phi[r].re * phi[c].re + phi[r].im * phi[c].im;
            }
            sys.b[k][r] += y.re * phi[r].re + y.im * phi[r].im;
        }
        sys.yy[k] += y.norm_sqr();
    })?;
    let inv = 1.0 / count as f64;
    for k in 0..config.kmodes {
        for r in 0..m {
            for c in r..m {
                let v = sys.a[k][(r, c)] * inv;
                sys.a[k][(r, c)] = v;
                sys.a[k][(c, r)] = v;
            }
        }
        sys.b[k] *= inv;
        sys.yy[k] *= inv;
    }
    sys.count = count;
    Ok(sys)
}

/// Normal equations over all trajectories (parallel, merged in input order).
pub fn assemble(data: &TrainingData, config: &ReducedConfig, p: usize) -> Result<RegressionSystem> {
    config.validate()?;
    if p == 0 {
        return Err(Error::InvalidArgument("lag order must be positive".into()));
    }
    let parts = data
        .trajectories
        .par_iter()
        .map(|t| assemble_one(t, config, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts
        .iter()
        .fold(RegressionSystem::empty(config, p), |acc, s| acc.merge(s)))
}

/// Minimum-norm solution of `A θ = b` with singular values below `rcond·s_max` dropped.
pub fn solve_pinv(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Option<DVector<f64>> {
    let n = a.nrows();
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = a[(i, i)];
            if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }
        })
        .collect();
    if scale.iter().all(|s| *s == 0.0) {
        return None;
    }
    let s = DVector::from_vec(scale);
    let scaled = DMatrix::from_fn(n, n, |r, c| a[(r, c)] * s[r] * s[c]);
    let rhs = b.component_mul(&s);
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = rcond * smax;
    let u = svd.u.as_ref()?;
    let vt = svd.v_t.as_ref()?;
    let mut y = DVector::zeros(n);
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > cutoff {
            let coef = u.column(i).dot(&rhs) / sv;
            y += vt.row(i).transpose() * coef;
        }
    }
    Some(y.component_mul(&s))
}

/// Per-mode pseudo-inverse solve; `σ^g_k` is the std of the unscaled residual `δ·(response − Φθ)`.
pub fn fit(system: &RegressionSystem, rcond: f64) -> Result<NarParameters> {
    let config = ReducedConfig {
        kmodes: system.kmodes,
        delta: system.delta,
        nu: system.nu,
        forcing: crate::forcing::ForcingSpec {
            sigma: system.sigma,
            k0: 1,
            dt: system.delta,
        },
    };
    let mut params = NarParameters::zeros(&config, system.p);
    for k in 1..=system.kmodes {
        let theta = solve_pinv(&system.a[k - 1], &system.b[k - 1], rcond)
            .ok_or(Error::DegenerateSystem { mode: k })?;
        params.set_theta(k, theta.as_slice());
        params.sigma_g[k - 1] = system.delta * system.residual_mean_square(k, theta.as_slice()).sqrt();
    }
    params.provenance = format!("least squares over {} samples, rcond {rcond:e}", system.count);
    Ok(params)
}

/// [`fit`] with `σ^g` recomputed from the residuals directly rather than
/// from the normal-equation moments, which lose precision when the fit is tight.
pub fn fit_data(data: &TrainingData, config: &ReducedConfig, p: usize, rcond: f64) -> Result<NarParameters> {
    let system = assemble(data, config, p)?;
    let mut params = fit(&system, rcond)?;
    params.sigma_g = one_step_error(data, config, &params)?
        .into_iter()
        .map(f64::sqrt)
        .collect();
    Ok(params)
}

/// Mean squared one-step prediction error (noise off), per mode.
pub fn one_step_error(data: &TrainingData, config: &ReducedConfig, params: &NarParameters) -> Result<Vec<f64>> {
    let p = params.p;
    let parts = data
        .trajectories
        .par_iter()
        .map(|t| {
            let mut stepper = ReducedStepper::new(*config, ReducedModel::Truncated)?;
            let mut sum = vec![0.0; config.kmodes];
            let count = visit_samples(t, &mut stepper, p, |k, phi, y| {
                let theta = params.theta(k + 1);
                let pred: Complex64 = theta.iter().zip(phi).map(|(c, f)| *c * f).sum();
                sum[k] += (config.delta * (y - pred)).norm_sqr();
            })?;
            Ok((sum, count))
        })
        .collect::<Result<Vec<_>>>()?;
    let total: usize = parts.iter().map(|(_, c)| c).sum();
    let mut out = vec![0.0; config.kmodes];
    for (sum, _) in &parts {
        for (o, s) in out.iter_mut().zip(sum) {
            *o += s;
        }
    }
    Ok(out.into_iter().map(|s| s / total.max(1) as f64).collect())
}

/// Share of the fitted closure energy `θᵀAθ` carried by each family, summed over modes.
pub fn family_energy(system: &RegressionSystem, params: &NarParameters) -> [f64; 4] {
    let p = system.p;
    let mut energy = [0.0; 4];
    for k in 1..=system.kmodes {
        let theta = params.theta(k);
        let a = &system.a[k - 1];
        for (f, e) in energy.iter_mut().enumerate() {
            let idx = f * p..(f + 1) * p;
            for r in idx.clone() {
                for c in idx.clone() {
                    *e += theta[r] * a[(r, c)] * theta[c];
                }
            }
        }
    }
    let total: f64 = energy.iter().sum();
    if total > 0.0 {
        energy.iter_mut().for_each(|e| *e /= total);
    }
    energy
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub fractions: Vec<f64>,
    pub trajectories: Vec<usize>,
    pub estimates: Vec<NarParameters>,
    /// Max relative change of retained coefficients between the two largest fractions.
    pub max_relative_change: f64,
}

/// Coefficients whose own share `θ_i² A_ii` of the mode's fitted energy exceeds this are retained.
const RETAINED_SHARE: f64 = 1e-3;

fn retained(system: &RegressionSystem, params: &NarParameters) -> Vec<Vec<bool>> {
    (1..=system.kmodes)
        .map(|k| {
            let theta = params.theta(k);
            let a = &system.a[k - 1];
            let total: f64 = theta
                .iter()
                .enumerate()
                .map(|(i, t)| t * t * a[(i, i)])
                .sum();
            theta
                .iter()
                .enumerate()
                .map(|(i, t)| total > 0.0 && t * t * a[(i, i)] >= RETAINED_SHARE * total)
                .collect()
        })
        .collect()
}

/// Refits on nested leading subsets of the trajectories.
pub fn convergence_diagnostic(
    data: &TrainingData,
    config: &ReducedConfig,
    p: usize,
    fractions: &[f64],
) -> Result<ConvergenceReport> {
    if fractions.len() < 2 {
        return Err(Error::InvalidArgument("convergence needs at least two fractions".into()));
    }
    let mut sorted = fractions.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut report = ConvergenceReport {
        fractions: sorted.clone(),
        trajectories: Vec::new(),
        estimates: Vec::new(),
        max_relative_change: 0.0,
    };
    let mut last_system = None;
    for &frac in &sorted {
        let count = ((frac * data.len() as f64).round() as usize).clamp(1, data.len());
        let sub = data.subset(count);
        let system = assemble(&sub, config, p)?;
        report.estimates.push(fit(&system, DEFAULT_RCOND)?);
        report.trajectories.push(count);
        last_system = Some(system);
    }
    let system = last_system.expect("at least two fractions");
    let n = report.estimates.len();
    let (prev, best) = (&report.estimates[n - 2], &report.estimates[n - 1]);
    let keep = retained(&system, best);
    let mut worst = 0.0f64;
    for k in 1..=config.kmodes {
        let (a, b) = (prev.theta(k), best.theta(k));
        for i in 0..a.len() {
            if keep[k - 1][i] {
                worst = worst.max((a[i] - b[i]).abs() / b[i].abs());
            }
        }
    }
    report.max_relative_change = worst;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSelection {
    pub chosen_p: usize,
    /// Held-out mean squared one-step error summed over modes, for `p = 1..=pmax`.
    pub heldout_error: Vec<f64>,
    /// Energy share per family for the chosen order, in [`FAMILIES`] order.
    pub family_energy: [f64; 4],
    pub negligible_families: Vec<String>,
}

/// Families with less than this share of fitted energy are reported as negligible.
const NEGLIGIBLE_SHARE: f64 = 1e-3;

/// Fits `p = 1..=pmax` on the leading 80% of each trajectory and picks the
/// smallest order within 1% of the best held-out one-step error.
pub fn select_model(data: &TrainingData, config: &ReducedConfig, pmax: usize) -> Result<ModelSelection> {
    if pmax == 0 {
        return Err(Error::InvalidArgument("pmax must be positive".into()));
    }
    let train = data.time_window(0.0, 1.0 - HOLDOUT_FRACTION)?;
    // the held-out window keeps pmax snapshots of overlap for the lags
    let mut errors = Vec::with_capacity(pmax);
    let mut fits = Vec::with_capacity(pmax);
    for p in 1..=pmax {
        let system = assemble(&train, config, p)?;
        let params = fit(&system, DEFAULT_RCOND)?;
        let test = holdout(data, p)?;
        errors.push(one_step_error(&test, config, &params)?.iter().sum::<f64>());
        fits.push((system, params));
    }
    let best = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let chosen = errors
        .iter()
        .position(|e| *e <= best * 1.01)
        .unwrap_or(0);
    let (system, params) = &fits[chosen];
    let energy = family_energy(system, params);
    Ok(ModelSelection {
        chosen_p: chosen + 1,
        heldout_error: errors,
        family_energy: energy,
        negligible_families: FAMILIES
            .iter()
            .zip(energy)
            .filter(|(_, e)| *e < NEGLIGIBLE_SHARE)
            .map(|(f, _)| f.to_string())
            .collect(),
    })
}

/// Last fifth of every trajectory, preceded by `p` snapshots of lag context.
fn holdout(data: &TrainingData, p: usize) -> Result<TrainingData> {
    let mut out = TrainingData {
        sigma: data.sigma,
        seeds: data.seeds.clone(),
        ..Default::default()
    };
    for t in &data.trajectories {
        let n = t.states.len();
        let split = ((1.0 - HOLDOUT_FRACTION) * n as f64).floor() as usize;
        let start = split.saturating_sub(p);
        if n <= start + p {
            return Err(Error::InvalidArgument("trajectory too short to hold out".into()));
        }
        out.trajectories.push(TrainingTrajectory {
            states: t.states[start..].to_vec(),
            forcing: t.forcing.window(start, n - start - 1)?,
        });
    }
    Ok(out)
}
