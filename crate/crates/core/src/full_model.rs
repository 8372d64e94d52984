//! High-resolution Galerkin solver for the viscous stochastic Burgers equation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etd::GalerkinStepper;
use crate::forcing::{sample_path, spectral_force_into, ForcingPath, ForcingSpec};
use crate::spectral::{grid_spacing, GridTransform, SpectralState};

/// Coefficient magnitude treated as a numerical blow-up.
pub const BLOW_UP_BOUND: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullModelConfig {
    pub nu: f64,
    pub nmodes: usize,
    pub dt: f64,
    pub forcing: ForcingSpec,
}

impl FullModelConfig {
    /// ν = 0.02, N = 128, Δt = 0.001, K0 = 4.
    pub fn standard(sigma: f64) -> Self {
        Self {
            nu: 0.02,
            nmodes: 128,
            dt: 1e-3,
            forcing: ForcingSpec {
                sigma,
                k0: 4,
                dt: 1e-3,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.forcing.validate()?;
        if !(self.nu > 0.0) {
            return Err(Error::Config("viscosity must be positive".into()));
        }
        if self.nmodes == 0 {
            return Err(Error::Config("full model needs at least one mode".into()));
        }
        if !(self.dt > 0.0) || (self.dt - self.forcing.dt).abs() > 1e-15 * self.dt {
            return Err(Error::Config(format!(
                "model step {} and forcing step {} must agree",
                self.dt, self.forcing.dt
            )));
        }
        if self.forcing.k0 > self.nmodes {
            return Err(Error::Config("more forced modes than resolved modes".into()));
        }
        Ok(())
    }
}

/// Provenance carried by every trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub nmodes: usize,
    pub nu: f64,
    /// Integrator step.
    pub dt: f64,
    /// Integrator steps between snapshots.
    pub stride: usize,
    pub sigma: f64,
    pub k0: usize,
    pub seed: u64,
}

impl TrajectoryMeta {
    pub fn sample_interval(&self) -> f64 {
        self.dt * self.stride as f64
    }
}

/// Snapshots at uniform spacing starting from `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<SpectralState>,
    pub times: Vec<f64>,
    pub meta: TrajectoryMeta,
    /// Forcing increments aligned with the snapshots (one block per interval), if kept.
    pub forcing: Option<ForcingPath>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Keeps snapshots `start..start + len` and retimes them from zero.
    pub fn slice(&self, start: usize, len: usize) -> Result<Trajectory> {
        if len == 0 || start + len > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} outside trajectory of {}",
                start + len,
                self.len()
            )));
        }
        let dt = self.meta.sample_interval();
        let forcing = match &self.forcing {
            Some(p) if len > 1 => Some(p.window(start, len - 1)?),
            _ => None,
        };
        Ok(Trajectory {
            states: self.states[start..start + len].to_vec(),
            times: (0..len).map(|i| i as f64 * dt).collect(),
            meta: self.meta.clone(),
            forcing,
        })
    }
}

fn check_blow_up(u: &[Complex64], step: usize) -> Result<()> {
    let mut max_abs = 0.0f64;
    for c in u {
        let a = c.norm();
        if !a.is_finite() {
            return Err(Error::BlowUp {
                step,
                max_abs: f64::INFINITY,
            });
        }
        max_abs = max_abs.max(a);
    }
    if max_abs > BLOW_UP_BOUND {
        return Err(Error::BlowUp { step, max_abs });
    }
    Ok(())
}

/// Full-resolution solver driven by a fine forcing path.
pub struct FullModel {
    config: FullModelConfig,
    stepper: GalerkinStepper,
    force: Vec<Complex64>,
    next: Vec<Complex64>,
}

impl FullModel {
    pub fn new(config: FullModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            stepper: GalerkinStepper::new(config.nu, config.nmodes, config.dt),
            force: vec![Complex64::new(0.0, 0.0); config.forcing.k0],
            next: vec![Complex64::new(0.0, 0.0); config.nmodes],
            config,
        })
    }

    pub fn config(&self) -> &FullModelConfig {
        &self.config
    }

    /// One step with an explicit force (entries beyond its length are unforced).
    pub fn step(&mut self, state: &mut SpectralState, force: &[Complex64], step_index: usize) -> Result<()> {
        if state.nmodes() != self.config.nmodes {
            return Err(Error::InvalidState(format!(
                "expected {} modes, got {}",
                self.config.nmodes,
                state.nmodes()
            )));
        }
        self.stepper.forced_step(state.coeffs(), force, &mut self.next);
        check_blow_up(&self.next, step_index)?;
        state.coeffs_mut().copy_from_slice(&self.next);
        Ok(())
    }

    /// Integrates `nsteps` steps of `path`, calling `visit(n, state)` at `n = 0, stride, 2·stride, …`.
    pub fn run(
        &mut self,
        path: &ForcingPath,
        u0: &SpectralState,
        nsteps: usize,
        stride: usize,
        mut visit: impl FnMut(usize, &SpectralState),
    ) -> Result<SpectralState> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        if nsteps > 0 && path.nsteps() < nsteps {
            return Err(Error::InvalidArgument(format!(
                "forcing path has {} steps, {} requested",
                path.nsteps(),
                nsteps
            )));
        }
        if (path.dt() - self.config.dt).abs() > 1e-12 * self.config.dt {
            return Err(Error::InvalidArgument("forcing path step differs from model step".into()));
        }
        let mut state = u0.clone();
        visit(0, &state);
        let sigma = self.config.forcing.sigma;
        for n in 0..nsteps {
            spectral_force_into(path, sigma, n, &mut self.force);
            let force = std::mem::take(&mut self.force);
            let r = self.step(&mut state, &force, n);
            self.force = force;
            r?;
            if (n + 1) % stride == 0 {
                visit(n + 1, &state);
            }
        }
        Ok(state)
    }
}

/// Integrates and records every `stride`-th state, starting with `u0`.
pub fn simulate(
    config: &FullModelConfig,
    path: &ForcingPath,
    u0: &SpectralState,
    nsteps: usize,
    stride: usize,
) -> Result<Trajectory> {
    let mut model = FullModel::new(*config)?;
    let mut states = Vec::with_capacity(nsteps / stride.max(1) + 1);
    model.run(path, u0, nsteps, stride, |_, s| states.push(s.clone()))?;
    let dt = config.dt * stride as f64;
    let times = (0..states.len()).map(|i| i as f64 * dt).collect();
    Ok(Trajectory {
        states,
        times,
        meta: TrajectoryMeta {
            nmodes: config.nmodes,
            nu: config.nu,
            dt: config.dt,
            stride,
            sigma: config.forcing.sigma,
            k0: config.forcing.k0,
            seed: path.seed(),
        },
        forcing: None,
    })
}

/// Runs from rest for `duration` time units under a fresh forcing path.
pub fn spin_up(config: &FullModelConfig, duration: f64, seed: u64) -> Result<SpectralState> {
    let u0 = SpectralState::zeros(config.nmodes);
    let nsteps = (duration / config.dt).round() as usize;
    if nsteps == 0 {
        return Ok(u0);
    }
    let path = sample_path(&config.forcing, nsteps, seed)?;
    FullModel::new(*config)?.run(&path, &u0, nsteps, nsteps, |_, _| {})
}

/// `max |u| · dt / Δx` with `Δx = 2π/ngrid`.
///
/// The maximum is taken on `ngrid` points, or on the coarsest alias-free grid
/// when `ngrid` cannot represent every mode (the `2N`-point grid of an `N`-mode state).
pub fn cfl(state: &SpectralState, dt: f64, ngrid: usize) -> Result<f64> {
    let synth = ngrid.max(2 * state.nmodes() + 2);
    Ok(max_abs_on_grid(state, &mut GridTransform::new(synth))? * dt / grid_spacing(ngrid))
}

pub(crate) fn max_abs_on_grid(state: &SpectralState, t: &mut GridTransform) -> Result<f64> {
    if t.ngrid() < 2 * state.nmodes() + 2 {
        return Err(Error::Aliasing {
            nmodes: state.nmodes(),
            ngrid: t.ngrid(),
        });
    }
    let mut values = vec![0.0; t.ngrid()];
    t.synthesize(state.coeffs(), &mut values);
    Ok(values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// `‖u − u_K‖² / ‖u‖²`.
pub fn unresolved_energy_fraction(state: &SpectralState, kcut: usize) -> f64 {
    let total = state.energy();
    if total == 0.0 {
        return 0.0;
    }
    let tail: f64 = state.coeffs()[kcut.min(state.nmodes())..]
        .iter()
        .map(|c| 2.0 * c.norm_sqr())
        .sum();
    tail / total
}
