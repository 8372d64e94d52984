//! K-mode reduced dynamics: the Galerkin truncated system and the nonlinear
//! autoregression (NAR) closure model.
//!
//! Both advance with step `δ` through
//! `v^n = v^{n−1} + δ[R̂^δ(v^{n−1}) + f̂^{n−1} + Φ^{n−1}] + ĝ^n`,
//! where `R̂^δ` is the ETDRK4 increment of the truncated system. The
//! truncated system has `Φ = 0` and `ĝ = 0`. The NAR closure is
//!
//! ```text
//! Φ_k = Σ_{j=1..p} [ c^v_{k,j} v^{n−j}_k + c^R_{k,j} R̂^δ_k(v^{n−j}) + c^f_{k,j} f̂^{n−j}_k
//!                   + c^w_{k,j} Σ_l ṽ^{n−1}_l ṽ^{n−j}_{k−l} ]
//! ```
//!
//! with the inner sum over pairs where exactly one of `|l|`, `|k−l|` lies in
//! `(K, 2K]` and the other in `[1, K]`, and `ṽ` the extension of `v` to
//! `2K` modes by the decayed quadratic interaction (see [`extended_modes`]).

use std::collections::VecDeque;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etd::{forced_update, GalerkinStepper};
use crate::forcing::{rng_from_seed, spectral_force_into, ForcingPath, ForcingSpec};
use crate::full_model::{Trajectory, TrajectoryMeta, BLOW_UP_BOUND};
use crate::spectral::SpectralState;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedConfig {
    pub kmodes: usize,
    pub delta: f64,
    pub nu: f64,
    pub forcing: ForcingSpec,
}

impl ReducedConfig {
    /// K = 8, δ = 0.01 alongside the standard full model.
    pub fn standard(sigma: f64) -> Self {
        Self {
            kmodes: 8,
            delta: 0.01,
            nu: 0.02,
            forcing: ForcingSpec {
                sigma,
                k0: 4,
                dt: 0.01,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kmodes == 0 {
            return Err(Error::Config("reduced model needs at least one mode".into()));
        }
        if !(self.delta > 0.0) || !(self.nu > 0.0) {
            return Err(Error::Config("reduced step and viscosity must be positive".into()));
        }
        if (self.forcing.dt - self.delta).abs() > 1e-12 * self.delta {
            return Err(Error::Config("reduced forcing step must equal delta".into()));
        }
        self.forcing.validate()
    }
}

/// Closure coefficients, row `k−1` holding lags `j = 1..=p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NarParameters {
    pub kmodes: usize,
    pub p: usize,
    pub nu: f64,
    pub delta: f64,
    pub sigma: f64,
    pub cv: Vec<Vec<f64>>,
    pub cr: Vec<Vec<f64>>,
    pub cf: Vec<Vec<f64>>,
    pub cw: Vec<Vec<f64>>,
    /// Standard deviation of the per-step residual `ĝ_k`.
    pub sigma_g: Vec<f64>,
    #[serde(default)]
    pub provenance: String,
}

impl NarParameters {
    pub fn zeros(config: &ReducedConfig, p: usize) -> Self {
        let table = vec![vec![0.0; p]; config.kmodes];
        Self {
            kmodes: config.kmodes,
            p,
            nu: config.nu,
            delta: config.delta,
            sigma: config.forcing.sigma,
            cv: table.clone(),
            cr: table.clone(),
            cf: table.clone(),
            cw: table,
            sigma_g: vec![0.0; config.kmodes],
            provenance: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape_ok = |t: &Vec<Vec<f64>>| {
            t.len() == self.kmodes && t.iter().all(|r| r.len() == self.p && r.iter().all(|x| x.is_finite()))
        };
        if self.p == 0
            || ![&self.cv, &self.cr, &self.cf, &self.cw].into_iter().all(shape_ok)
            || self.sigma_g.len() != self.kmodes
            || self.sigma_g.iter().any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return Err(Error::Config("NAR parameter tables are inconsistent".into()));
        }
        Ok(())
    }

    /// Coefficients of mode `k` (1-based) in regression order
    /// `[c^v_{1..p}, c^R_{1..p}, c^f_{1..p}, c^w_{1..p}]`.
    pub fn theta(&self, k: usize) -> Vec<f64> {
        let i = k - 1;
        [&self.cv[i], &self.cr[i], &self.cf[i], &self.cw[i]]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn set_theta(&mut self, k: usize, theta: &[f64]) {
        let (i, p) = (k - 1, self.p);
        self.cv[i].copy_from_slice(&theta[..p]);
        self.cr[i].copy_from_slice(&theta[p..2 * p]);
        self.cf[i].copy_from_slice(&theta[2 * p..3 * p]);
        self.cw[i].copy_from_slice(&theta[3 * p..4 * p]);
    }

    /// Lag-1 coefficient of `R̂^δ` when the base drift is folded into the
    /// closure, i.e. for the form `v + δ(f̂ + Φ')`: `1 + c^R_{k,1}`.
    pub fn folded_cr(&self) -> Vec<f64> {
        self.cr.iter().map(|r| 1.0 + r[0]).collect()
    }

    /// `α·self + β·other` on the coefficient tables (noise scales from `self`).
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        let mix = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.iter().zip(y).map(|(u, v)| alpha * u + beta * v).collect())
                .collect()
        };
        Self {
            cv: mix(&self.cv, &other.cv),
            cr: mix(&self.cr, &other.cr),
            cf: mix(&self.cf, &other.cf),
            cw: mix(&self.cw, &other.cw),
            ..self.clone()
        }
    }

    /// Reference fits for `σ = 0.2` and `σ = 1` (`K = 8`, `p = 1`), in this
    /// crate's convention: `c^R` minus one, `σ^g` zeroed.
    pub fn reference(sigma: f64) -> Result<Self> {
        let text = if sigma == 0.2 {
            include_str!("../data/reference_sigma0.2.json")
        } else if sigma == 1.0 {
            include_str!("../data/reference_sigma1.json")
        } else {
            return Err(Error::InvalidArgument(format!("no reference parameters for sigma {sigma}")));
        };
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.validate()?;
        Ok(p)
    }
}

/// `Σ_{|l|≤K, |k−l|≤K} v_{k−l} v_l` for `k = K+1..=2K`.
fn high_convolution(v: &[Complex64]) -> Vec<Complex64> {
    let kk = v.len() as i64;
    let at = |m: i64| -> Complex64 {
        match m {
            0 => ZERO,
            m if m > 0 => v[(m - 1) as usize],
            m => v[(-m - 1) as usize].conj(),
        }
    };
    ((kk + 1)..=(2 * kk))
        .map(|k| ((k - kk)..=kk).map(|l| at(k - l) * at(l)).sum())
        .collect()
}

/// Extension of `v` (K modes) to modes `1..=2K`:
/// `ṽ_k = v_k` for `k ≤ K`, `ṽ_k = (ik/2) e^{−νk²jδ} Σ_{|l|≤K,|k−l|≤K} v_{k−l} v_l` above.
pub fn extended_modes(v: &SpectralState, lag: usize, nu: f64, delta: f64) -> Vec<Complex64> {
    let conv = high_convolution(v.coeffs());
    extend_with(v.coeffs(), &conv, lag, nu, delta)
}

fn extend_with(v: &[Complex64], conv: &[Complex64], lag: usize, nu: f64, delta: f64) -> Vec<Complex64> {
    let kk = v.len();
    let mut out = Vec::with_capacity(2 * kk);
    out.extend_from_slice(v);
    for (i, &c) in conv.iter().enumerate() {
        let k = (kk + 1 + i) as f64;
        let decay = (-nu * k * k * lag as f64 * delta).exp();
        out.push(Complex64::new(0.0, 0.5 * k) * decay * c);
    }
    out
}

/// `Σ_l a_l b_{k−l}` for `k = 1..=K` over pairs with one index in `(K, 2K]`
/// and the other in `[1, K]` (absolute values); `a`, `b` hold modes `1..=2K`.
fn cross_scale_sum(a: &[Complex64], b: &[Complex64], kk: usize) -> Vec<Complex64> {
    let k2 = 2 * kk as i64;
    let at = |x: &[Complex64], m: i64| -> Complex64 {
        match m {
            0 => ZERO,
            m if m > 0 && m <= k2 => x[(m - 1) as usize],
            m if m < 0 && -m <= k2 => x[(-m - 1) as usize].conj(),
            _ => ZERO,
        }
    };
    let kk = kk as i64;
    let resolved = |m: i64| m != 0 && m.abs() <= kk;
    let unresolved = |m: i64| m.abs() > kk && m.abs() <= k2;
    (1..=kk)
        .map(|k| {
            let mut acc = ZERO;
            for l in -k2..=k2 {
                let m = k - l;
                if (resolved(m) && unresolved(l)) || (resolved(l) && unresolved(m)) {
                    acc += at(a, l) * at(b, m);
                }
            }
            acc
        })
        .collect()
}

/// Quantities of one past step `n−j` that enter the closure.
#[derive(Clone, Debug, PartialEq)]
pub struct LagEntry {
    pub v: Vec<Complex64>,
    /// `R̂^δ(v)`
    pub r: Vec<Complex64>,
    /// Force over the step that started from `v` (zero past `K0`).
    pub f: Vec<Complex64>,
    /// `Σ v_{k−l} v_l` for `k = K+1..=2K`.
    pub conv: Vec<Complex64>,
}

/// Per-mode regression features, `features[k−1]` in [`NarParameters::theta`] order.
pub fn closure_features(lags: &[LagEntry], p: usize, nu: f64, delta: f64) -> Vec<Vec<Complex64>> {
    let kk = lags[0].v.len();
    let lead = extend_with(&lags[0].v, &lags[0].conv, 1, nu, delta);
    let quad: Vec<Vec<Complex64>> = (0..p)
        .map(|j| {
            if j == 0 {
                cross_scale_sum(&lead, &lead, kk)
            } else {
                let lagged = extend_with(&lags[j].v, &lags[j].conv, j + 1, nu, delta);
                cross_scale_sum(&lead, &lagged, kk)
            }
        })
        .collect();
    (0..kk)
        .map(|i| {
            let mut row = Vec::with_capacity(4 * p);
            row.extend((0..p).map(|j| lags[j].v[i]));
            row.extend((0..p).map(|j| lags[j].r[i]));
            row.extend((0..p).map(|j| lags[j].f[i]));
            row.extend((0..p).map(|j| quad[j][i]));
            row
        })
        .collect()
}

/// Rolling state of a reduced model: current `v^{n−1}` and older lags.
#[derive(Clone, Debug, PartialEq)]
pub struct NarState {
    pub current: SpectralState,
    /// Entries for `n−2, n−3, …` (most recent first).
    pub history: VecDeque<LagEntry>,
}

impl NarState {
    /// State with an empty history (sufficient for `p = 1`).
    pub fn new(v0: SpectralState) -> Self {
        Self {
            current: v0,
            history: VecDeque::new(),
        }
    }
}

/// Which reduced dynamics to run.
#[derive(Clone, Debug, PartialEq)]
pub enum ReducedModel {
    Truncated,
    Nar(NarParameters),
}

impl ReducedModel {
    pub fn name(&self) -> &'static str {
        match self {
            ReducedModel::Truncated => "truncated",
            ReducedModel::Nar(_) => "nar",
        }
    }
}

/// Stepping machinery shared by ensembles of reduced-model states.
pub struct ReducedStepper {
    config: ReducedConfig,
    model: ReducedModel,
    stepper: GalerkinStepper,
    /// Residual noise on/off.
    pub stochastic: bool,
    force: Vec<Complex64>,
}

impl ReducedStepper {
    pub fn new(config: ReducedConfig, model: ReducedModel) -> Result<Self> {
        config.validate()?;
        if let ReducedModel::Nar(p) = &model {
            p.validate()?;
            if p.kmodes != config.kmodes {
                return Err(Error::Config(format!(
                    "parameters for {} modes used with K = {}",
                    p.kmodes, config.kmodes
                )));
            }
        }
        Ok(Self {
            stepper: GalerkinStepper::new(config.nu, config.kmodes, config.delta),
            force: vec![ZERO; config.kmodes],
            stochastic: true,
            config,
            model,
        })
    }

    pub fn config(&self) -> &ReducedConfig {
        &self.config
    }

    pub fn model(&self) -> &ReducedModel {
        &self.model
    }

    pub fn lags(&self) -> usize {
        match &self.model {
            ReducedModel::Truncated => 1,
            ReducedModel::Nar(p) => p.p,
        }
    }

    /// `R̂^δ(v)`.
    pub fn galerkin_increment(&mut self, v: &SpectralState) -> Result<SpectralState> {
        let mut out = vec![ZERO; self.config.kmodes];
        self.stepper.increment(v.coeffs(), &mut out);
        SpectralState::from_coeffs(out)
    }

    pub fn lag_entry(&mut self, v: &[Complex64], force: &[Complex64]) -> LagEntry {
        let mut r = vec![ZERO; v.len()];
        self.stepper.increment(v, &mut r);
        let mut f = vec![ZERO; v.len()];
        for (d, s) in f.iter_mut().zip(force) {
            *d = *s;
        }
        LagEntry {
            v: v.to_vec(),
            r,
            f,
            conv: high_convolution(v),
        }
    }

    /// Back-fills the history by replicating the current state (unforced).
    pub fn warm_up(&mut self, state: &mut NarState) {
        let need = self.lags().saturating_sub(1);
        if state.history.len() < need {
            let entry = self.lag_entry(state.current.coeffs(), &[]);
            while state.history.len() < need {
                state.history.push_back(entry.clone());
            }
        }
    }

    /// `Φ^{n−1}` for the lag window `lags[0] = n−1, lags[1] = n−2, …`.
    pub fn closure(&self, lags: &[LagEntry]) -> Result<Vec<Complex64>> {
        let kk = self.config.kmodes;
        let params = match &self.model {
            ReducedModel::Truncated => return Ok(vec![ZERO; kk]),
            ReducedModel::Nar(p) => p,
        };
        if lags.len() < params.p {
            return Err(Error::ColdHistory {
                have: lags.len(),
                need: params.p,
            });
        }
        let features = closure_features(lags, params.p, self.config.nu, self.config.delta);
        Ok((1..=kk)
            .map(|k| {
                params
                    .theta(k)
                    .iter()
                    .zip(&features[k - 1])
                    .map(|(t, phi)| *t * phi)
                    .sum()
            })
            .collect())
    }

    /// Advances `state` by one step `δ` with force `force` (`f̂^{n−1}`, modes `1..=K0`).
    pub fn step<R: Rng>(&mut self, state: &mut NarState, force: &[Complex64], rng: &mut R, step_index: usize) -> Result<()> {
        let kk = self.config.kmodes;
        let h = self.config.delta;
        let p = self.lags();
        if state.history.len() + 1 < p {
            return Err(Error::ColdHistory {
                have: state.history.len() + 1,
                need: p,
            });
        }
        let entry = self.lag_entry(state.current.coeffs(), force);
        let mut next = entry.r.clone();
        match &self.model {
            ReducedModel::Truncated => {
                forced_update(&entry.v, &mut next, &entry.f, None, h);
            }
            ReducedModel::Nar(params) => {
                let mut window = Vec::with_capacity(p);
                window.push(entry.clone());
                window.extend(state.history.iter().take(p - 1).cloned());
                let phi = self.closure(&window)?;
                forced_update(&entry.v, &mut next, &entry.f, Some(&phi), h);
                if self.stochastic {
                    for (x, &sd) in next.iter_mut().zip(&params.sigma_g) {
                        if sd > 0.0 {
                            let s = sd / std::f64::consts::SQRT_2;
                            let re: f64 = StandardNormal.sample(rng);
                            let im: f64 = StandardNormal.sample(rng);
                            *x += Complex64::new(s * re, s * im);
                        }
                    }
                }
            }
        }
        let max_abs = next.iter().map(|c| c.norm()).fold(0.0f64, |m, a| if a.is_nan() { f64::INFINITY } else { m.max(a) });
        if !(max_abs <= BLOW_UP_BOUND) {
            return Err(Error::BlowUp {
                step: step_index,
                max_abs,
            });
        }
        if p > 1 {
            state.history.push_front(entry);
            state.history.truncate(p - 1);
        }
        state.current.coeffs_mut()[..kk].copy_from_slice(&next);
        Ok(())
    }

    /// Force of coarse step `n` into the scratch buffer.
    pub fn force_at(&mut self, path: &ForcingPath, n: usize) -> &[Complex64] {
        spectral_force_into(path, self.config.forcing.sigma, n, &mut self.force);
        &self.force
    }
}

/// Runs a reduced model from `v0` over `nsteps` coarse steps of `path`.
pub fn simulate_reduced(
    model: &ReducedModel,
    config: &ReducedConfig,
    path: &ForcingPath,
    v0: &SpectralState,
    nsteps: usize,
    noise_seed: Option<u64>,
) -> Result<Trajectory> {
    if v0.nmodes() != config.kmodes {
        return Err(Error::InvalidState(format!(
            "initial state has {} modes, reduced model {}",
            v0.nmodes(),
            config.kmodes
        )));
    }
    if nsteps > 0 && path.nsteps() < nsteps {
        return Err(Error::InvalidArgument(format!(
            "coarse path has {} steps, {nsteps} requested",
            path.nsteps()
        )));
    }
    if nsteps > 0 && (path.dt() - config.delta).abs() > 1e-12 * config.delta {
        return Err(Error::InvalidArgument("forcing path is not at the reduced step".into()));
    }
    let mut stepper = ReducedStepper::new(*config, model.clone())?;
    stepper.stochastic = noise_seed.is_some();
    let mut rng = rng_from_seed(noise_seed.unwrap_or(0));
    let mut state = NarState::new(v0.clone());
    stepper.warm_up(&mut state);
    let mut states = Vec::with_capacity(nsteps + 1);
    states.push(v0.clone());
    let mut force = vec![ZERO; config.forcing.k0];
    for n in 0..nsteps {
        spectral_force_into(path, config.forcing.sigma, n, &mut force);
        stepper.step(&mut state, &force, &mut rng, n)?;
        states.push(state.current.clone());
    }
    Ok(Trajectory {
        times: (0..states.len()).map(|i| i as f64 * config.delta).collect(),
        states,
        meta: TrajectoryMeta {
            nmodes: config.kmodes,
            nu: config.nu,
            dt: config.delta,
            stride: 1,
            sigma: config.forcing.sigma,
            k0: config.forcing.k0,
            seed: path.seed(),
        },
        forcing: None,
    })
}
