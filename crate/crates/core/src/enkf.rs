//! Ensemble Kalman filter with perturbed observations.
//!
//! States are real vectors; complex K-mode states map to
//! `(Re v_1, Im v_1, …, Re v_K, Im v_K)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forcing::{derive_seed, rng_from_seed, spectral_force_into, ForcingPath};
use crate::reduced::{NarState, ReducedConfig, ReducedModel, ReducedStepper};
use crate::spectral::SpectralState;

pub(crate) fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn to_real(s: &SpectralState) -> DVector<f64> {
    DVector::from_iterator(2 * s.nmodes(), s.coeffs().iter().flat_map(|c| [c.re, c.im]))
}

pub fn from_real(x: &[f64]) -> Result<SpectralState> {
    if x.len() % 2 != 0 {
        return Err(Error::InvalidState("real state has odd length".into()));
    }
    SpectralState::from_coeffs(
        x.chunks(2)
            .map(|c| num_complex::Complex64::new(c[0], c[1]))
            .collect(),
    )
}

/// `z = H x + ε`, `ε ~ N(0, R)`.
#[derive(Clone, Debug)]
pub struct ObservationModel {
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    r_chol: DMatrix<f64>,
}

impl ObservationModel {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if r.nrows() != h.nrows() || !r.is_square() {
            return Err(Error::InvalidArgument("observation noise does not match H".into()));
        }
        if (&r - r.transpose()).amax() > 1e-12 * r.amax() {
            return Err(Error::InvalidArgument("observation noise is not symmetric".into()));
        }
        let r_chol = Cholesky::new(r.clone())
            .ok_or_else(|| Error::InvalidArgument("observation noise is not positive definite".into()))?
            .l();
        Ok(Self { h, r, r_chol })
    }

    /// Direct observation of all `dim` coordinates with noise std `std`.
    pub fn identity(dim: usize, std: f64) -> Result<Self> {
        Self::new(
            DMatrix::identity(dim, dim),
            DMatrix::from_diagonal_element(dim, dim, std * std),
        )
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    /// Draw from `N(0, R)`.
    pub fn sample_noise<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_fn(self.obs_dim(), |_, _| StandardNormal.sample(rng));
        &self.r_chol * xi
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: Vec<DVector<f64>>,
}

impl Ensemble {
    pub fn new(members: Vec<DVector<f64>>) -> Result<Self> {
        let d = members.first().map_or(0, |m| m.len());
        if members.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidArgument("ensemble members differ in dimension".into()));
        }
        Ok(Self { members })
    }

    /// `m` draws of `center + spread·ξ`, `ξ` standard normal per coordinate.
    pub fn gaussian<R: Rng>(center: &DVector<f64>, spread: f64, m: usize, rng: &mut R) -> Self {
        Self {
            members: (0..m)
                .map(|_| center.map(|c| c + spread * normal(rng)))
                .collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.members.first().map_or(0, |m| m.len())
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for x in &self.members {
            m += x;
        }
        m / self.size() as f64
    }

    /// Per-coordinate sample standard deviation (`1/(M−1)`).
    pub fn spread(&self) -> DVector<f64> {
        let mean = self.mean();
        let mut v = DVector::zeros(self.dim());
        for x in &self.members {
            v += (x - &mean).map(|d| d * d);
        }
        (v / (self.size().max(2) - 1) as f64).map(f64::sqrt)
    }

    /// Sample covariance with `1/(M−1)` normalization.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let a = DMatrix::from_columns(&self.members.iter().map(|x| x - &mean).collect::<Vec<_>>());
        &a * a.transpose() / (self.size() - 1) as f64
    }
}

/// Optional analysis modifications, all off by default.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalysisOptions {
    /// Multiplicative inflation of forecast anomalies.
    pub inflation: f64,
    /// Gaussian taper length (in state indices) applied to the forecast covariance.
    pub localization: Option<f64>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            inflation: 1.0,
            localization: None,
        }
    }
}

/// Perturbed-observation update `x_i ← x_i + K(z + ε_i − H x_i)`.
pub fn analysis<R: Rng>(
    ensemble: &Ensemble,
    obs: &DVector<f64>,
    om: &ObservationModel,
    options: &AnalysisOptions,
    rng: &mut R,
) -> Result<Ensemble> {
    let m = ensemble.size();
    if m < 2 {
        return Err(Error::InvalidArgument("analysis needs at least two members".into()));
    }
    if ensemble.dim() != om.state_dim() || obs.len() != om.obs_dim() {
        return Err(Error::InvalidArgument("ensemble, observation and H disagree in size".into()));
    }
    let mean = ensemble.mean();
    let members: Vec<DVector<f64>> = if options.inflation != 1.0 {
        ensemble
            .members
            .iter()
            .map(|x| &mean + (x - &mean) * options.inflation)
            .collect()
    } else {
        ensemble.members.clone()
    };
    let forecast = Ensemble { members };
    let mut c = forecast.covariance();
    if let Some(len) = options.localization {
        let d = c.nrows();
        for i in 0..d {
            for j in 0..d {
                let dist = i as f64 - j as f64;
                c[(i, j)] *= (-dist * dist / (2.0 * len * len)).exp();
            }
        }
    }
    let cht = &c * om.h.transpose();
    let s = &om.h * &cht + &om.r;
    let chol = match Cholesky::new(s.clone()) {
        Some(ch) => ch,
        None => {
            let jitter = 1e-12 * s.trace();
            log::warn!("innovation covariance not positive definite; adding jitter {jitter:e}");
            let n = s.nrows();
            Cholesky::new(s + DMatrix::from_diagonal_element(n, n, jitter))
                .ok_or_else(|| Error::InvalidArgument("innovation covariance is singular".into()))?
        }
    };
    // K = C Hᵀ S⁻¹, applied as (S⁻¹ innovation)
    let mut out = Vec::with_capacity(m);
    for x in &forecast.members {
        let perturbed = obs + om.sample_noise(rng);
        let innovation = perturbed - &om.h * x;
        out.push(x + &cht * chol.solve(&innovation));
    }
    Ok(Ensemble { members: out })
}

/// Dynamics advancing one ensemble member by one step.
pub trait ForecastModel: Sync {
    /// Per-member mutable state carried between steps (lags, RNG).
    type Member: Send;

    fn init_member(&self, index: usize, x: &DVector<f64>) -> Result<Self::Member>;

    /// Advances `x` from step `n` to `n + 1`.
    fn advance(&self, member: &mut Self::Member, x: &mut DVector<f64>, n: usize) -> Result<()>;

    /// Called after an analysis replaced `x`.
    fn reset_current(&self, _member: &mut Self::Member, _x: &DVector<f64>) {}
}

/// Members plus their per-member model state.
pub struct FilterState<M: ForecastModel> {
    pub ensemble: Ensemble,
    pub members: Vec<M::Member>,
}

impl<M: ForecastModel> FilterState<M> {
    pub fn new(model: &M, ensemble: Ensemble) -> Result<Self> {
        let members = ensemble
            .members
            .iter()
            .enumerate()
            .map(|(i, x)| model.init_member(i, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ensemble, members })
    }
}

/// Advances every member one step; blown-up members are replaced by copies
/// of randomly chosen survivors.
pub fn forecast<M: ForecastModel, R: Rng>(
    model: &M,
    state: &mut FilterState<M>,
    n: usize,
    rng: &mut R,
) -> Result<()> {
    let results: Vec<Result<()>> = state
        .members
        .par_iter_mut()
        .zip(state.ensemble.members.par_iter_mut())
        .map(|(m, x)| model.advance(m, x, n))
        .collect();
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.is_err().then_some(i))
        .collect();
    if failed.is_empty() {
        return Ok(());
    }
    let alive: Vec<usize> = (0..results.len()).filter(|i| !failed.contains(i)).collect();
    if alive.is_empty() {
        return results.into_iter().find(|r| r.is_err()).unwrap_or(Ok(()));
    }
    log::warn!("{} ensemble members blew up at step {n}; redrawing from survivors", failed.len());
    for i in failed {
        let src = alive[rng.random_range(0..alive.len())];
        let x = state.ensemble.members[src].clone();
        model.reset_current(&mut state.members[i], &x);
        state.ensemble.members[i] = x;
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct FilterRecord {
    /// Step index of every recorded entry.
    pub steps: Vec<usize>,
    pub means: Vec<DVector<f64>>,
    pub spreads: Vec<DVector<f64>>,
    /// Full ensembles every `ensemble_stride` steps (if requested).
    pub ensembles: Vec<(usize, Ensemble)>,
}

/// Forecast/analysis cycle over `observations.len()` steps; `observations[n]`
/// is assimilated after the forecast to step `n + 1` when present.
pub fn run_filter<M: ForecastModel>(
    model: &M,
    om: &ObservationModel,
    observations: &[Option<DVector<f64>>],
    initial: Ensemble,
    options: &AnalysisOptions,
    seed: u64,
    ensemble_stride: Option<usize>,
) -> Result<(FilterState<M>, FilterRecord)> {
    let mut rng: ChaCha12Rng = rng_from_seed(seed);
    let mut state = FilterState::new(model, initial)?;
    let mut rec = FilterRecord::default();
    let push = |rec: &mut FilterRecord, ens: &Ensemble, n: usize| {
        rec.steps.push(n);
        rec.means.push(ens.mean());
        rec.spreads.push(ens.spread());
        if ensemble_stride.is_some_and(|s| s > 0 && n % s == 0) {
            rec.ensembles.push((n, ens.clone()));
        }
    };
    push(&mut rec, &state.ensemble, 0);
    for (n, obs) in observations.iter().enumerate() {
        forecast(model, &mut state, n, &mut rng)?;
        if let Some(z) = obs {
            state.ensemble = analysis(&state.ensemble, z, om, options, &mut rng)?;
            for (m, x) in state.members.iter_mut().zip(&state.ensemble.members) {
                model.reset_current(m, x);
            }
        }
        push(&mut rec, &state.ensemble, n + 1);
    }
    Ok((state, rec))
}

/// Truncated or NAR dynamics on the real `2K` coordinates under a shared coarse force.
pub struct ReducedForecast {
    pub config: ReducedConfig,
    pub model: ReducedModel,
    pub path: ForcingPath,
    /// Residual noise on/off for NAR members.
    pub stochastic: bool,
    pub seed: u64,
}

pub struct ReducedMember {
    stepper: ReducedStepper,
    state: NarState,
    rng: ChaCha12Rng,
    force: Vec<num_complex::Complex64>,
}

impl ForecastModel for ReducedForecast {
    type Member = ReducedMember;

    fn init_member(&self, index: usize, x: &DVector<f64>) -> Result<ReducedMember> {
        let mut stepper = ReducedStepper::new(self.config, self.model.clone())?;
        stepper.stochastic = self.stochastic;
        let mut state = NarState::new(from_real(x.as_slice())?);
        stepper.warm_up(&mut state);
        Ok(ReducedMember {
            stepper,
            state,
            rng: rng_from_seed(derive_seed(self.seed, index as u64)),
            force: vec![num_complex::Complex64::new(0.0, 0.0); self.config.forcing.k0],
        })
    }

    fn advance(&self, m: &mut ReducedMember, x: &mut DVector<f64>, n: usize) -> Result<()> {
        if n >= self.path.nsteps() {
            return Err(Error::InvalidArgument(format!("forcing path ends before step {n}")));
        }
        spectral_force_into(&self.path, self.config.forcing.sigma, n, &mut m.force);
        m.stepper.step(&mut m.state, &m.force, &mut m.rng, n)?;
        *x = to_real(&m.state.current);
        Ok(())
    }

    fn reset_current(&self, m: &mut ReducedMember, x: &DVector<f64>) {
        if let Ok(s) = from_real(x.as_slice()) {
            m.state.current = s;
        }
    }
}
