//! Stochastic force `f = σ Σ_{m≤K0} (sin(mx) Ẇ_m + cos(mx) Ẇ'_m)`.
//!
//! A [`ForcingPath`] stores the Brownian increments `(ΔW_m, ΔW'_m)` of every
//! step. Over one step the white noise is held constant at `ΔW/Δt`, and the
//! spectral force is `f̂_m = (σ/2)(ΔW'_m − iΔW_m)/Δt` for `1 ≤ m ≤ K0`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the generator used for every random stream in the crate.
pub const RNG_ALGORITHM: &str = "ChaCha12";

pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Derives the seed of sub-stream `index` from a master seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    pub sigma: f64,
    pub k0: usize,
    pub dt: f64,
}

impl ForcingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k0 == 0 {
            return Err(Error::Config("k0 must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("forcing dt must be positive".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Brownian increments for `k0` sine/cosine pairs over `nsteps` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingPath {
    increments: Vec<f64>,
    nsteps: usize,
    k0: usize,
    dt: f64,
    seed: u64,
}

impl ForcingPath {
    /// Wraps increments laid out as `[step][mode][sin, cos]`.
    pub fn from_increments(
        increments: Vec<f64>,
        k0: usize,
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        if k0 == 0 || increments.is_empty() || increments.len() % (2 * k0) != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} increments do not tile {} mode pairs",
                increments.len(),
                k0
            )));
        }
        Ok(Self {
            nsteps: increments.len() / (2 * k0),
            increments,
            k0,
            dt,
            seed,
        })
    }

    pub fn nsteps(&self) -> usize {
        self.nsteps
    }

    pub fn k0(&self) -> usize {
        self.k0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `(ΔW_m, ΔW'_m)` for `m = 1..=k0` at `step`.
    pub fn step_increments(&self, step: usize) -> &[f64] {
        let w = 2 * self.k0;
        &self.increments[step * w..(step + 1) * w]
    }

    /// Sub-path covering steps `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.nsteps {
            return Err(Error::InvalidArgument(format!(
                "window {start}..{} outside path of {} steps",
                start + len,
                self.nsteps
            )));
        }
        let w = 2 * self.k0;
        Self::from_increments(
            self.increments[start * w..(start + len) * w].to_vec(),
            self.k0,
            self.dt,
            self.seed,
        )
    }
}

/// Draws `nsteps` i.i.d. `N(0, dt)` increments per forced pair.
pub fn sample_path(spec: &ForcingSpec, nsteps: usize, seed: u64) -> Result<ForcingPath> {
    spec.validate()?;
    if nsteps == 0 {
        return Err(Error::InvalidArgument("forcing path needs at least one step".into()));
    }
    let mut rng = rng_from_seed(seed);
    let sd = spec.dt.sqrt();
    let increments = (0..nsteps * spec.k0 * 2)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect();
    ForcingPath::from_increments(increments, spec.k0, spec.dt, seed)
}

/// Writes `f̂_1..f̂_K0` for `step` into `out`; entries past `k0` are zeroed.
pub fn spectral_force_into(path: &ForcingPath, sigma: f64, step: usize, out: &mut [Complex64]) {
    let inc = path.step_increments(step);
    let scale = 0.5 * sigma / path.dt;
    for (m, o) in out.iter_mut().enumerate() {
        *o = if m < path.k0 {
            let (dw, dw_cos) = (inc[2 * m], inc[2 * m + 1]);
            Complex64::new(scale * dw_cos, -scale * dw)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
}

/// Piecewise-constant spectral force `f̂_m`, `m = 1..=K0`, over `step`.
pub fn spectral_force(path: &ForcingPath, spec: &ForcingSpec, step: usize) -> Result<Vec<Complex64>> {
    if step >= path.nsteps {
        return Err(Error::InvalidArgument(format!(
            "step {step} outside path of {} steps",
            path.nsteps
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); path.k0];
    spectral_force_into(path, spec.sigma, step, &mut out);
    Ok(out)
}

/// Sums consecutive blocks of `factor` increments; the result has step `factor·dt`.
pub fn coarsen(path: &ForcingPath, factor: usize) -> Result<ForcingPath> {
    if factor == 0 || path.nsteps % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "coarsening factor {factor} does not divide {} steps",
            path.nsteps
        )));
    }
    let w = 2 * path.k0;
    let coarse_steps = path.nsteps / factor;
    let mut increments = vec![0.0; coarse_steps * w];
    for (n, block) in path.increments.chunks(w * factor).enumerate() {
        let dst = &mut increments[n * w..(n + 1) * w];
        for fine in block.chunks(w) {
            for (d, s) in dst.iter_mut().zip(fine) {
                *d += s;
            }
        }
    }
    ForcingPath::from_increments(increments, path.k0, path.dt * factor as f64, path.seed)
}
