//! Fourier representation of real, mean-zero, 2π-periodic fields.
//!
//! A [`SpectralState`] stores the coefficients `û_k` for `k = 1..=nmodes`.
//! The mean `û_0` is always zero and negative wavenumbers follow from
//! `û_{-k} = conj(û_k)`, so every state synthesizes to a real field.
//!
//! Normalization: analysis carries `1/ngrid`, synthesis carries none, so
//! `u(x_j) = Σ_{|k|≤n} û_k e^{ikx_j}` and the coefficients coincide with the
//! continuous Fourier coefficients `(1/2π)∫u e^{-ikx}dx` of band-limited fields.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fourier coefficients `û_1..û_n` of a real field with zero mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    coeffs: Vec<Complex64>,
}

impl SpectralState {
    pub fn zeros(nmodes: usize) -> Self {
        assert!(nmodes >= 1, "a spectral state needs at least one mode");
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); nmodes],
        }
    }

    /// Builds a state from `[û_1, ..., û_n]`.
    pub fn from_coeffs(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidState("no modes".into()));
        }
        let state = Self { coeffs };
        state.check_finite()?;
        Ok(state)
    }

    pub fn nmodes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Coefficient at wavenumber `k` (any sign); zero outside `1..=nmodes`.
    pub fn mode(&self, k: i64) -> Complex64 {
        let n = self.coeffs.len() as i64;
        match k {
            0 => Complex64::new(0.0, 0.0),
            k if k > 0 && k <= n => self.coeffs[(k - 1) as usize],
            k if k < 0 && -k <= n => self.coeffs[(-k - 1) as usize].conj(),
            _ => Complex64::new(0.0, 0.0),
        }
    }

    /// Mean square of the field, `Σ_{k≠0} |û_k|² = 2 Σ_{k≥1} |û_k|²`.
    pub fn energy(&self) -> f64 {
        2.0 * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidState("non-finite coefficient".into()))
        }
    }
}

/// Real samples `u(x_j)` at `x_j = 2πj/ngrid`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    values: Vec<f64>,
}

impl PhysicalField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || values.len() % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "grid size must be even and >= 2, got {}",
                values.len()
            )));
        }
        Ok(Self { values })
    }

    /// Samples `f` on the uniform grid of `ngrid` points.
    pub fn sample(ngrid: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dx = grid_spacing(ngrid);
        Self::new((0..ngrid).map(|j| f(j as f64 * dx)).collect())
    }

    pub fn ngrid(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn grid_spacing(ngrid: usize) -> f64 {
    2.0 * std::f64::consts::PI / ngrid as f64
}

fn check_grid(nmodes: usize, ngrid: usize) -> Result<()> {
    if ngrid % 2 != 0 || ngrid < 2 * nmodes + 2 {
        return Err(Error::Aliasing { nmodes, ngrid });
    }
    Ok(())
}

/// Reusable forward/inverse transform on a fixed grid.
///
/// Holds FFT plans and scratch space; one instance per thread.
pub struct GridTransform {
    ngrid: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buffer: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl GridTransform {
    pub fn new(ngrid: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(ngrid);
        let inverse = planner.plan_fft_inverse(ngrid);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            ngrid,
            forward,
            inverse,
            buffer: vec![Complex64::new(0.0, 0.0); ngrid],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn ngrid(&self) -> usize {
        self.ngrid
    }

    /// Writes `Σ_{|k|≤n} û_k e^{ikx_j}` into `out`. Caller guarantees `2n < ngrid`.
    pub fn synthesize(&mut self, coeffs: &[Complex64], out: &mut [f64]) {
        self.load(coeffs);
        self.inverse
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        for (o, b) in out.iter_mut().zip(&self.buffer) {
            *o = b.re;
        }
    }

    /// Writes `(1/ngrid) Σ_j u_j e^{-ikx_j}` for `k = 1..=out.len()`.
    pub fn analyze(&mut self, values: &[f64], out: &mut [Complex64]) {
        for (b, &v) in self.buffer.iter_mut().zip(values) {
            *b = Complex64::new(v, 0.0);
        }
        self.forward
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        let scale = 1.0 / self.ngrid as f64;
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.buffer[k + 1] * scale;
        }
    }

    fn load(&mut self, coeffs: &[Complex64]) {
        let zero = Complex64::new(0.0, 0.0);
        self.buffer.iter_mut().for_each(|b| *b = zero);
        let m = self.ngrid;
        for (i, &c) in coeffs.iter().enumerate() {
            let k = i + 1;
            self.buffer[k] = c;
            self.buffer[m - k] = c.conj();
        }
    }

    /// Coefficients of `-(1/2)∂_x(u²)` for `k = 1..=out.len()`.
    ///
    /// Exact (alias-free) when `ngrid ≥ 3n + 1` for `n = coeffs.len()`.
    fn quadratic_flux(&mut self, coeffs: &[Complex64], out: &mut [Complex64]) {
        self.load(coeffs);
        self.inverse
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        for b in self.buffer.iter_mut() {
            *b = Complex64::new(b.re * b.re, 0.0);
        }
        self.forward
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        let scale = 1.0 / self.ngrid as f64;
        for (i, o) in out.iter_mut().enumerate() {
            let k = (i + 1) as f64;
            // -(ik/2) * F[u²]_k
            *o = Complex64::new(0.0, -0.5 * k) * self.buffer[i + 1] * scale;
        }
    }
}

/// Padded grid for alias-free evaluation of the quadratic term of `n` modes:
/// the smallest even size `≥ 3n + 1` whose prime factors are 2, 3 and 5.
pub fn dealiased_grid_size(nmodes: usize) -> usize {
    let mut m = 3 * nmodes + 1;
    loop {
        if m % 2 == 0 && is_smooth(m) {
            return m;
        }
        m += 1;
    }
}

fn is_smooth(mut m: usize) -> bool {
    for p in [2, 3, 5] {
        while m % p == 0 {
            m /= p;
        }
    }
    m == 1
}

/// Dealiased Burgers nonlinearity with cached transform plans.
pub struct NonlinearTerm {
    nmodes: usize,
    transform: GridTransform,
}

impl NonlinearTerm {
    pub fn new(nmodes: usize) -> Self {
        Self {
            nmodes,
            transform: GridTransform::new(dealiased_grid_size(nmodes)),
        }
    }

    pub fn nmodes(&self) -> usize {
        self.nmodes
    }

    /// `out_k = -(ik/2) Σ_{|l|≤n, |k-l|≤n} û_l û_{k-l}`.
    pub fn apply(&mut self, coeffs: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(coeffs.len(), self.nmodes);
        debug_assert_eq!(out.len(), self.nmodes);
        self.transform.quadratic_flux(coeffs, out);
    }
}

pub fn to_physical(s: &SpectralState, ngrid: usize) -> Result<PhysicalField> {
    check_grid(s.nmodes(), ngrid)?;
    s.check_finite()?;
    let mut values = vec![0.0; ngrid];
    GridTransform::new(ngrid).synthesize(s.coeffs(), &mut values);
    Ok(PhysicalField { values })
}

pub fn to_spectral(p: &PhysicalField, nmodes: usize) -> Result<SpectralState> {
    if nmodes == 0 {
        return Err(Error::InvalidArgument("nmodes must be positive".into()));
    }
    check_grid(nmodes, p.ngrid())?;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); nmodes];
    GridTransform::new(p.ngrid()).analyze(p.values(), &mut coeffs);
    SpectralState::from_coeffs(coeffs)
}

/// Multiplies coefficient `k` by `ik`.
pub fn spectral_derivative(s: &SpectralState) -> SpectralState {
    let coeffs = s
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, &c)| Complex64::new(0.0, (i + 1) as f64) * c)
        .collect();
    SpectralState { coeffs }
}

/// Spectral coefficients of `-(1/2)∂_x(u²)` truncated to the modes of `s`.
pub fn burgers_nonlinearity(s: &SpectralState) -> Result<SpectralState> {
    s.check_finite()?;
    let mut out = vec![Complex64::new(0.0, 0.0); s.nmodes()];
    NonlinearTerm::new(s.nmodes()).apply(s.coeffs(), &mut out);
    Ok(SpectralState { coeffs: out })
}

/// Keeps modes `1..=kcut`.
pub fn project(s: &SpectralState, kcut: usize) -> Result<SpectralState> {
    if kcut == 0 || kcut > s.nmodes() {
        return Err(Error::InvalidArgument(format!(
            "projection cutoff {kcut} outside 1..={}",
            s.nmodes()
        )));
    }
    Ok(SpectralState {
        coeffs: s.coeffs[..kcut].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_state(n: usize, seed: u64) -> SpectralState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpectralState::from_coeffs(
            (0..n)
                .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn direct_sum(s: &SpectralState, x: f64) -> f64 {
        (1..=s.nmodes() as i64)
            .map(|k| 2.0 * (s.mode(k) * Complex64::from_polar(1.0, k as f64 * x)).re)
            .sum()
    }

    #[test]
    fn single_mode_synthesizes_cosine() {
        let mut s = SpectralState::zeros(3);
        s.coeffs_mut()[0] = c(0.5, 0.0);
        let p = to_physical(&s, 8).unwrap();
        for (j, v) in p.values().iter().enumerate() {
            assert_abs_diff_eq!(*v, (j as f64 * PI / 4.0).cos(), epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_state_is_zero_field() {
        let p = to_physical(&SpectralState::zeros(4), 16).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synthesis_matches_direct_sum() {
        let s = random_state(4, 7);
        let p = to_physical(&s, 16).unwrap();
        for (j, v) in p.values().iter().enumerate() {
            let x = 2.0 * PI * j as f64 / 16.0;
            assert_abs_diff_eq!(*v, direct_sum(&s, x), epsilon = 1e-12);
        }
    }

    #[test]
    fn parseval_holds() {
        let s = random_state(6, 3);
        let p = to_physical(&s, 32).unwrap();
        let mean_sq = p.values().iter().map(|v| v * v).sum::<f64>() / 32.0;
        assert_abs_diff_eq!(mean_sq, s.energy(), epsilon = 1e-12);
    }

    #[test]
    fn small_grid_is_rejected() {
        let s = SpectralState::zeros(4);
        assert!(matches!(to_physical(&s, 8), Err(Error::Aliasing { .. })));
        assert!(matches!(to_physical(&s, 11), Err(Error::Aliasing { .. })));
        let p = PhysicalField::new(vec![0.0; 8]).unwrap();
        assert!(to_spectral(&p, 4).is_err());
    }

    #[test]
    fn non_finite_state_is_rejected() {
        assert!(SpectralState::from_coeffs(vec![c(f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn analysis_of_cosine() {
        let p = PhysicalField::sample(16, f64::cos).unwrap();
        let s = to_spectral(&p, 4).unwrap();
        assert_abs_diff_eq!(s.coeffs()[0].re, 0.5, epsilon = 1e-15);
        for k in 1..4 {
            assert_abs_diff_eq!(s.coeffs()[k].norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn analysis_matches_direct_sum() {
        let p = PhysicalField::sample(16, |x| (3.0 * x).cos() + 2.0 * x.sin()).unwrap();
        let s = to_spectral(&p, 4).unwrap();
        // direct-sum analysis oracle
        for k in 1..=4 {
            let mut acc = c(0.0, 0.0);
            for (j, &v) in p.values().iter().enumerate() {
                let x = 2.0 * PI * j as f64 / 16.0;
                acc += v * Complex64::from_polar(1.0, -(k as f64) * x);
            }
            acc /= 16.0;
            assert_abs_diff_eq!((s.coeffs()[k - 1] - acc).norm(), 0.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!((s.coeffs()[2] - c(0.5, 0.0)).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!((s.coeffs()[0] - c(0.0, -1.0)).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn derivative_of_cosine() {
        let mut s = SpectralState::zeros(2);
        s.coeffs_mut()[0] = c(0.5, 0.0);
        let d = to_physical(&spectral_derivative(&s), 16).unwrap();
        for (j, v) in d.values().iter().enumerate() {
            let x = 2.0 * PI * j as f64 / 16.0;
            assert_abs_diff_eq!(*v, -x.sin(), epsilon = 1e-14);
        }
        assert_eq!(
            spectral_derivative(&SpectralState::zeros(3)),
            SpectralState::zeros(3)
        );
    }

    #[test]
    fn derivative_matches_fourth_order_differences() {
        let s = random_state(8, 11);
        let n = 4096;
        let u = to_physical(&s, n).unwrap();
        let du = to_physical(&spectral_derivative(&s), n).unwrap();
        let h = grid_spacing(n);
        let v = u.values();
        let scale = du.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for j in 0..n {
            let at = |o: isize| v[((j as isize + o).rem_euclid(n as isize)) as usize];
            let fd = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
            assert!((fd - du.values()[j]).abs() <= 1e-6 * scale);
        }
    }

    /// Direct convolution `-(ik/2) Σ_{|l|≤n,|k-l|≤n} û_l û_{k-l}`.
    fn convolution_oracle(s: &SpectralState) -> Vec<Complex64> {
        let n = s.nmodes() as i64;
        (1..=n)
            .map(|k| {
                let mut acc = c(0.0, 0.0);
                for l in -n..=n {
                    if (k - l).abs() <= n {
                        acc += s.mode(l) * s.mode(k - l);
                    }
                }
                c(0.0, -0.5 * k as f64) * acc
            })
            .collect()
    }

    #[test]
    fn nonlinearity_single_mode() {
        let mut s = SpectralState::zeros(8);
        s.coeffs_mut()[0] = c(1.0, 0.0);
        let out = burgers_nonlinearity(&s).unwrap();
        assert_abs_diff_eq!((out.coeffs()[1] - c(0.0, -1.0)).norm(), 0.0, epsilon = 1e-14);
        for (i, v) in out.coeffs().iter().enumerate() {
            if i != 1 {
                assert_abs_diff_eq!(v.norm(), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn nonlinearity_matches_convolution() {
        for &n in &[8usize, 16, 32] {
            let s = random_state(n, n as u64);
            let out = burgers_nonlinearity(&s).unwrap();
            for (a, b) in out.coeffs().iter().zip(convolution_oracle(&s)) {
                assert!((a - b).norm() <= 1e-12, "n={n}: {a} vs {b}");
            }
        }
        assert_eq!(
            burgers_nonlinearity(&SpectralState::zeros(8)).unwrap(),
            SpectralState::zeros(8)
        );
    }

    #[test]
    fn projection() {
        let s = random_state(16, 5);
        assert_eq!(project(&s, 16).unwrap(), s);
        let p = project(&s, 8).unwrap();
        let dropped: f64 = s.coeffs()[8..].iter().map(|c| 2.0 * c.norm_sqr()).sum();
        assert_abs_diff_eq!(s.energy() - p.energy(), dropped, epsilon = 1e-13);
        assert_eq!(project(&SpectralState::zeros(8), 8).unwrap(), SpectralState::zeros(8));
        assert!(project(&s, 0).is_err());
        assert!(project(&s, 17).is_err());
    }

    #[test]
    fn padded_grid_sizes() {
        assert_eq!(dealiased_grid_size(8), 30);
        assert_eq!(dealiased_grid_size(128), 400);
        for n in 1..200 {
            let m = dealiased_grid_size(n);
            assert!(m > 3 * n && m % 2 == 0);
        }
    }
}
