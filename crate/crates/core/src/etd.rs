//! ETDRK4 (Cox–Matthews) for the Galerkin system
//! `dû_k/dt = −νk²û_k + N_k(û) + f̂_k`.
//!
//! The deterministic part is advanced by ETDRK4; the force, constant over a
//! step, enters Euler–Maruyama style: `û ← û + h[R̂^h(û) + f̂]` with
//! `R̂^h(û) = (ETDRK4_h(û) − û)/h`. The same update drives the full model,
//! the truncated system and the closure-free limit of the NAR model.
//!
//! The φ-function weights are evaluated by a power series near the origin
//! and by averaging the closed forms over a 64-point circle elsewhere, which
//! keeps them accurate to round-off for every `z = −νk²h ≤ 0`.

use num_complex::Complex64;

use crate::spectral::NonlinearTerm;

const CONTOUR_POINTS: usize = 64;
const SERIES_RADIUS: f64 = 1.0;

/// `[φ1(z), φ2(z), φ3(z)]` with `φ_j(z) = Σ_n zⁿ/(n+j)!`.
pub fn phi_functions(z: f64) -> [f64; 3] {
    if z.abs() < SERIES_RADIUS {
        phi_series(z)
    } else {
        phi_contour(z, (z.abs() / 2.0).min(1.0), CONTOUR_POINTS)
    }
}

fn phi_series(z: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (j, slot) in out.iter_mut().enumerate() {
        // term_n = z^n/(n+j+1)!
        let mut term = 1.0 / (1..=j + 1).map(|i| i as f64).product::<f64>();
        let mut sum = term;
        for n in 1..40 {
            term *= z / (n + j + 1) as f64;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        *slot = sum;
    }
    out
}

fn phi_closed(w: Complex64) -> [Complex64; 3] {
    let e = w.exp();
    let one = Complex64::new(1.0, 0.0);
    let p1 = (e - one) / w;
    let p2 = (e - one - w) / (w * w);
    let p3 = (e - one - w - 0.5 * w * w) / (w * w * w);
    [p1, p2, p3]
}

/// Mean of the closed forms over `points` nodes on the circle `|w − z| = radius`.
pub fn phi_contour(z: f64, radius: f64, points: usize) -> [f64; 3] {
    let mut acc = [Complex64::new(0.0, 0.0); 3];
    for i in 0..points {
        let theta = std::f64::consts::PI * (i as f64 + 0.5) / points as f64 * 2.0;
        let w = Complex64::new(z, 0.0) + Complex64::from_polar(radius, theta);
        for (a, v) in acc.iter_mut().zip(phi_closed(w)) {
            *a += v;
        }
    }
    acc.map(|a| a.re / points as f64)
}

/// Per-mode ETDRK4 weights for step `h`.
#[derive(Clone, Debug)]
pub struct EtdCoefficients {
    pub h: f64,
    pub nu: f64,
    /// `e^{−νk²h}`
    pub e: Vec<f64>,
    /// `e^{−νk²h/2}`
    pub e2: Vec<f64>,
    /// half-step weight `(h/2)φ1(z/2)`
    pub q: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub f3: Vec<f64>,
}

impl EtdCoefficients {
    pub fn nmodes(&self) -> usize {
        self.e.len()
    }
}

pub fn precompute_etd(nu: f64, nmodes: usize, h: f64) -> EtdCoefficients {
    assert!(h > 0.0, "step size must be positive");
    let mut c = EtdCoefficients {
        h,
        nu,
        e: Vec::with_capacity(nmodes),
        e2: Vec::with_capacity(nmodes),
        q: Vec::with_capacity(nmodes),
        f1: Vec::with_capacity(nmodes),
        f2: Vec::with_capacity(nmodes),
        f3: Vec::with_capacity(nmodes),
    };
    for k in 1..=nmodes {
        let z = -nu * (k * k) as f64 * h;
        let [p1, p2, p3] = phi_functions(z);
        let [half1, _, _] = phi_functions(0.5 * z);
        c.e.push(z.exp());
        c.e2.push((0.5 * z).exp());
        c.q.push(0.5 * h * half1);
        c.f1.push(h * (p1 - 3.0 * p2 + 4.0 * p3));
        c.f2.push(h * (p2 - 2.0 * p3));
        c.f3.push(h * (4.0 * p3 - p2));
    }
    c
}

/// One-step integrator for an `n`-mode Galerkin truncation.
pub struct GalerkinStepper {
    coeffs: EtdCoefficients,
    nonlinear: Option<NonlinearTerm>,
    nu0: Vec<Complex64>,
    na: Vec<Complex64>,
    nb: Vec<Complex64>,
    nc: Vec<Complex64>,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    c: Vec<Complex64>,
}

impl GalerkinStepper {
    pub fn new(nu: f64, nmodes: usize, h: f64) -> Self {
        Self::build(precompute_etd(nu, nmodes, h), true)
    }

    /// Heat equation only: the quadratic term is switched off.
    pub fn linear_only(nu: f64, nmodes: usize, h: f64) -> Self {
        Self::build(precompute_etd(nu, nmodes, h), false)
    }

    pub fn from_coefficients(coeffs: EtdCoefficients) -> Self {
        Self::build(coeffs, true)
    }

    fn build(coeffs: EtdCoefficients, nonlinear: bool) -> Self {
        let n = coeffs.nmodes();
        let zero = vec![Complex64::new(0.0, 0.0); n];
        Self {
            nonlinear: nonlinear.then(|| NonlinearTerm::new(n)),
            coeffs,
            nu0: zero.clone(),
            na: zero.clone(),
            nb: zero.clone(),
            nc: zero.clone(),
            a: zero.clone(),
            b: zero.clone(),
            c: zero,
        }
    }

    pub fn nmodes(&self) -> usize {
        self.coeffs.nmodes()
    }

    pub fn step_size(&self) -> f64 {
        self.coeffs.h
    }

    pub fn coefficients(&self) -> &EtdCoefficients {
        &self.coeffs
    }

    fn rhs(nl: &mut Option<NonlinearTerm>, u: &[Complex64], out: &mut [Complex64]) {
        match nl {
            Some(term) => term.apply(u, out),
            None => out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0)),
        }
    }

    /// One unforced ETDRK4 step.
    pub fn deterministic_step(&mut self, u: &[Complex64], out: &mut [Complex64]) {
        let n = self.nmodes();
        debug_assert_eq!(u.len(), n);
        debug_assert_eq!(out.len(), n);
        let c = &self.coeffs;

        Self::rhs(&mut self.nonlinear, u, &mut self.nu0);
        for k in 0..n {
            self.a[k] = c.e2[k] * u[k] + c.q[k] * self.nu0[k];
        }
        Self::rhs(&mut self.nonlinear, &self.a, &mut self.na);
        for k in 0..n {
            self.b[k] = c.e2[k] * u[k] + c.q[k] * self.na[k];
        }
        Self::rhs(&mut self.nonlinear, &self.b, &mut self.nb);
        for k in 0..n {
            self.c[k] = c.e2[k] * self.a[k] + c.q[k] * (2.0 * self.nb[k] - self.nu0[k]);
        }
        Self::rhs(&mut self.nonlinear, &self.c, &mut self.nc);
        for k in 0..n {
            out[k] = c.e[k] * u[k]
                + c.f1[k] * self.nu0[k]
                + 2.0 * c.f2[k] * (self.na[k] + self.nb[k])
                + c.f3[k] * self.nc[k];
        }
    }

    /// `R̂^h(u) = (ETDRK4_h(u) − u)/h`.
    pub fn increment(&mut self, u: &[Complex64], out: &mut [Complex64]) {
        self.deterministic_step(u, out);
        let inv_h = 1.0 / self.coeffs.h;
        for (o, &x) in out.iter_mut().zip(u) {
            *o = (*o - x) * inv_h;
        }
    }

    /// `u + h[R̂^h(u) + f̂]`; `force` may be shorter than `u` (unforced tail).
    pub fn forced_step(&mut self, u: &[Complex64], force: &[Complex64], out: &mut [Complex64]) {
        self.increment(u, out);
        forced_update(u, out, force, None, self.coeffs.h);
    }
}

/// In place on `incr` (holding `R̂`): `u + h[R̂ + f̂ + Φ]`.
pub(crate) fn forced_update(
    u: &[Complex64],
    incr: &mut [Complex64],
    force: &[Complex64],
    closure: Option<&[Complex64]>,
    h: f64,
) {
    let zero = Complex64::new(0.0, 0.0);
    for (k, (o, &x)) in incr.iter_mut().zip(u).enumerate() {
        let f = force.get(k).copied().unwrap_or(zero);
        let phi = closure.map_or(zero, |c| c[k]);
        *o = x + h * (*o + f + phi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn small_z_limit_is_rk4() {
        let c = precompute_etd(0.0, 3, 0.1);
        for k in 0..3 {
            assert_relative_eq!(c.f1[k], 0.1 / 6.0, max_relative = 1e-15);
            assert_relative_eq!(2.0 * c.f2[k], 0.1 / 3.0, max_relative = 1e-15);
            assert_relative_eq!(c.f3[k], 0.1 / 6.0, max_relative = 1e-15);
            assert_relative_eq!(c.q[k], 0.05, max_relative = 1e-15);
            assert_eq!(c.e[k], 1.0);
        }
    }

    #[test]
    fn large_z_decay() {
        // νk²h = 33 at k = 128
        let c = precompute_etd(0.02, 128, 33.0 / (0.02 * 128.0 * 128.0));
        assert!(c.e[127] <= 5e-15);
        assert!(c.f1.iter().chain(&c.f2).chain(&c.f3).all(|w| w.is_finite()));
    }

    #[test]
    fn contour_matches_dense_contour_at_unit_z() {
        let coarse = phi_functions(-1.0);
        let dense = phi_contour(-1.0, 0.5, 1024);
        for j in 0..3 {
            assert_relative_eq!(coarse[j], dense[j], max_relative = 1e-12);
        }
    }

    #[test]
    fn matches_closed_form_away_from_origin() {
        for &z in &[-2.0, -5.0, -16.4, -33.0, -200.0] {
            let got = phi_functions(z);
            let exact = phi_closed(Complex64::new(z, 0.0)).map(|w| w.re);
            for j in 0..3 {
                assert_relative_eq!(got[j], exact[j], max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn series_and_contour_agree_at_boundary() {
        for &z in &[-0.999_999, -1.000_001, -0.5] {
            let s = phi_series(z);
            let c = phi_contour(z, 0.5, 64);
            for j in 0..3 {
                assert_relative_eq!(s[j], c[j], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn heat_equation_is_exact() {
        let nu = 0.02;
        let h = 0.01;
        let mut stepper = GalerkinStepper::linear_only(nu, 16, h);
        let u0: Vec<Complex64> = (1..=16).map(|k| Complex64::new(1.0 / k as f64, 0.3)).collect();
        let mut u = u0.clone();
        let mut next = u.clone();
        for _ in 0..100 {
            stepper.deterministic_step(&u, &mut next);
            std::mem::swap(&mut u, &mut next);
        }
        for (k, (a, b)) in u.iter().zip(&u0).enumerate() {
            let kk = (k + 1) as f64;
            let exact = b * (-nu * kk * kk * 1.0).exp();
            assert!((a - exact).norm() <= 1e-12 * b.norm());
        }
    }
}
