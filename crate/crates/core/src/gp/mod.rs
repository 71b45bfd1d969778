//! Matérn Gaussian processes on a grid.

mod bessel;

pub use bessel::{bessel_k, scaled_bessel_k};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::funcdata::{CurveSet, Grid};
use crate::{rng, Error, Result};

/// Stationary Matérn covariance
/// `C(d) = α² 2^{1-ν}/Γ(ν) · (√(2ν) d / l)^ν K_ν(√(2ν) d / l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternKernel {
    length_scale: f64,
    smoothness: f64,
    amplitude: f64,
}

impl MaternKernel {
    pub fn new(length_scale: f64, smoothness: f64, amplitude: f64) -> Result<Self> {
        for (name, v) in [
            ("length scale", length_scale),
            ("smoothness", smoothness),
            ("amplitude", amplitude),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "Matérn {name} must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            length_scale,
            smoothness,
            amplitude,
        })
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Marginal variance `α²`.
    pub fn variance(&self) -> f64 {
        self.amplitude * self.amplitude
    }

    /// `p` when `ν = p + 1/2` for a small non-negative integer `p`.
    fn half_integer_order(&self) -> Option<usize> {
        let twice = 2.0 * self.smoothness;
        let r = twice.round();
        if (twice - r).abs() < 1e-12 && r as i64 % 2 == 1 && r < 100.0 {
            Some(((r as usize) - 1) / 2)
        } else {
            None
        }
    }

    fn scaled_distance(&self, s: f64, t: f64) -> f64 {
        (2.0 * self.smoothness).sqrt() * (s - t).abs() / self.length_scale
    }

    /// Polynomial-times-exponential form, valid for half-integer `ν` only.
    pub fn closed_form(&self, s: f64, t: f64) -> Option<f64> {
        let p = self.half_integer_order()?;
        let r = self.scaled_distance(s, t);
        if r == 0.0 {
            return Some(self.variance());
        }
        // p!/(2p)! Σ_i (p+i)!/(i!(p-i)!) (2r)^{p-i}
        let ln_fact = |k: usize| ln_gamma(k as f64 + 1.0);
        let lead = ln_fact(p) - ln_fact(2 * p);
        let mut poly = 0.0;
        for i in 0..=p {
            let c = (ln_fact(p + i) - ln_fact(i) - ln_fact(p - i) + lead).exp();
            poly += c * (2.0 * r).powi((p - i) as i32);
        }
        Some(self.variance() * (-r).exp() * poly)
    }

    /// Evaluation through the modified Bessel function of the second kind;
    /// works for every `ν > 0`.
    pub fn via_bessel(&self, s: f64, t: f64) -> f64 {
        let r = self.scaled_distance(s, t);
        if r == 0.0 {
            return self.variance();
        }
        let nu = self.smoothness;
        let log_pre =
            2.0 * self.amplitude.ln() - ln_gamma(nu) - (nu - 1.0) * std::f64::consts::LN_2;
        scaled_bessel_k(nu, r, log_pre)
    }

    /// `C(s, t)`; closed form for half-integer `ν`, Bessel route otherwise.
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        self.closed_form(s, t)
            .unwrap_or_else(|| self.via_bessel(s, t))
    }

    /// Covariance matrix over arbitrary abscissae.
    pub fn covariance(&self, points: &[f64]) -> DMatrix<f64> {
        let n = points.len();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            c[(i, i)] = self.variance();
            for j in 0..i {
                let v = self.eval(points[i], points[j]);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        c
    }
}

/// `matern(kernel, s, t)`.
pub fn matern(kernel: &MaternKernel, s: f64, t: f64) -> f64 {
    kernel.eval(s, t)
}

pub fn covariance_matrix(kernel: &MaternKernel, grid: &Grid) -> DMatrix<f64> {
    kernel.covariance(grid.points())
}

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// Cholesky-factored Matérn process on a fixed grid.
#[derive(Debug, Clone)]
pub struct GpSampler {
    kernel: MaternKernel,
    grid: Grid,
    chol: DMatrix<f64>,
    jitter: f64,
}

impl GpSampler {
    /// Factor `C + jitter·I`, starting at `1e-12·α²` and escalating ×10 up to
    /// `1e-6·α²`.
    pub fn new(kernel: MaternKernel, grid: Grid) -> Result<Self> {
        let cov = covariance_matrix(&kernel, &grid);
        let var = kernel.variance();
        let n = grid.len();
        let mut rel = JITTER_START;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * var;
            let mut m = cov.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = m.cholesky() {
                return Ok(Self {
                    kernel,
                    grid,
                    chol: ch.l(),
                    jitter,
                });
            }
            rel *= 10.0;
        }
        let min_eigenvalue = SymmetricEigen::new(cov).eigenvalues.min();
        Err(Error::Cholesky {
            jitter: JITTER_MAX * var,
            min_eigenvalue,
        })
    }

    pub fn kernel(&self) -> &MaternKernel {
        &self.kernel
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `count` independent paths drawn from the stream keyed by `seed`.
    pub fn sample(&self, seed: u64, count: usize) -> Result<CurveSet> {
        let mut r = rng::stream(seed, &[]);
        self.sample_with(&mut r, count)
    }

    /// Draw `count` paths `L·ε`; each path consumes `T` standard normals.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<CurveSet> {
        if count == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let t = self.grid.len();
        let eps = DMatrix::from_fn(count, t, |_, _| 0.0);
        let mut eps = eps;
        for i in 0..count {
            for j in 0..t {
                eps[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let z = eps * self.chol.transpose();
        CurveSet::new(self.grid.clone(), z)
    }
}

/// Sample `count` paths for `kernel` on `grid` with the stream keyed by `seed`.
pub fn sample(sampler: &GpSampler, seed: u64, count: usize) -> Result<CurveSet> {
    sampler.sample(seed, count)
}
