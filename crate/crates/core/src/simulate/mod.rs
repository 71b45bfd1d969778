//! Synthetic benchmark with a known F-CATE.
//!
//! Four standard-normal covariates; treatment `A ~ Bernoulli(logit⁻¹(η·X))`;
//! potential outcomes
//! `Y⁽ᵃ⁾ = β₀ + Σⱼ βⱼ Xⱼ + a·β₅ X₁ + ε` with every `βⱼ` and the subject noise
//! `ε` drawn from Matérn processes on the outcome grid. The noise is shared by
//! both arms, so `Y⁽¹⁾ − Y⁽⁰⁾ = β₅ X₁` exactly and `θ*(x) = β₅ x₁`.

mod scenario;

pub use scenario::{
    armse, run_replication, run_scenario, run_scenario_resume, McReport, McRow, RowStatus,
    Scenario, ScenarioConfig, Summary, SummaryStats,
};

pub use crate::learners::z_transform;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::funcdata::{Curve, CurveSet, Grid};
use crate::gp::{GpSampler, MaternKernel};
use crate::metalearner::{Dataset, NuisanceOracle};
use crate::{rng, Error, Result};

/// Matérn parameters as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub length_scale: f64,
    pub smoothness: f64,
    pub amplitude: f64,
}

impl KernelParams {
    pub const fn new(length_scale: f64, smoothness: f64, amplitude: f64) -> Self {
        Self {
            length_scale,
            smoothness,
            amplitude,
        }
    }

    pub fn kernel(&self) -> Result<MaternKernel> {
        MaternKernel::new(self.length_scale, self.smoothness, self.amplitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Kernel for β₀ … β₄.
    #[serde(default = "default_coef_kernel")]
    pub coef_kernel: KernelParams,
    /// Kernel for the effect coefficient β₅.
    #[serde(default = "default_effect_kernel")]
    pub effect_kernel: KernelParams,
    #[serde(default = "default_noise_kernel")]
    pub noise_kernel: KernelParams,
    /// Propensity index weights on X₁ … X₄.
    #[serde(default = "default_eta")]
    pub eta: [f64; 4],
    #[serde(default)]
    pub seed: u64,
    /// Draw the β's from this seed instead of the dataset seed, so every
    /// replication shares one F-CATE surface.
    #[serde(default)]
    pub freeze_coefficients: Option<u64>,
}

fn default_n() -> usize {
    5000
}
fn default_grid_size() -> usize {
    100
}
fn default_coef_kernel() -> KernelParams {
    KernelParams::new(0.25, 5.5, 2.0)
}
fn default_effect_kernel() -> KernelParams {
    KernelParams::new(0.25, 5.5, 10.0)
}
fn default_noise_kernel() -> KernelParams {
    KernelParams::new(0.25, 5.5, 10.0)
}
fn default_eta() -> [f64; 4] {
    [-1.0, 0.5, -0.25, -0.1]
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            grid_size: default_grid_size(),
            coef_kernel: default_coef_kernel(),
            effect_kernel: default_effect_kernel(),
            noise_kernel: default_noise_kernel(),
            eta: default_eta(),
            seed: 0,
            freeze_coefficients: None,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if self.grid_size < 2 {
            return Err(Error::invalid("grid_size must be at least 2"));
        }
        self.coef_kernel.kernel()?;
        self.effect_kernel.kernel()?;
        self.noise_kernel.kernel()?;
        if self.eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("eta must be finite"));
        }
        Ok(())
    }
}

pub fn inv_logit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The coefficient curves β₀ … β₅ of one dataset, plus the treatment index.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub betas: Vec<Curve>,
    pub eta: [f64; 4],
}

impl Coefficients {
    pub fn draw(cfg: &DgpConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = Grid::uniform(cfg.grid_size)?;
        let seed = cfg.freeze_coefficients.unwrap_or(cfg.seed);
        let mut r = rng::stream(seed, &[rng::tag::COEFFICIENTS]);
        let coef = GpSampler::new(cfg.coef_kernel.kernel()?, grid.clone())?;
        let effect = GpSampler::new(cfg.effect_kernel.kernel()?, grid)?;
        let base = coef.sample_with(&mut r, 5)?;
        let b5 = effect.sample_with(&mut r, 1)?;
        let mut betas: Vec<Curve> = (0..5).map(|j| base.curve(j)).collect();
        betas.push(b5.curve(0));
        Ok(Self {
            betas,
            eta: cfg.eta,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.betas[0].grid()
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        inv_logit(self.eta.iter().zip(x).map(|(e, v)| e * v).sum())
    }

    /// `μ*⁽ᵃ⁾(x)`.
    pub fn outcome_mean(&self, treated: bool, x: &[f64]) -> Vec<f64> {
        let t = self.grid().len();
        (0..t)
            .map(|s| {
                let mut v = self.betas[0].values()[s];
                for j in 0..4 {
                    v += self.betas[j + 1].values()[s] * x[j];
                }
                if treated {
                    v += self.betas[5].values()[s] * x[0];
                }
                v
            })
            .collect()
    }

    /// `θ*(x) = β₅ x₁`.
    pub fn theta(&self, x: &[f64]) -> Vec<f64> {
        self.betas[5].values().iter().map(|b| b * x[0]).collect()
    }

    pub fn theta_many(&self, x: &DMatrix<f64>) -> Result<CurveSet> {
        let t = self.grid().len();
        let b5 = self.betas[5].values();
        CurveSet::new(
            self.grid().clone(),
            DMatrix::from_fn(x.nrows(), t, |i, s| b5[s] * x[(i, 0)]),
        )
    }

    /// Population FATE `E[θ*(X)] = β₅·E[X₁] = 0`.
    pub fn fate(&self) -> Vec<f64> {
        vec![0.0; self.grid().len()]
    }
}

/// Draw `n` rows of `N(0, I₄)` covariates.
pub fn draw_covariates<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, 4);
    for i in 0..n {
        for j in 0..4 {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    x
}

/// One simulated dataset with its counterfactuals and truth.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub coefficients: Coefficients,
    pub x: DMatrix<f64>,
    pub a: Vec<bool>,
    pub pi: Vec<f64>,
    pub noise: CurveSet,
    pub y0: CurveSet,
    pub y1: CurveSet,
    pub y: CurveSet,
}

impl SimTruth {
    /// Fresh subjects on the given coefficients, from the stream keyed by `seed`.
    pub fn sample(coefficients: Coefficients, cfg: &DgpConfig, seed: u64) -> Result<Self> {
        let n = cfg.n;
        let grid = coefficients.grid().clone();
        let t = grid.len();
        let x = draw_covariates(n, &mut rng::stream(seed, &[rng::tag::COVARIATES]));
        let mut ra = rng::stream(seed, &[rng::tag::TREATMENT]);
        let pi: Vec<f64> = (0..n)
            .map(|i| coefficients.propensity(&x.row(i).iter().copied().collect::<Vec<_>>()))
            .collect();
        let a: Vec<bool> = pi.iter().map(|&p| ra.random::<f64>() < p).collect();
        let noise_sampler = GpSampler::new(cfg.noise_kernel.kernel()?, grid.clone())?;
        let noise = noise_sampler.sample_with(&mut rng::stream(seed, &[rng::tag::NOISE]), n)?;

        let b = &coefficients.betas;
        let mut y0 = DMatrix::zeros(n, t);
        let mut y1 = DMatrix::zeros(n, t);
        let mut y = DMatrix::zeros(n, t);
        for i in 0..n {
            for s in 0..t {
                let mut m = b[0].values()[s];
                for j in 0..4 {
                    m += b[j + 1].values()[s] * x[(i, j)];
                }
                let v0 = m + noise.values()[(i, s)];
                let v1 = v0 + b[5].values()[s] * x[(i, 0)];
                y0[(i, s)] = v0;
                y1[(i, s)] = v1;
                y[(i, s)] = if a[i] { v1 } else { v0 };
            }
        }
        Ok(Self {
            coefficients,
            x,
            a,
            pi,
            noise,
            y0: CurveSet::new(grid.clone(), y0)?,
            y1: CurveSet::new(grid.clone(), y1)?,
            y: CurveSet::new(grid, y)?,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.coefficients.grid()
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(self.x.clone(), self.a.clone(), self.y.clone())
    }

    pub fn theta(&self, x: &[f64]) -> Vec<f64> {
        self.coefficients.theta(x)
    }

    /// True nuisance predictions at the sample: `(μ*⁽⁰⁾, μ*⁽¹⁾, π*)`.
    pub fn true_nuisances(&self) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
        let n = self.len();
        let t = self.grid().len();
        let mut mu0 = DMatrix::zeros(n, t);
        let mut mu1 = DMatrix::zeros(n, t);
        for i in 0..n {
            let row: Vec<f64> = self.x.row(i).iter().copied().collect();
            for (s, v) in self
                .coefficients
                .outcome_mean(false, &row)
                .into_iter()
                .enumerate()
            {
                mu0[(i, s)] = v;
            }
            for (s, v) in self
                .coefficients
                .outcome_mean(true, &row)
                .into_iter()
                .enumerate()
            {
                mu1[(i, s)] = v;
            }
        }
        (mu0, mu1, self.pi.clone())
    }
}

impl NuisanceOracle for Coefficients {
    fn propensity(&self, x: &[f64]) -> f64 {
        Coefficients::propensity(self, x)
    }

    fn outcome_mean(&self, treated: bool, x: &[f64]) -> Vec<f64> {
        Coefficients::outcome_mean(self, treated, x)
    }
}

impl NuisanceOracle for SimTruth {
    fn propensity(&self, x: &[f64]) -> f64 {
        self.coefficients.propensity(x)
    }

    fn outcome_mean(&self, treated: bool, x: &[f64]) -> Vec<f64> {
        self.coefficients.outcome_mean(treated, x)
    }
}

/// Draw the coefficients and one sample, deterministically from `cfg.seed`.
pub fn generate(cfg: &DgpConfig) -> Result<SimTruth> {
    let coefficients = Coefficients::draw(cfg)?;
    SimTruth::sample(coefficients, cfg, cfg.seed)
}
