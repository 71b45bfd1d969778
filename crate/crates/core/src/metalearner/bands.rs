use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FcateModel;
use crate::funcdata::Curve;
use crate::learners::CovEstimate;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMode {
    Pointwise,
    #[default]
    Simultaneous,
}

impl std::str::FromStr for BandMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointwise" => Ok(BandMode::Pointwise),
            "simultaneous" => Ok(BandMode::Simultaneous),
            other => Err(Error::invalid(format!("unknown band mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandOptions {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub mode: BandMode,
    /// Effective sample size; mean fold size when unset.
    #[serde(default)]
    pub n_eff: Option<f64>,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_draws() -> usize {
    1000
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            draws: default_draws(),
            mode: BandMode::Simultaneous,
            n_eff: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBand {
    pub center: Curve,
    pub lower: Curve,
    pub upper: Curve,
    /// Nominal coverage `1 - α`.
    pub level: f64,
    pub mode: BandMode,
    pub draws: usize,
    pub n_eff: f64,
}

impl ConfidenceBand {
    pub fn contains(&self, curve: &[f64]) -> bool {
        curve
            .iter()
            .zip(self.lower.values().iter().zip(self.upper.values()))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Fraction of grid points where `curve` is inside the band.
    pub fn pointwise_coverage(&self, curve: &[f64]) -> f64 {
        let hits = curve
            .iter()
            .zip(self.lower.values().iter().zip(self.upper.values()))
            .filter(|(v, (lo, hi))| **lo <= **v && **v <= **hi)
            .count();
        hits as f64 / curve.len() as f64
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.upper
            .values()
            .iter()
            .zip(self.center.values())
            .map(|(u, c)| u - c)
            .collect()
    }
}

/// Smallest sample value whose empirical CDF reaches `p`.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let k = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

/// Parametric bootstrap band around `center`.
///
/// Draws `Z_b ~ N(0, Σ̂)` and uses the symmetrised sample `{±Z_b}`, for which
/// the per-point `α/2` and `1 − α/2` quantiles are `∓` the `1 − α` quantile
/// of `|Z_b(t)|`.
///
/// - pointwise: `center ± q_t / √n_eff` with `q_t` that quantile at each `t`;
/// - simultaneous: `center ± q·σ̂(t) / √n_eff` with `q` the `1 − α` quantile
///   of `sup_t |Z_b(t)| / σ̂(t)`. Points with `σ̂(t) = 0` are left out of the
///   supremum and get zero width.
///
/// Both modes use the same draws for a given seed, so the simultaneous band
/// always contains the pointwise one.
pub fn bootstrap_band(
    center: &Curve,
    cov: &CovEstimate,
    n_eff: f64,
    alpha: f64,
    draws: usize,
    mode: BandMode,
    seed: u64,
) -> Result<ConfidenceBand> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    if draws < 200 {
        return Err(Error::invalid(format!(
            "need at least 200 bootstrap draws, got {draws}"
        )));
    }
    if !(n_eff > 0.0) {
        return Err(Error::invalid("effective sample size must be positive"));
    }
    let t = center.len();
    if cov.matrix.nrows() != t {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}×{} for a curve of {t} points",
            cov.matrix.nrows(),
            cov.matrix.ncols()
        )));
    }
    let factor = &cov.factor;
    let samples: Vec<DVector<f64>> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, &[rng::tag::BOOTSTRAP, b as u64]);
            let eps = DVector::from_fn(factor.ncols(), |_, _| r.sample::<f64, _>(StandardNormal));
            factor * eps
        })
        .collect();

    let sd: Vec<f64> = cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    let scale = n_eff.sqrt();
    let half: Vec<f64> = match mode {
        BandMode::Pointwise => (0..t)
            .map(|s| {
                let mut abs: Vec<f64> = samples.iter().map(|z| z[s].abs()).collect();
                abs.sort_by(f64::total_cmp);
                quantile(&abs, 1.0 - alpha)
            })
            .collect(),
        BandMode::Simultaneous => {
            let active: Vec<usize> = (0..t).filter(|&s| sd[s] > 0.0).collect();
            if active.len() < t {
                log::warn!(
                    "{} grid point(s) with zero estimated variance excluded from the sup statistic",
                    t - active.len()
                );
            }
            let q = if active.is_empty() {
                0.0
            } else {
                let mut sup: Vec<f64> = samples
                    .iter()
                    .map(|z| {
                        active
                            .iter()
                            .fold(0.0_f64, |m, &s| m.max(z[s].abs() / sd[s]))
                    })
                    .collect();
                sup.sort_by(f64::total_cmp);
                quantile(&sup, 1.0 - alpha)
            };
            sd.iter().map(|s| q * s).collect()
        }
    };
    let c = center.values();
    let lower: Vec<f64> = (0..t).map(|s| c[s] - half[s] / scale).collect();
    let upper: Vec<f64> = (0..t).map(|s| c[s] + half[s] / scale).collect();
    Ok(ConfidenceBand {
        center: center.clone(),
        lower: Curve::new(center.grid().clone(), lower)?,
        upper: Curve::new(center.grid().clone(), upper)?,
        level: 1.0 - alpha,
        mode,
        draws,
        n_eff,
    })
}

/// Band for `θ*(x)` from the fitted model's `θ̂(x)` and `Σ̂(x)`.
pub fn confidence_band(
    m: &FcateModel,
    x: &[f64],
    opts: &BandOptions,
    seed: u64,
) -> Result<ConfidenceBand> {
    let center = m.predict(x)?;
    let cov = m.cov().predict(x)?;
    let n_eff = opts.n_eff.unwrap_or_else(|| m.fold_n_eff());
    bootstrap_band(
        &center, &cov, n_eff, opts.alpha, opts.draws, opts.mode, seed,
    )
}
