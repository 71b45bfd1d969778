#[cfg(test)]
use nalgebra::DMatrix;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{BSplineBasis, Curve, Grid};
use crate::{Error, Result};

/// Penalised B-spline fit of one raw curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedCurve {
    pub basis: BSplineBasis,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub gcv_score: f64,
}

impl SmoothedCurve {
    pub fn eval(&self, t: f64) -> f64 {
        self.basis
            .eval(t, 0)
            .iter()
            .zip(&self.coefficients)
            .map(|(b, c)| b * c)
            .sum()
    }

    /// Evaluate the fit on a grid inside the basis span.
    pub fn on_grid(&self, grid: &Grid) -> Result<Curve> {
        if grid.first() < self.basis.lower() || grid.last() > self.basis.upper() {
            return Err(Error::invalid("evaluation grid exceeds the spline span"));
        }
        Curve::new(
            grid.clone(),
            grid.points().iter().map(|&t| self.eval(t)).collect(),
        )
    }
}

/// 50 log-spaced penalties in `[1e-8, 1e2]`.
pub fn default_lambda_grid() -> Vec<f64> {
    let (lo, hi) = (-8.0_f64, 2.0_f64);
    (0..50)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / 49.0))
        .collect()
}

/// Penalised least squares with the penalty selected by GCV.
pub fn smooth_gcv(raw: &Curve, basis: &BSplineBasis, lambda_grid: &[f64]) -> Result<SmoothedCurve> {
    let obs: Vec<(f64, f64)> = raw
        .grid()
        .points()
        .iter()
        .copied()
        .zip(raw.values().iter().copied())
        .collect();
    fit(&obs, basis, lambda_grid)
}

/// As [`smooth_gcv`], but missing values are skipped and only observed
/// points enter the fit.
pub fn smooth_gcv_partial(
    grid: &Grid,
    values: &[Option<f64>],
    basis: &BSplineBasis,
    lambda_grid: &[f64],
) -> Result<SmoothedCurve> {
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a grid of {} points",
            values.len(),
            grid.len()
        )));
    }
    let obs: Vec<(f64, f64)> = grid
        .points()
        .iter()
        .zip(values)
        .filter_map(|(&t, v)| v.map(|v| (t, v)))
        .collect();
    if obs.iter().any(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid("observed values must be finite"));
    }
    fit(&obs, basis, lambda_grid)
}

fn fit(obs: &[(f64, f64)], basis: &BSplineBasis, lambda_grid: &[f64]) -> Result<SmoothedCurve> {
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda grid must not be empty"));
    }
    if lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid("penalties must be finite and non-negative"));
    }
    let k = basis.len();
    if obs.len() < k {
        return Err(Error::invalid(format!(
            "{} observed points cannot determine {k} basis coefficients",
            obs.len()
        )));
    }
    if obs
        .iter()
        .any(|&(t, _)| t < basis.lower() || t > basis.upper())
    {
        return Err(Error::invalid("observations fall outside the spline span"));
    }
    let n = obs.len();
    let points: Vec<f64> = obs.iter().map(|o| o.0).collect();
    let y = DVector::from_iterator(n, obs.iter().map(|o| o.1));
    let design = basis.design(&points, 0);
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * &y;
    let pen = basis.penalty();

    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for &lambda in &lambdas {
        if lambda == 0.0 {
            let sv = design.clone().singular_values();
            let smax = sv.max();
            if sv.min() <= 1e-10 * smax {
                return Err(Error::RankDeficient(
                    "unpenalised spline design is rank deficient; use a positive penalty".into(),
                ));
            }
        }
        let system = &gram + &pen * lambda;
        let chol = system.cholesky().ok_or_else(|| {
            Error::RankDeficient(format!(
                "penalised normal equations singular at lambda={lambda:e}"
            ))
        })?;
        let coef = chol.solve(&rhs);
        let resid = &y - &design * &coef;
        let rss = resid.norm_squared();
        let trace = chol.solve(&gram).trace();
        let denom = n as f64 - trace;
        let score = if denom > 1e-10 {
            n as f64 * rss / (denom * denom)
        } else {
            f64::INFINITY
        };
        let better = match &best {
            None => true,
            Some((_, s, _)) => score < *s,
        };
        if better {
            best = Some((lambda, score, coef));
        }
    }
    let (lambda, gcv_score, coef) = best.expect("non-empty lambda grid");
    Ok(SmoothedCurve {
        basis: basis.clone(),
        coefficients: coef.iter().copied().collect(),
        lambda,
        gcv_score,
    })
}

/// Hat-matrix smoother for a fixed penalty, used by the linearity checks.
#[cfg(test)]
pub(crate) fn smoother_matrix(
    points: &[f64],
    basis: &BSplineBasis,
    lambda: f64,
) -> Option<DMatrix<f64>> {
    let design = basis.design(points, 0);
    let system = design.transpose() * &design + basis.penalty() * lambda;
    let chol = system.cholesky()?;
    Some(&design * chol.solve(&design.transpose()))
}
