use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_dim, FeatureMap};
use crate::funcdata::{CurveSet, Grid};
use crate::{Error, Result};

/// Pointwise ridge regression: at every grid point `t`,
/// `Y(t) ≈ b₀(t) + Σⱼ bⱼ(t) fⱼ(x)`, all points sharing one factorisation.
/// The intercept is not penalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFos {
    grid: Grid,
    features: FeatureMap,
    lambda: f64,
    input_dim: usize,
    intercept: Vec<f64>,
    /// `p × T` coefficient curves, one row per feature.
    coefficients: DMatrix<f64>,
}

pub fn fit_fos_ridge(x: &DMatrix<f64>, y: &CurveSet, lambda: f64) -> Result<RidgeFos> {
    RidgeFos::fit(x, y, lambda, FeatureMap::Identity)
}

impl RidgeFos {
    pub fn fit(x: &DMatrix<f64>, y: &CurveSet, lambda: f64, features: FeatureMap) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} curves for {n} covariate rows",
                y.len()
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(
                "ridge penalty must be finite and non-negative",
            ));
        }
        let f = features.apply(x)?;
        let p = f.ncols();
        if lambda == 0.0 && n <= p {
            return Err(Error::RankDeficient(format!(
                "{n} rows cannot determine {p} slopes and an intercept without a penalty"
            )));
        }
        let nf = n as f64;
        let fmean: Vec<f64> = f.column_iter().map(|c| c.sum() / nf).collect();
        let fc = DMatrix::from_fn(n, p, |i, j| f[(i, j)] - fmean[j]);
        let yv = y.values();
        let ymean: Vec<f64> = yv.column_iter().map(|c| c.sum() / nf).collect();

        let mut gram = fc.transpose() * &fc;
        let scale = gram.diagonal().max().max(1.0);
        for j in 0..p {
            gram[(j, j)] += lambda;
        }
        let rhs = fc.transpose() * yv;
        let coefficients = if p == 0 {
            DMatrix::zeros(0, y.grid().len())
        } else {
            let chol = gram.clone().cholesky().ok_or_else(|| {
                Error::RankDeficient(
                    "design is rank deficient; use a positive ridge penalty".into(),
                )
            })?;
            let l = chol.l();
            let min_pivot = l
                .diagonal()
                .iter()
                .fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if lambda == 0.0 && min_pivot * min_pivot <= 1e-12 * scale {
                return Err(Error::RankDeficient(
                    "design is rank deficient; use a positive ridge penalty".into(),
                ));
            }
            chol.solve(&rhs)
        };
        let intercept = (0..y.grid().len())
            .map(|t| ymean[t] - (0..p).map(|j| fmean[j] * coefficients[(j, t)]).sum::<f64>())
            .collect();
        Ok(Self {
            grid: y.grid().clone(),
            features,
            lambda,
            input_dim: x.ncols(),
            intercept,
            coefficients,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn features(&self) -> FeatureMap {
        self.features
    }

    pub fn intercept(&self) -> &[f64] {
        &self.intercept
    }

    /// Coefficient curve of feature `j`.
    pub fn coefficient(&self, j: usize) -> Vec<f64> {
        self.coefficients.row(j).iter().copied().collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        let f = self.features.apply_row(x)?;
        Ok((0..self.grid.len())
            .map(|t| {
                self.intercept[t]
                    + f.iter()
                        .enumerate()
                        .map(|(j, v)| v * self.coefficients[(j, t)])
                        .sum::<f64>()
            })
            .collect())
    }

    pub fn predict_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim, x.ncols())?;
        let f = self.features.apply(x)?;
        let mut out = &f * &self.coefficients;
        for mut row in out.row_iter_mut() {
            for (t, v) in row.iter_mut().enumerate() {
                *v += self.intercept[t];
            }
        }
        Ok(out)
    }
}
