//! Nuisance and third-stage learners.
//!
//! Every learner sees covariates through a [`FeatureMap`], which is how the
//! misspecification scenarios are injected without touching the learners.

mod cov;
mod mlp;
mod propensity;
mod ridge;

pub use cov::{fit_cov_knn, CovEstimate, CovModel};
pub use mlp::{fit_fos_mlp, Activation, Init, Mlp, MlpConfig, MlpFos};
pub use propensity::{fit_propensity, PropensityConfig, PropensityModel};
pub use ridge::{fit_fos_ridge, RidgeFos};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::funcdata::{CurveSet, Grid};
use crate::{Error, Result};

/// Covariate transformation applied before any learner sees the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// The covariates themselves.
    #[default]
    Identity,
    /// The non-linear map `Z(X)` of four covariates.
    Misspecified,
}

impl FeatureMap {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            FeatureMap::Identity => input_dim,
            FeatureMap::Misspecified => 4,
        }
    }

    pub fn apply_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            FeatureMap::Identity => Ok(x.to_vec()),
            FeatureMap::Misspecified => {
                let x: &[f64; 4] = x.try_into().map_err(|_| {
                    Error::DimensionMismatch(format!(
                        "the Z feature map needs 4 covariates, got {}",
                        x.len()
                    ))
                })?;
                Ok(z_row(x).to_vec())
            }
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            FeatureMap::Identity => Ok(x.clone()),
            FeatureMap::Misspecified => z_transform(x),
        }
    }
}

/// `Z₁ = exp(X₁/2)`, `Z₂ = X₂/(1+exp(X₁)) + 10`, `Z₃ = (X₁X₃/25 + 0.6)³`,
/// `Z₄ = (X₂ + X₄ + 20)²`.
pub fn z_row(x: &[f64; 4]) -> [f64; 4] {
    let [x1, x2, x3, x4] = *x;
    [
        (x1 / 2.0).exp(),
        x2 / (1.0 + x1.exp()) + 10.0,
        (x1 * x3 / 25.0 + 0.6).powi(3),
        (x2 + x4 + 20.0).powi(2),
    ]
}

/// Row-wise [`z_row`] over an `n × 4` matrix.
pub fn z_transform(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "z_transform needs 4 columns, got {}",
            x.ncols()
        )));
    }
    let mut out = DMatrix::zeros(x.nrows(), 4);
    for i in 0..x.nrows() {
        let z = z_row(&[x[(i, 0)], x[(i, 1)], x[(i, 2)], x[(i, 3)]]);
        for j in 0..4 {
            out[(i, j)] = z[j];
        }
    }
    Ok(out)
}

/// Column means and standard deviations; a constant column gets scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 1e-24 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.scale[j]
        })
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[j]) / self.scale[j])
            .collect()
    }
}

/// Hyperparameters for a function-on-scalar learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FosLearner {
    Ridge {
        #[serde(default = "default_ridge_lambda")]
        lambda: f64,
    },
    Mlp(MlpConfig),
}

fn default_ridge_lambda() -> f64 {
    1e-6
}

impl Default for FosLearner {
    fn default() -> Self {
        FosLearner::Ridge {
            lambda: default_ridge_lambda(),
        }
    }
}

impl FosLearner {
    pub fn fit(
        &self,
        x: &DMatrix<f64>,
        y: &CurveSet,
        features: FeatureMap,
        seed: u64,
    ) -> Result<FosModel> {
        match self {
            FosLearner::Ridge { lambda } => {
                RidgeFos::fit(x, y, *lambda, features).map(FosModel::Ridge)
            }
            FosLearner::Mlp(cfg) => MlpFos::fit(x, y, cfg, features, seed).map(FosModel::Mlp),
        }
    }
}

/// A fitted function-on-scalar regressor: covariate row ↦ curve on the
/// training grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FosModel {
    Ridge(RidgeFos),
    Mlp(MlpFos),
}

impl FosModel {
    pub fn grid(&self) -> &Grid {
        match self {
            FosModel::Ridge(m) => m.grid(),
            FosModel::Mlp(m) => m.grid(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FosModel::Ridge(m) => m.input_dim(),
            FosModel::Mlp(m) => m.input_dim(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            FosModel::Ridge(m) => m.predict(x),
            FosModel::Mlp(m) => m.predict(x),
        }
    }

    /// Predictions for every row of `x`, as an `n × T` matrix.
    pub fn predict_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            FosModel::Ridge(m) => m.predict_many(x),
            FosModel::Mlp(m) => m.predict_many(x),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch(format!(
            "expected {expected} covariates, got {got}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_at_origin() {
        let z = z_row(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(z[0], 1.0);
        assert_eq!(z[1], 10.0);
        assert!((z[2] - 0.216).abs() < 1e-15);
        assert_eq!(z[3], 400.0);
    }

    #[test]
    fn z2_asymptote() {
        let z = z_row(&[-40.0, 3.0, 0.0, 0.0]);
        assert!((z[1] - 13.0).abs() < 1e-12);
    }

    #[test]
    fn z1_monotone() {
        let xs: Vec<f64> = (0..200).map(|i| -5.0 + i as f64 * 0.05).collect();
        let z1: Vec<f64> = xs.iter().map(|&x| z_row(&[x, 0.3, -0.2, 1.0])[0]).collect();
        assert!(z1.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn z_transform_requires_four_columns() {
        assert!(z_transform(&DMatrix::zeros(3, 5)).is_err());
        assert!(FeatureMap::Misspecified.apply_row(&[1.0, 2.0]).is_err());
        let m = DMatrix::from_row_slice(1, 4, &[0.5, -1.0, 2.0, 0.1]);
        let z = z_transform(&m).unwrap();
        let r = z_row(&[0.5, -1.0, 2.0, 0.1]);
        for j in 0..4 {
            assert_eq!(z[(0, j)], r[j]);
        }
    }

    #[test]
    fn fos_learner_config_roundtrip() {
        let j = r#"{"kind":"ridge","lambda":0.5}"#;
        let l: FosLearner = serde_json::from_str(j).unwrap();
        assert_eq!(l, FosLearner::Ridge { lambda: 0.5 });
        assert!(serde_json::from_str::<FosLearner>(r#"{"kind":"ridge","lamda":0.5}"#).is_err());
    }
}
