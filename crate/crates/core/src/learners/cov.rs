use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_dim, Standardizer};
use crate::funcdata::{CurveSet, Grid};
use crate::{Error, Result};

/// Conditional covariance of residual curves by k-nearest-neighbour
/// averaging of outer products.
///
/// Neighbours are found by Euclidean distance on standardised covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovModel {
    k: usize,
    grid: Grid,
    std: Standardizer,
    x: DMatrix<f64>,
    /// Residual curves `Dᵢ - θ̂(Xᵢ)`, `n × T`.
    residuals: DMatrix<f64>,
}

/// `Σ̂(x)` together with a square-root factor `F` with `F Fᵀ = Σ̂(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    pub matrix: DMatrix<f64>,
    pub factor: DMatrix<f64>,
}

impl CovEstimate {
    pub fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().copied().collect()
    }

    /// Symmetrise, clip negative eigenvalues at zero and factor.
    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        let sym = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&clipped.map(f64::sqrt));
        let matrix = &factor * factor.transpose();
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Self { matrix, factor }
    }
}

pub fn fit_cov_knn(
    x: &DMatrix<f64>,
    d: &CurveSet,
    theta_at_x: &CurveSet,
    k: usize,
) -> Result<CovModel> {
    CovModel::fit(x, d, theta_at_x, k)
}

impl CovModel {
    pub fn fit(x: &DMatrix<f64>, d: &CurveSet, theta_at_x: &CurveSet, k: usize) -> Result<Self> {
        let n = x.nrows();
        if d.len() != n || theta_at_x.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} difference curves and {} fitted curves for {n} rows",
                d.len(),
                theta_at_x.len()
            )));
        }
        if d.grid() != theta_at_x.grid() {
            return Err(Error::DimensionMismatch("curve grids differ".into()));
        }
        if k == 0 || k > n {
            return Err(Error::invalid(format!(
                "neighbour count {k} must lie in 1..={n}"
            )));
        }
        Ok(Self {
            k,
            grid: d.grid().clone(),
            std: Standardizer::fit(x),
            x: x.clone(),
            residuals: d.values() - theta_at_x.values(),
        })
    }

    /// Default neighbour count `max(50, n / 10)`, capped at `n`.
    pub fn default_k(n: usize) -> usize {
        50.max(n / 10).min(n)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    /// Indices of the `k` nearest training rows, ties broken by index.
    pub fn neighbours(&self, x: &[f64]) -> Result<Vec<usize>> {
        check_dim(self.x.ncols(), x.len())?;
        let q = self.std.apply_row(x);
        let mut dist: Vec<(f64, usize)> = (0..self.x.nrows())
            .map(|i| {
                let d2: f64 = (0..q.len())
                    .map(|j| {
                        let v = (self.x[(i, j)] - self.std.mean[j]) / self.std.scale[j] - q[j];
                        v * v
                    })
                    .sum();
                (d2, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        dist.sort_by(cmp);
        Ok(dist.into_iter().map(|(_, i)| i).collect())
    }

    /// `Σ̂(x)`: mean of `rᵢ rᵢᵀ` over the neighbours of `x`.
    pub fn predict(&self, x: &[f64]) -> Result<CovEstimate> {
        let idx = self.neighbours(x)?;
        let r = self.residuals.select_rows(idx.iter());
        let m = r.transpose() * &r / idx.len() as f64;
        Ok(CovEstimate::from_matrix(m))
    }
}
