//! Grid-sampled functional data on the unit interval.

mod bspline;
pub mod csv;
mod smooth;

pub use bspline::BSplineBasis;
pub use smooth::{default_lambda_grid, smooth_gcv, smooth_gcv_partial, SmoothedCurve};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Strictly increasing abscissae inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("grid points must be finite"));
        }
        if points[0] < 0.0 || points[points.len() - 1] > 1.0 {
            return Err(Error::invalid("grid must lie inside [0, 1]"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid must be strictly increasing"));
        }
        Ok(Self { points })
    }

    /// `len` equispaced points from 0 to 1 inclusive.
    pub fn uniform(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::invalid("uniform grid needs at least 2 points"));
        }
        let step = 1.0 / (len - 1) as f64;
        let mut points: Vec<f64> = (0..len).map(|i| i as f64 * step).collect();
        points[len - 1] = 1.0;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Trapezoidal quadrature weights; `Σ wᵢ f(tᵢ) ≈ ∫ f`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let t = &self.points;
        let n = t.len();
        let mut w = vec![0.0; n];
        for i in 0..n - 1 {
            let h = 0.5 * (t[i + 1] - t[i]);
            w[i] += h;
            w[i + 1] += h;
        }
        w
    }

    /// Trapezoidal integral of sampled values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let t = &self.points;
        (0..t.len() - 1)
            .map(|i| 0.5 * (t[i + 1] - t[i]) * (values[i] + values[i + 1]))
            .sum()
    }

    /// L² norm of sampled values.
    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        let t = &self.points;
        let sq: f64 = (0..t.len() - 1)
            .map(|i| {
                0.5 * (t[i + 1] - t[i]) * (values[i] * values[i] + values[i + 1] * values[i + 1])
            })
            .sum();
        sq.max(0.0).sqrt()
    }

    /// L² distance between two sampled functions.
    pub fn l2_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.l2_norm(&diff)
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Grid::new(points)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.points
    }
}

/// A single function sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    grid: Grid,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "curve has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("curve values must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(self)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, alpha: f64) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// Pointwise sum; grids must agree.
    pub fn add(&self, other: &Curve) -> Result<Curve> {
        if self.grid != other.grid {
            return Err(Error::DimensionMismatch(
                "curves live on different grids".into(),
            ));
        }
        Curve::new(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        self.add(&other.scaled(-1.0))
    }
}

/// Trapezoidal approximation of `sqrt(∫ f(t)² dt)`.
pub fn l2_norm(c: &Curve) -> f64 {
    c.grid.l2_norm(&c.values)
}

/// Linear interpolation of `c` onto `target`; exact at shared abscissae.
pub fn resample(c: &Curve, target: &Grid) -> Result<Curve> {
    let src = c.grid.points();
    let (lo, hi) = (c.grid.first(), c.grid.last());
    if target.first() < lo || target.last() > hi {
        return Err(Error::invalid(format!(
            "cannot extrapolate: target spans [{}, {}] but source spans [{lo}, {hi}]",
            target.first(),
            target.last()
        )));
    }
    let mut values = Vec::with_capacity(target.len());
    let mut k = 0;
    for &t in target.points() {
        while k + 2 < src.len() && src[k + 1] < t {
            k += 1;
        }
        let (t0, t1) = (src[k], src[k + 1]);
        let v = if t == t0 {
            c.values[k]
        } else if t == t1 {
            c.values[k + 1]
        } else {
            let w = (t - t0) / (t1 - t0);
            (1.0 - w) * c.values[k] + w * c.values[k + 1]
        };
        values.push(v);
    }
    Curve::new(target.clone(), values)
}

/// `n` curves sharing one grid, stored row-wise in an `n × T` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    grid: Grid,
    values: DMatrix<f64>,
}

impl CurveSet {
    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::invalid("curve set must contain at least one curve"));
        }
        if values.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "curve set has {} columns for a grid of {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("curve values must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn from_curves(curves: &[Curve]) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::invalid("curve set must contain at least one curve"))?;
        let grid = first.grid.clone();
        if curves.iter().any(|c| c.grid != grid) {
            return Err(Error::DimensionMismatch(
                "curves live on different grids".into(),
            ));
        }
        let values = DMatrix::from_fn(curves.len(), grid.len(), |i, j| curves[i].values[j]);
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Number of curves.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn curve(&self, i: usize) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.row(i),
        }
    }

    pub fn norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.grid.l2_norm(&self.row(i)))
            .collect()
    }

    /// Pointwise mean curve.
    pub fn mean(&self) -> Curve {
        let n = self.len() as f64;
        let values = self.values.row_sum().iter().map(|s| s / n).collect();
        Curve {
            grid: self.grid.clone(),
            values,
        }
    }

    /// Subset of rows in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<CurveSet> {
        CurveSet::new(self.grid.clone(), self.values.select_rows(rows.iter()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_validation() {
        assert!(Grid::new(vec![0.0]).is_err());
        assert!(Grid::new(vec![0.0, 0.0]).is_err());
        assert!(Grid::new(vec![-0.1, 0.5]).is_err());
        assert!(Grid::new(vec![0.5, 1.1]).is_err());
        assert!(Grid::new(vec![0.2, 0.7]).is_ok());
        let g = Grid::uniform(5).unwrap();
        assert_eq!(g.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn curve_rejects_non_finite() {
        let g = Grid::uniform(3).unwrap();
        assert!(Curve::new(g.clone(), vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(Curve::new(g, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn norm_of_zero_and_unit() {
        let g = Grid::new(vec![0.0, 0.1, 0.35, 0.9, 1.0]).unwrap();
        assert_eq!(Curve::from_fn(g, |_| 0.0).unwrap().l2_norm(), 0.0);
        let u = Grid::uniform(37).unwrap();
        let one = Curve::from_fn(u, |_| 1.0).unwrap();
        assert!((one.l2_norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn norm_of_identity_function() {
        // Trapezoid error for t² on h = 0.01 is h²/6 ≈ 1.7e-5 in the squared norm.
        let g = Grid::uniform(101).unwrap();
        let c = Curve::from_fn(g, |t| t).unwrap();
        assert!((c.l2_norm() - (1.0f64 / 3.0).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn resample_examples() {
        let g = Grid::new(vec![0.0, 0.3, 0.55, 1.0]).unwrap();
        let c = Curve::new(g.clone(), vec![3.0, -1.0, 2.0, 0.5]).unwrap();
        assert_eq!(resample(&c, &g).unwrap(), c);

        let id = Curve::from_fn(g, |t| t).unwrap();
        let target = Grid::new(vec![0.01, 0.2, 0.31, 0.77, 0.999]).unwrap();
        let r = resample(&id, &target).unwrap();
        for (v, t) in r.values().iter().zip(target.points()) {
            assert!((v - t).abs() < 1e-12);
        }

        let two = Curve::new(Grid::new(vec![0.0, 1.0]).unwrap(), vec![0.0, 1.0]).unwrap();
        let q = resample(&two, &Grid::new(vec![0.25, 0.5]).unwrap()).unwrap();
        assert_eq!(q.values()[0], 0.25);
    }

    #[test]
    fn resample_refuses_extrapolation() {
        let c = Curve::new(Grid::new(vec![0.2, 0.8]).unwrap(), vec![0.0, 1.0]).unwrap();
        assert!(resample(&c, &Grid::new(vec![0.1, 0.5]).unwrap()).is_err());
        assert!(resample(&c, &Grid::new(vec![0.5, 0.9]).unwrap()).is_err());
    }

    fn curve_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0..100.0f64, 25)
    }

    proptest! {
        #[test]
        fn norm_is_homogeneous(v in curve_strategy(), alpha in -50.0..50.0f64) {
            let g = Grid::uniform(25).unwrap();
            let c = Curve::new(g, v).unwrap();
            let lhs = c.scaled(alpha).l2_norm();
            let rhs = alpha.abs() * c.l2_norm();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
        }

        #[test]
        fn norm_triangle_inequality(a in curve_strategy(), b in curve_strategy()) {
            let g = Grid::uniform(25).unwrap();
            let f = Curve::new(g.clone(), a).unwrap();
            let h = Curve::new(g, b).unwrap();
            prop_assert!(f.add(&h).unwrap().l2_norm() <= f.l2_norm() + h.l2_norm() + 1e-10);
        }
    }
}
