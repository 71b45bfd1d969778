use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Clamped B-spline basis on `[lower, upper]`.
///
/// The knot vector repeats each boundary `degree + 1` times, so the basis has
/// `interior.len() + degree + 1` functions and sums to one on the whole span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(degree: usize, interior: &[f64], lower: f64, upper: f64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::invalid("spline degree must be at least 1"));
        }
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::invalid(
                "spline span must be a finite, non-empty interval",
            ));
        }
        if interior.iter().any(|&k| !(k > lower && k < upper)) {
            return Err(Error::invalid(
                "interior knots must lie strictly inside the span",
            ));
        }
        if interior.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("interior knots must be strictly increasing"));
        }
        let mut knots = vec![lower; degree + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(upper, degree + 1));
        Ok(Self { degree, knots })
    }

    /// `n_interior` equispaced interior knots.
    pub fn uniform(degree: usize, n_interior: usize, lower: f64, upper: f64) -> Result<Self> {
        let h = (upper - lower) / (n_interior + 1) as f64;
        let interior: Vec<f64> = (1..=n_interior).map(|i| lower + i as f64 * h).collect();
        Self::new(degree, &interior, lower, upper)
    }

    /// Cubic basis with a knot at every observation time.
    pub fn cubic_at(points: &[f64]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("need at least two observation times"));
        }
        let (lo, hi) = (points[0], points[points.len() - 1]);
        Self::new(3, &points[1..points.len() - 1], lo, hi)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Values of the `deriv`-th derivative of every basis function at `t`.
    pub fn eval(&self, t: f64, deriv: usize) -> Vec<f64> {
        let p = self.degree;
        let u = &self.knots;
        let k = self.len();
        if deriv > p {
            return vec![0.0; k];
        }
        let base = p - deriv;
        let m = u.len();

        // Degree-0 indicators; the right end belongs to the last non-empty span.
        let mut cur = vec![0.0; m - 1];
        if t >= self.lower() && t <= self.upper() {
            let span = if t >= self.upper() {
                (0..m - 1).rev().find(|&i| u[i] < u[i + 1]).unwrap()
            } else {
                (0..m - 1).find(|&i| u[i] <= t && t < u[i + 1]).unwrap()
            };
            cur[span] = 1.0;
        }
        for q in 1..=base {
            let mut next = vec![0.0; m - 1 - q];
            for (i, slot) in next.iter_mut().enumerate() {
                let mut v = 0.0;
                let d1 = u[i + q] - u[i];
                if d1 > 0.0 {
                    v += (t - u[i]) / d1 * cur[i];
                }
                let d2 = u[i + q + 1] - u[i + 1];
                if d2 > 0.0 {
                    v += (u[i + q + 1] - t) / d2 * cur[i + 1];
                }
                *slot = v;
            }
            cur = next;
        }
        for s in base + 1..=p {
            let mut next = vec![0.0; m - 1 - s];
            for (i, slot) in next.iter_mut().enumerate() {
                let mut v = 0.0;
                let d1 = u[i + s] - u[i];
                if d1 > 0.0 {
                    v += s as f64 / d1 * cur[i];
                }
                let d2 = u[i + s + 1] - u[i + 1];
                if d2 > 0.0 {
                    v -= s as f64 / d2 * cur[i + 1];
                }
                *slot = v;
            }
            cur = next;
        }
        debug_assert_eq!(cur.len(), k);
        cur
    }

    /// `points.len() × K` matrix of basis derivatives of order `deriv`.
    pub fn design(&self, points: &[f64], deriv: usize) -> DMatrix<f64> {
        let k = self.len();
        let mut out = DMatrix::zeros(points.len(), k);
        for (r, &t) in points.iter().enumerate() {
            for (c, v) in self.eval(t, deriv).into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        out
    }

    /// Roughness penalty `P[k, l] = ∫ B_k''(t) B_l''(t) dt`.
    ///
    /// Second derivatives are piecewise polynomials of degree `degree - 2`,
    /// so Gauss-Legendre with `degree` nodes per knot span is exact.
    pub fn penalty(&self) -> DMatrix<f64> {
        let k = self.len();
        let mut pen = DMatrix::zeros(k, k);
        if self.degree < 2 {
            return pen;
        }
        let (nodes, weights) = gauss_legendre(self.degree.max(2));
        let u = &self.knots;
        for w in u.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, wt) in nodes.iter().zip(&weights) {
                let d2 = self.eval(mid + half * x, 2);
                let scale = wt * half;
                for i in 0..k {
                    if d2[i] == 0.0 {
                        continue;
                    }
                    for j in 0..k {
                        pen[(i, j)] += scale * d2[i] * d2[j];
                    }
                }
            }
        }
        pen
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}
