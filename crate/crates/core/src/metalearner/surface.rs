use nalgebra::DMatrix;

use crate::{Error, Result};

/// Covariate rows for a one-dimensional cut of the F-CATE surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRows {
    /// Values taken by the varied covariate.
    pub values: Vec<f64>,
    pub rows: DMatrix<f64>,
}

fn is_binary(col: &[f64]) -> bool {
    col.iter().all(|&v| v == 0.0 || v == 1.0)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Vary covariate `column` over its empirical 1st–99th percentile range in
/// `points` steps (levels 0 and 1 if it is binary). Every other covariate is
/// held at its mode when binary and at its mean otherwise.
pub fn surface_rows(x: &DMatrix<f64>, column: usize, points: usize) -> Result<SurfaceRows> {
    let (n, p) = x.shape();
    if column >= p {
        return Err(Error::invalid(format!(
            "covariate {column} out of range (have {p})"
        )));
    }
    if n == 0 || points < 2 {
        return Err(Error::invalid("need data and at least two surface points"));
    }
    let base: Vec<f64> = (0..p)
        .map(|j| {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            if is_binary(&col) {
                let ones = col.iter().filter(|&&v| v == 1.0).count();
                if 2 * ones > n {
                    1.0
                } else {
                    0.0
                }
            } else {
                col.iter().sum::<f64>() / n as f64
            }
        })
        .collect();
    let target: Vec<f64> = x.column(column).iter().copied().collect();
    let values = if is_binary(&target) {
        vec![0.0, 1.0]
    } else {
        let mut sorted = target.clone();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (percentile(&sorted, 0.01), percentile(&sorted, 0.99));
        (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect()
    };
    let rows = DMatrix::from_fn(values.len(), p, |i, j| {
        if j == column {
            values[i]
        } else {
            base[j]
        }
    });
    Ok(SurfaceRows { values, rows })
}
